// Copyright 2025 the clearlab authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "clearlab/attention.hpp"
#include "clearlab/distill.hpp"
#include "clearlab/flops.hpp"
#include "clearlab/patch_parallel.hpp"
#include "clearlab/report.hpp"

using namespace clearlab;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitRuntimeError = 3;

std::vector<std::string> apply_config_file(int argc, char **argv) {
    // precedence: explicit flags > config-file values > built-in defaults.
    // The file is flat JSON {"flag": value}; keys that are not valid flags
    // are rejected by the parser downstream.
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string config_path;
    for (size_t i = 0; i + 1 < args.size(); ++i) {
        if (args[i] == "--config") {
            config_path = args[i + 1];
            args.erase(args.begin() + ptrdiff_t(i), args.begin() + ptrdiff_t(i) + 2);
            break;
        }
    }
    if (config_path.empty()) return args;
    std::ifstream f(config_path);
    CLEARLAB_CHECK(f.good(), "cannot open config file: " + config_path);
    json cfg = json::parse(f);
    CLEARLAB_CHECK(cfg.is_object(), "config file must hold a JSON object");
    for (auto it = cfg.begin(); it != cfg.end(); ++it) {
        const std::string flag = "--" + it.key();
        bool present = false;
        for (const auto &a : args)
            if (a == flag || a.rfind(flag + "=", 0) == 0) present = true;
        if (present) continue; // explicit flag wins
        std::string value =
            it.value().is_string() ? it.value().get<std::string>() : it.value().dump();
        args.push_back(flag);
        args.push_back(value);
    }
    return args;
}

TokenGrid make_grid(size_t n_text, size_t h, size_t w) { return TokenGrid(n_text, h, w); }

AttentionMask build_mask(const std::string &method, const TokenGrid &grid, double r,
                         int64_t half_width, int64_t window, int64_t shift, int64_t stride,
                         size_t layer) {
    if (method == "full") return build_full(grid);
    if (method == "clear") return build_clear(grid, r);
    if (method == "neighborhood") return build_neighborhood(grid, half_width);
    if (method == "swin") return build_swin(grid, window, shift, layer);
    if (method == "strided") return build_strided(grid, stride, layer);
    throw CheckError("unknown mask method: " + method);
}

struct MaskArgs {
    size_t height = 8, width = 8, n_text = 0;
    std::string method = "clear";
    double r = 2.0;
    int64_t half_width = 1, window = 4, shift = 0, stride = 2;
    size_t layer = 0;

    void attach(CLI::App *cmd) {
        cmd->add_option("--H", height, "grid height");
        cmd->add_option("--W", width, "grid width");
        cmd->add_option("--n-text", n_text, "text token count");
        cmd->add_option("--method", method, "full|clear|neighborhood|swin|strided")
            ->check(CLI::IsMember({"full", "clear", "neighborhood", "swin", "strided"}));
        cmd->add_option("--r", r, "circular window radius");
        cmd->add_option("--half-width", half_width, "neighborhood half width");
        cmd->add_option("--window", window, "swin window size");
        cmd->add_option("--shift", shift, "swin shift on odd layers");
        cmd->add_option("--stride", stride, "strided sampling interval");
        cmd->add_option("--layer", layer, "layer index for swin/strided");
    }

    json to_json() const {
        return {{"H", height},         {"W", width},   {"n_text", n_text}, {"method", method},
                {"r", r},              {"half_width", half_width}, {"window", window},
                {"shift", shift},      {"stride", stride},         {"layer", layer}};
    }

    void validate() const {
        CLEARLAB_CHECK(height > 0 && width > 0, "grid must have positive extent");
        if (method == "clear") CLEARLAB_CHECK(r > 0.0, "clear radius must be positive");
        if (method == "neighborhood")
            CLEARLAB_CHECK(half_width >= 0, "neighborhood half_width must be >= 0");
        if (method == "swin") {
            CLEARLAB_CHECK(window >= 1, "swin window must be >= 1");
            CLEARLAB_CHECK(shift >= 0 && shift < window, "swin shift must satisfy 0 <= shift < window");
        }
        if (method == "strided") {
            CLEARLAB_CHECK(stride >= 1, "stride must be >= 1");
            CLEARLAB_CHECK(int64_t(layer) / stride < stride,
                           "strided layer offset out of range (layer / r >= r)");
        }
    }
};

struct ModelArgs {
    size_t height = 8, width = 8, n_text = 4;
    size_t model_width = 64, heads = 4, blocks = 4, classes = 4, latent = 4;
    double r = 3.0;
    uint64_t seed = 0;

    void attach(CLI::App *cmd) {
        cmd->add_option("--H", height, "grid height");
        cmd->add_option("--W", width, "grid width");
        cmd->add_option("--n-text", n_text, "text token count");
        cmd->add_option("--width", model_width, "model feature width");
        cmd->add_option("--heads", heads, "attention heads");
        cmd->add_option("--blocks", blocks, "transformer blocks");
        cmd->add_option("--classes", classes, "condition classes");
        cmd->add_option("--latent", latent, "latent channels per image token");
        cmd->add_option("--r", r, "circular window radius for the student");
        cmd->add_option("--seed", seed, "rng seed");
    }

    ToyDitConfig config() const {
        ToyDitConfig cfg;
        cfg.grid_h = height;
        cfg.grid_w = width;
        cfg.n_text = n_text;
        cfg.width = model_width;
        cfg.heads = heads;
        cfg.blocks = blocks;
        cfg.n_classes = classes;
        cfg.latent_dim = latent;
        return cfg;
    }

    json to_json() const {
        return {{"H", height},   {"W", width},   {"n_text", n_text},   {"width", model_width},
                {"heads", heads}, {"blocks", blocks}, {"classes", classes},
                {"latent", latent}, {"r", r},     {"seed", seed}};
    }
};

void write_text(const std::string &path, const std::string &content) {
    std::ofstream f(path, std::ios::binary);
    CLEARLAB_CHECK(f.good(), "cannot open output file: " + path);
    f << content;
    CLEARLAB_CHECK(f.good(), "write failed: " + path);
}

Report ledger_report(const std::vector<LedgerEntry> &entries, const json &cfg) {
    Report rep;
    rep.config_json = cfg.dump();
    rep.columns = {"step", "layer", "sender", "receiver", "kind", "token_count", "direction"};
    for (const auto &e : entries)
        rep.add_row({std::to_string(e.step), std::to_string(e.layer), std::to_string(e.sender),
                     std::to_string(e.receiver), msg_kind_name(e.kind),
                     std::to_string(e.token_count), e.received ? "received" : "sent"});
    return rep;
}

// ---------------------------------------------------------------- mask ----

int run_mask(const MaskArgs &a, bool stats, const std::string &out, const std::string &pbm) {
    TokenGrid grid = make_grid(a.n_text, a.height, a.width);
    AttentionMask mask =
        build_mask(a.method, grid, a.r, a.half_width, a.window, a.shift, a.stride, a.layer);
    json j = a.to_json();
    j["command"] = "mask";
    j["n"] = mask.n();
    j["popcount"] = mask.popcount();
    j["sparsity"] = mask.sparsity();
    if (grid.n_image() > 0)
        j["corner_image_row_popcount"] = mask.row_popcount(grid.n_text); // raster (0,0)
    if (stats) {
        MaskStats s = mask_stats(mask);
        j["image_rank"] = s.image_rank;
        j["image_rank_exact"] = s.image_rank_exact;
    }
    if (!out.empty()) mask.save(out);
    if (!pbm.empty()) {
        std::ofstream f(pbm);
        CLEARLAB_CHECK(f.good(), "cannot open pbm file: " + pbm);
        mask.write_pbm(f);
    }
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

// --------------------------------------------------------------- flops ----

int run_flops(const std::string &preset, uint64_t c, uint64_t n_text,
              std::vector<uint64_t> resolutions, std::vector<double> radii,
              const std::string &out, const std::string &format) {
    FluxConfig cfg;
    if (preset == "flux") {
        cfg = FluxConfig{};
    } else {
        cfg.feature_dim = c;
        cfg.n_text = n_text;
    }
    CostReport table = flux_cost_table(cfg, resolutions, radii);
    json jcfg = {{"command", "flops"}, {"preset", preset},   {"c", cfg.feature_dim},
                 {"n_text", cfg.n_text}, {"resolutions", resolutions}, {"radii", radii}};
    Report rep;
    rep.config_json = jcfg.dump();
    rep.columns = {"method", "resolution", "radius", "n_tokens", "popcount", "flops"};
    rep.key_columns = 3;
    for (const auto &row : table.rows)
        rep.add_row({row.method, std::to_string(row.resolution), format_double(row.radius),
                     std::to_string(row.n_tokens), std::to_string(row.popcount),
                     std::to_string(row.flops)});
    if (out.empty()) {
        rep.sort_rows();
        std::cout << (format == "json" ? rep.to_json() : rep.to_csv());
    } else {
        rep.write(out, format);
    }
    return kExitOk;
}

// ---------------------------------------------------------------- rank ----

int run_rank(const MaskArgs &a) {
    TokenGrid grid = make_grid(a.n_text, a.height, a.width);
    AttentionMask mask =
        build_mask(a.method, grid, a.r, a.half_width, a.window, a.shift, a.stride, a.layer);
    MaskStats s = mask_stats(mask);
    json j = a.to_json();
    j["command"] = "rank";
    j["image_rank"] = s.image_rank;
    j["image_rank_exact"] = s.image_rank_exact;
    j["popcount"] = s.popcount;
    if (a.method == "swin") j["window_count"] = swin_window_count(grid, a.window, a.shift, a.layer);
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

// ----------------------------------------------------------- attn-bench ----

int run_attn_bench(const MaskArgs &a, const std::string &method, size_t c, uint64_t seed,
                   double sigmoid_bias, size_t down_factor, size_t slots,
                   const std::string &out) {
    TokenGrid grid = make_grid(a.n_text, a.height, a.width);
    AttentionInputs in = random_attention_inputs(grid, c, seed);
    Matrix o;
    if (method == "masked-full") {
        o = masked_attention(in, build_full(grid));
    } else if (method == "masked-clear") {
        o = masked_attention(in, build_clear(grid, a.r));
    } else if (method == "linear") {
        o = linear_attention(in);
    } else if (method == "sigmoid") {
        o = sigmoid_attention(in, sigmoid_bias == 0.0 ? std::optional<double>() : sigmoid_bias);
    } else if (method == "kv4") {
        o = kv_compressed_attention(in, KvCompressorParams::average_pool_init(c));
    } else if (method == "agent") {
        o = agent_attention(in, down_factor);
    } else if (method == "slot") {
        Rng rng(seed ^ 0x736c6f74ull);
        o = slot_attention(in, Matrix::random_normal(slots, c, rng));
    } else {
        throw CheckError("unknown attention method: " + method);
    }
    json jcfg = a.to_json();
    jcfg["command"] = "attn-bench";
    jcfg["attn_method"] = method;
    jcfg["c"] = c;
    jcfg["seed"] = seed;
    Report rep;
    rep.config_json = jcfg.dump();
    rep.columns = {"method", "n", "c", "seed", "output_hash"};
    rep.add_row({method, std::to_string(grid.n_total()), std::to_string(c), std::to_string(seed),
                 hex64(o.content_hash())});
    if (out.empty())
        std::cout << rep.to_csv();
    else
        rep.write(out, "csv");
    return kExitOk;
}

// -------------------------------------------------------------- distill ----

int run_distill(const ModelArgs &m, const DistillConfig &dcfg, size_t teacher_steps,
                size_t data_count, size_t sampler_steps, const std::string &data_source,
                const std::string &out_prefix) {
    ToyDitConfig cfg = m.config();
    SyntheticTask task(cfg, m.seed);
    Rng rng(m.seed ^ 0x636c69ull);

    ToyDit teacher(cfg, m.seed);
    ToyDataset pretrain_data = task.make_dataset(std::max<size_t>(data_count, 32), rng);
    train_flow_matching(teacher, pretrain_data, teacher_steps, dcfg.batch, dcfg.lr, m.seed + 1);

    ToyDataset distill_data;
    if (data_source == "self") {
        distill_data = generate_teacher_dataset(teacher, data_count, sampler_steps, m.seed + 2);
    } else if (data_source == "synthetic") {
        distill_data = task.make_dataset(data_count, rng);
    } else if (data_source == "mismatched") {
        SyntheticTask other(cfg, m.seed + 77); // different mixture, same shape
        distill_data = other.make_dataset(data_count, rng);
    } else {
        throw CheckError("unknown data source: " + data_source);
    }

    ToyDit student = teacher;
    student.set_masks_clear(m.r);

    // held-out eval batch for the L_pred summary
    std::vector<FlowSample> eval;
    Rng eval_rng(m.seed ^ 0x6576616cull);
    for (size_t i = 0; i < 8; ++i) {
        const auto &item = distill_data.items[eval_rng.uniform_int(distill_data.items.size())];
        FlowSample s;
        s.z0 = item.z0;
        s.klass = item.klass;
        s.t = eval_rng.uniform();
        s.eps = Matrix::random_normal(item.z0.rows(), item.z0.cols(), eval_rng);
        eval.push_back(std::move(s));
    }
    auto eval_pred = [&]() {
        double acc = 0.0;
        for (const auto &s : eval) acc += distill_losses(student, teacher, s, dcfg).pred;
        return acc / double(eval.size());
    };

    const double initial_pred = eval_pred();
    const uint64_t frozen_before = student.frozen_weights_hash();
    TrainResult result = train_distill(student, teacher, distill_data, dcfg);
    const double final_pred = eval_pred();
    const uint64_t frozen_after = student.frozen_weights_hash();

    json jcfg = m.to_json();
    jcfg["command"] = "distill";
    jcfg["alpha"] = dcfg.alpha;
    jcfg["beta"] = dcfg.beta;
    jcfg["steps"] = dcfg.steps;
    jcfg["batch"] = dcfg.batch;
    jcfg["lr"] = dcfg.lr;
    jcfg["data"] = data_source;
    jcfg["data_count"] = data_count;
    jcfg["teacher_steps"] = teacher_steps;
    jcfg["sampler_steps"] = sampler_steps;

    Report curve;
    curve.config_json = jcfg.dump();
    curve.columns = {"step", "L_fm", "L_pred", "L_attn", "total"};
    for (const auto &row : result.curve)
        curve.add_row({std::to_string(row.step), format_double(row.fm), format_double(row.pred),
                       format_double(row.attn), format_double(row.total)});
    curve.write(out_prefix + "_losses.csv", "csv");

    teacher.save(out_prefix + "_teacher.ckpt");
    student.save(out_prefix + "_student.ckpt");

    json summary;
    summary["config"] = jcfg;
    summary["initial_L_pred"] = initial_pred;
    summary["final_L_pred"] = final_pred;
    summary["pred_ratio"] = final_pred / initial_pred;
    summary["frozen_weights_unchanged"] = (frozen_before == frozen_after);
    summary["dataset_hash"] = hex64(distill_data.content_hash());
    write_text(out_prefix + "_summary.json", summary.dump(2) + "\n");
    std::cout << summary.dump(2) << "\n";
    return kExitOk;
}

// ------------------------------------------------------------- parallel ----

int run_parallel(const ModelArgs &m, size_t workers, const std::string &op, size_t steps,
                 const std::string &mode, const std::string &out_prefix) {
    TokenGrid grid = make_grid(m.n_text, m.height, m.width);
    PatchPlan plan = make_plan(grid, workers, m.r);
    json jcfg = m.to_json();
    jcfg["command"] = "parallel";
    jcfg["N"] = workers;
    jcfg["op"] = op;
    jcfg["mode"] = mode;
    jcfg["steps"] = steps;

    if (op == "attention") {
        AttentionInputs in = random_attention_inputs(grid, m.model_width, m.seed);
        DistributedAttentionResult res = distributed_clear_attention(plan, in, m.r);
        Report rep;
        rep.config_json = jcfg.dump();
        rep.columns = {"method", "n", "c", "seed", "output_hash"};
        rep.add_row({"masked-clear", std::to_string(grid.n_total()),
                     std::to_string(m.model_width), std::to_string(m.seed),
                     hex64(res.output.content_hash())});
        if (out_prefix.empty())
            std::cout << rep.to_csv();
        else
            rep.write(out_prefix + "_attention.csv", "csv");
        if (!out_prefix.empty())
            ledger_report(res.ledger, jcfg).write(out_prefix + "_ledger.csv", "csv");
        return kExitOk;
    }
    CLEARLAB_CHECK(op == "inference", "op must be attention or inference");

    ToyDit student(m.config(), m.seed);
    student.set_masks_clear(m.r);
    Rng rng(m.seed ^ 0x70617261ull);
    Matrix z1 = Matrix::random_normal(grid.n_image(), student.config().latent_dim, rng);
    const size_t klass = size_t(rng.uniform_int(student.config().n_classes));

    TextMode tm = (mode == "average") ? TextMode::Average : TextMode::Exact;
    SimulateResult sim = simulate_inference(plan, student, z1, klass, steps, tm);
    InferenceTrace ref = single_worker_trace(student, z1, klass, steps);

    Report div;
    div.config_json = jcfg.dump();
    div.columns = {"step", "max_abs_gap", "mean_abs_gap"};
    for (size_t s = 0; s < steps; ++s) {
        double mx = 0.0, mean = 0.0;
        const Matrix &a = sim.trace.z_steps[s], &b = ref.z_steps[s];
        for (size_t i = 0; i < a.size(); ++i) {
            double d = std::fabs(a.data()[i] - b.data()[i]);
            mx = std::max(mx, d);
            mean += d;
        }
        mean /= double(a.size());
        div.add_row({std::to_string(s), format_double(mx), format_double(mean)});
    }

    json summary;
    summary["config"] = jcfg;
    summary["output_hash"] = hex64(sim.trace.z_final.content_hash());
    summary["reference_hash"] = hex64(ref.z_final.content_hash());

    if (out_prefix.empty()) {
        std::cout << summary.dump(2) << "\n";
    } else {
        ledger_report(sim.ledger, jcfg).write(out_prefix + "_ledger.csv", "csv");
        div.write(out_prefix + "_divergence.csv", "csv");
        write_text(out_prefix + "_summary.json", summary.dump(2) + "\n");
        std::cout << summary.dump(2) << "\n";
    }
    return kExitOk;
}

// ------------------------------------------------------------- data-gen ----

int run_data_gen(const ModelArgs &m, size_t count, size_t sampler_steps, size_t teacher_steps,
                 const std::string &out_prefix) {
    ToyDitConfig cfg = m.config();
    SyntheticTask task(cfg, m.seed);
    Rng rng(m.seed ^ 0x646174ull);
    ToyDit teacher(cfg, m.seed);
    ToyDataset pretrain = task.make_dataset(std::max<size_t>(count, 32), rng);
    train_flow_matching(teacher, pretrain, teacher_steps, 2, 2e-3, m.seed + 1);
    ToyDataset ds = generate_teacher_dataset(teacher, count, sampler_steps, m.seed + 2);
    ds.save(out_prefix + "_dataset.bin");
    teacher.save(out_prefix + "_teacher.ckpt");
    json j = m.to_json();
    j["command"] = "data-gen";
    j["count"] = count;
    j["sampler_steps"] = sampler_steps;
    j["teacher_steps"] = teacher_steps;
    j["dataset_hash"] = hex64(ds.content_hash());
    write_text(out_prefix + "_summary.json", j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"circular-window local attention lab: masks, cost model, toy "
                 "distillation, patch-parallel inference"};
    app.require_subcommand(1);

    // mask
    auto *mask_cmd = app.add_subcommand("mask", "build an attention mask, print stats");
    MaskArgs mask_args;
    mask_args.attach(mask_cmd);
    bool mask_stats_flag = false;
    std::string mask_out, mask_pbm;
    mask_cmd->add_flag("--stats", mask_stats_flag, "include image-block rank");
    mask_cmd->add_option("--out", mask_out, "write bit-packed mask file");
    mask_cmd->add_option("--pbm", mask_pbm, "write PBM visualization");

    // flops
    auto *flops_cmd = app.add_subcommand("flops", "cost tables from mask popcounts");
    std::string preset = "flux", flops_out, flops_format = "csv";
    uint64_t flops_c = 3072, flops_ntext = 512;
    std::vector<uint64_t> resolutions = {1024, 2048, 4096, 8192};
    std::vector<double> radii = {8, 16, 32};
    flops_cmd->add_option("--preset", preset, "flux|custom")
        ->check(CLI::IsMember({"flux", "custom"}));
    flops_cmd->add_option("--c", flops_c, "feature width (custom preset)");
    flops_cmd->add_option("--n-text", flops_ntext, "text tokens (custom preset)");
    flops_cmd->add_option("--resolutions", resolutions, "pixel resolutions")->delimiter(',');
    flops_cmd->add_option("--radii", radii, "clear radii")->delimiter(',');
    flops_cmd->add_option("--out", flops_out, "output file");
    flops_cmd->add_option("--format", flops_format, "csv|json")
        ->check(CLI::IsMember({"csv", "json"}));

    // rank
    auto *rank_cmd = app.add_subcommand("rank", "image-block rank diagnostics");
    MaskArgs rank_args;
    rank_args.attach(rank_cmd);

    // attn-bench
    auto *bench_cmd = app.add_subcommand("attn-bench", "run one attention method on seeded data");
    MaskArgs bench_args;
    bench_args.attach(bench_cmd);
    std::string bench_method = "masked-clear", bench_out;
    size_t bench_c = 64, bench_down = 2, bench_slots = 4;
    uint64_t bench_seed = 0;
    double bench_bias = 0.0;
    bench_cmd->add_option("--attn-method", bench_method,
                          "masked-full|masked-clear|linear|sigmoid|kv4|agent|slot")
        ->check(CLI::IsMember(
            {"masked-full", "masked-clear", "linear", "sigmoid", "kv4", "agent", "slot"}));
    bench_cmd->add_option("--c", bench_c, "feature width");
    bench_cmd->add_option("--seed", bench_seed, "rng seed");
    bench_cmd->add_option("--bias", bench_bias, "sigmoid bias (0 = default -ln m)");
    bench_cmd->add_option("--down-factor", bench_down, "agent pooling factor");
    bench_cmd->add_option("--slots", bench_slots, "slot count");
    bench_cmd->add_option("--out", bench_out, "output CSV");

    // distill
    auto *distill_cmd = app.add_subcommand("distill", "teacher pretrain + student distillation");
    ModelArgs distill_model;
    distill_model.attach(distill_cmd);
    DistillConfig dcfg;
    size_t teacher_steps = 400, data_count = 64, sampler_steps = 20;
    std::string data_source = "self", distill_prefix = "distill";
    std::vector<size_t> layer_list;
    distill_cmd->add_option("--alpha", dcfg.alpha, "prediction loss weight");
    distill_cmd->add_option("--beta", dcfg.beta, "attention loss weight");
    distill_cmd->add_option("--steps", dcfg.steps, "distillation steps");
    distill_cmd->add_option("--batch", dcfg.batch, "batch size");
    distill_cmd->add_option("--lr", dcfg.lr, "learning rate");
    distill_cmd->add_option("--layers", layer_list, "attention loss layer indices")
        ->delimiter(',');
    distill_cmd->add_option("--teacher-steps", teacher_steps, "teacher pretraining steps");
    distill_cmd->add_option("--data-count", data_count, "distillation dataset size");
    distill_cmd->add_option("--sampler-steps", sampler_steps, "Euler steps for data-gen");
    distill_cmd->add_option("--data", data_source, "self|synthetic|mismatched")
        ->check(CLI::IsMember({"self", "synthetic", "mismatched"}));
    distill_cmd->add_option("--out-prefix", distill_prefix, "output file prefix");

    // parallel
    auto *par_cmd = app.add_subcommand("parallel", "multi-worker patch inference simulation");
    ModelArgs par_model;
    par_model.attach(par_cmd);
    size_t par_workers = 2, par_steps = 4;
    std::string par_op = "inference", par_mode = "exact", par_prefix;
    par_cmd->add_option("--N", par_workers, "worker count");
    par_cmd->add_option("--op", par_op, "attention|inference")
        ->check(CLI::IsMember({"attention", "inference"}));
    par_cmd->add_option("--steps", par_steps, "denoising steps");
    par_cmd->add_option("--mode", par_mode, "exact|average text handling")
        ->check(CLI::IsMember({"exact", "average"}));
    par_cmd->add_option("--out-prefix", par_prefix, "output file prefix");

    // data-gen
    auto *gen_cmd = app.add_subcommand("data-gen", "teacher-sampled dataset generation");
    ModelArgs gen_model;
    gen_model.attach(gen_cmd);
    size_t gen_count = 64, gen_sampler = 20, gen_teacher_steps = 400;
    std::string gen_prefix = "datagen";
    gen_cmd->add_option("--count", gen_count, "samples to draw");
    gen_cmd->add_option("--sampler-steps", gen_sampler, "Euler steps");
    gen_cmd->add_option("--teacher-steps", gen_teacher_steps, "teacher pretraining steps");
    gen_cmd->add_option("--out-prefix", gen_prefix, "output file prefix");

    std::vector<std::string> args;
    try {
        args = apply_config_file(argc, argv);
    } catch (const std::exception &e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
    }
    try {
        std::vector<const char *> cargs;
        cargs.push_back(argv[0]);
        for (const auto &a : args) cargs.push_back(a.c_str());
        app.parse(int(cargs.size()), cargs.data());
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e); // prints help, exits 0
    } catch (const CLI::ParseError &e) {
        std::cerr << "config error: " << e.get_name() << ": " << e.what() << "\n";
        return kExitConfigError;
    }

    bool validated = false; // flips once geometry/config checks are done
    try {
        if (*mask_cmd) {
            mask_args.validate();
            validated = true;
            return run_mask(mask_args, mask_stats_flag, mask_out, mask_pbm);
        }
        if (*flops_cmd) {
            for (uint64_t res : resolutions)
                CLEARLAB_CHECK(res % 16 == 0, "resolution must be divisible by 16");
            validated = true;
            return run_flops(preset, flops_c, flops_ntext, resolutions, radii, flops_out,
                             flops_format);
        }
        if (*rank_cmd) {
            rank_args.validate();
            validated = true;
            return run_rank(rank_args);
        }
        if (*bench_cmd) {
            bench_args.validate();
            validated = true;
            return run_attn_bench(bench_args, bench_method, bench_c, bench_seed, bench_bias,
                                  bench_down, bench_slots, bench_out);
        }
        if (*distill_cmd) {
            dcfg.attn_loss_layers = layer_list;
            dcfg.seed = distill_model.seed;
            distill_model.config().validate();
            (void)dcfg.resolved_layers(distill_model.blocks);
            validated = true;
            return run_distill(distill_model, dcfg, teacher_steps, data_count, sampler_steps,
                               data_source, distill_prefix);
        }
        if (*par_cmd) {
            par_model.config().validate();
            validated = true;
            return run_parallel(par_model, par_workers, par_op, par_steps, par_mode, par_prefix);
        }
        if (*gen_cmd) {
            gen_model.config().validate();
            validated = true;
            return run_data_gen(gen_model, gen_count, gen_sampler, gen_teacher_steps, gen_prefix);
        }
    } catch (const std::exception &e) {
        std::cerr << (validated ? "runtime error: " : "config error: ") << e.what() << "\n";
        return validated ? kExitRuntimeError : kExitConfigError;
    }
    return kExitConfigError;
}
