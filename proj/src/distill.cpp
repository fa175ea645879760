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

#include "clearlab/distill.hpp"

#include <cmath>
#include <fstream>

namespace clearlab {

Matrix FlowSample::z_t() const {
    CLEARLAB_CHECK(z0.same_shape(eps), "flow sample: z0/eps shape mismatch");
    Matrix out = z0;
    for (size_t i = 0; i < out.size(); ++i)
        out.data()[i] = (1.0 - t) * z0.data()[i] + t * eps.data()[i];
    return out;
}

Matrix FlowSample::target() const { return sub(eps, z0); }

std::vector<size_t> DistillConfig::resolved_layers(size_t blocks) const {
    if (!attn_loss_layers.empty()) {
        for (size_t l : attn_loss_layers)
            CLEARLAB_CHECK(l < blocks, "attn loss layer index out of range");
        return attn_loss_layers;
    }
    std::vector<size_t> out;
    for (size_t l = blocks / 2; l < blocks; ++l) out.push_back(l);
    return out;
}

void ToyDataset::save(const std::string &path) const {
    std::ofstream f(path, std::ios::binary);
    CLEARLAB_CHECK(f.good(), "cannot open dataset for writing: " + path);
    const char magic[8] = {'C', 'L', 'D', 'A', 'T', 'A', '0', '1'};
    f.write(magic, 8);
    auto put_u64 = [&](uint64_t v) { f.write(reinterpret_cast<const char *>(&v), 8); };
    put_u64(items.size());
    for (const auto &item : items) {
        put_u64(item.klass);
        put_u64(item.z0.rows());
        put_u64(item.z0.cols());
        f.write(reinterpret_cast<const char *>(item.z0.data().data()),
                std::streamsize(item.z0.size() * sizeof(double)));
    }
    CLEARLAB_CHECK(f.good(), "dataset write failed: " + path);
}

ToyDataset ToyDataset::load(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    CLEARLAB_CHECK(f.good(), "cannot open dataset: " + path);
    char magic[8];
    f.read(magic, 8);
    const char want[8] = {'C', 'L', 'D', 'A', 'T', 'A', '0', '1'};
    CLEARLAB_CHECK(f.good() && std::equal(magic, magic + 8, want), "bad dataset magic");
    auto get_u64 = [&]() {
        uint64_t v = 0;
        f.read(reinterpret_cast<char *>(&v), 8);
        return v;
    };
    ToyDataset ds;
    uint64_t count = get_u64();
    for (uint64_t i = 0; i < count; ++i) {
        LabeledLatent item;
        item.klass = get_u64();
        uint64_t rows = get_u64(), cols = get_u64();
        item.z0 = Matrix(rows, cols);
        f.read(reinterpret_cast<char *>(item.z0.data().data()),
               std::streamsize(rows * cols * sizeof(double)));
        ds.items.push_back(std::move(item));
    }
    CLEARLAB_CHECK(f.good(), "dataset payload truncated: " + path);
    return ds;
}

uint64_t ToyDataset::content_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto &item : items) {
        h = fnv1a(&item.klass, sizeof(item.klass), h);
        h = fnv1a(item.z0.data().data(), item.z0.size() * sizeof(double), h);
    }
    return h;
}

SyntheticTask::SyntheticTask(const ToyDitConfig &cfg, uint64_t task_seed) {
    Rng rng(task_seed ^ 0x7461736bull);
    for (size_t k = 0; k < cfg.n_classes; ++k)
        class_means.push_back(
            Matrix::random_normal(cfg.grid_h * cfg.grid_w, cfg.latent_dim, rng));
}

LabeledLatent SyntheticTask::sample(Rng &rng) const {
    LabeledLatent item;
    item.klass = size_t(rng.uniform_int(class_means.size()));
    item.z0 = class_means[item.klass];
    for (auto &v : item.z0.data()) v += noise_std * rng.normal();
    return item;
}

ToyDataset SyntheticTask::make_dataset(size_t count, Rng &rng) const {
    ToyDataset ds;
    for (size_t i = 0; i < count; ++i) ds.items.push_back(sample(rng));
    return ds;
}

double flow_matching_loss(const ToyDit &model, const FlowSample &sample) {
    Matrix pred = model.forward(sample.z_t(), sample.t, sample.klass).pred;
    Matrix gap = sub(sample.target(), pred);
    double acc = 0.0;
    for (double v : gap.data()) acc += v * v;
    return acc / double(gap.size());
}

DistillLosses distill_losses(const ToyDit &student, const ToyDit &teacher,
                             const FlowSample &sample, const DistillConfig &cfg) {
    CLEARLAB_CHECK(student.config() == teacher.config(),
                   "student and teacher must share one architecture");
    const auto layers = cfg.resolved_layers(student.config().blocks);
    ToyDit::ForwardResult t_out = teacher.forward(sample.z_t(), sample.t, sample.klass);
    ToyDit::ForwardResult s_out = student.forward(sample.z_t(), sample.t, sample.klass);

    auto mse = [](const Matrix &a, const Matrix &b) {
        double acc = 0.0;
        for (size_t i = 0; i < a.size(); ++i) {
            double d = a.data()[i] - b.data()[i];
            acc += d * d;
        }
        return acc / double(a.size());
    };

    DistillLosses out;
    Matrix target = sample.target();
    out.fm = mse(s_out.pred, target);
    out.pred = mse(s_out.pred, t_out.pred);
    if (!layers.empty()) {
        for (size_t l : layers) out.attn += mse(s_out.attn_outputs[l], t_out.attn_outputs[l]);
        out.attn /= double(layers.size());
    }
    return out;
}

namespace {

struct AdamState {
    std::map<std::string, Matrix> m;
    std::map<std::string, Matrix> v;
    size_t t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void step(ToyDit &model, const std::map<std::string, Matrix> &grads, double lr) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, double(t));
        const double bc2 = 1.0 - std::pow(beta2, double(t));
        for (const auto &[name, g] : grads) {
            Matrix &p = model.param(name);
            Matrix &mm = m.try_emplace(name, Matrix(g.rows(), g.cols())).first->second;
            Matrix &vv = v.try_emplace(name, Matrix(g.rows(), g.cols())).first->second;
            for (size_t i = 0; i < g.size(); ++i) {
                const double gi = g.data()[i];
                mm.data()[i] = beta1 * mm.data()[i] + (1.0 - beta1) * gi;
                vv.data()[i] = beta2 * vv.data()[i] + (1.0 - beta2) * gi * gi;
                const double mh = mm.data()[i] / bc1;
                const double vh = vv.data()[i] / bc2;
                p.data()[i] -= lr * mh / (std::sqrt(vh) + eps);
            }
        }
    }
};

/// Builds the full objective for one sample on a tape and returns
/// (losses, loss node). Teacher outputs enter as constants.
struct SampleGraph {
    DistillLosses losses;
    Tape::NodeId total = -1;
    ToyDit::ForwardNodes nodes;
};

SampleGraph build_objective(Tape &tape, const ToyDit &student, const ToyDit *teacher,
                            const FlowSample &sample, const DistillConfig &cfg,
                            const std::vector<size_t> &layers) {
    SampleGraph g;
    g.nodes = student.build_forward(tape, sample.z_t(), sample.t, sample.klass);
    Tape::NodeId target = tape.input(sample.target());
    Tape::NodeId l_fm = tape.mean_sq_diff(g.nodes.pred, target);
    g.losses.fm = tape.value(l_fm)(0, 0);
    g.total = l_fm;
    if (teacher != nullptr) {
        ToyDit::ForwardResult t_out = teacher->forward(sample.z_t(), sample.t, sample.klass);
        Tape::NodeId l_pred = tape.mean_sq_diff(g.nodes.pred, tape.input(t_out.pred));
        g.losses.pred = tape.value(l_pred)(0, 0);
        Tape::NodeId l_attn = -1;
        if (!layers.empty()) {
            for (size_t l : layers) {
                Tape::NodeId piece = tape.mean_sq_diff(g.nodes.attn_outputs[l],
                                                       tape.input(t_out.attn_outputs[l]));
                l_attn = (l_attn < 0) ? piece : tape.add(l_attn, piece);
            }
            l_attn = tape.scale(l_attn, 1.0 / double(layers.size()));
            g.losses.attn = tape.value(l_attn)(0, 0);
        }
        g.total = tape.add(g.total, tape.scale(l_pred, cfg.alpha));
        if (l_attn >= 0) g.total = tape.add(g.total, tape.scale(l_attn, cfg.beta));
    }
    return g;
}

TrainResult run_training(ToyDit &model, const ToyDit *teacher, const ToyDataset &dataset,
                         size_t steps, size_t batch, double lr, uint64_t seed,
                         const DistillConfig &cfg, bool attention_only) {
    CLEARLAB_CHECK(!dataset.items.empty(), "training needs a non-empty dataset");
    CLEARLAB_CHECK(batch >= 1, "batch must be >= 1");
    const auto layers =
        teacher ? cfg.resolved_layers(model.config().blocks) : std::vector<size_t>{};

    TrainResult result;
    Rng rng(seed ^ 0x747261696eull);
    AdamState adam;

    for (size_t step = 0; step < steps; ++step) {
        std::map<std::string, Matrix> grads;
        DistillLosses avg;
        for (size_t bi = 0; bi < batch; ++bi) {
            const auto &item = dataset.items[rng.uniform_int(dataset.items.size())];
            FlowSample sample;
            sample.z0 = item.z0;
            sample.klass = item.klass;
            sample.t = rng.uniform();
            sample.eps = Matrix::random_normal(item.z0.rows(), item.z0.cols(), rng);

            Tape tape;
            SampleGraph g;
            try {
                g = build_objective(tape, model, teacher, sample, cfg, layers);
            } catch (const CheckError &e) {
                // non-finite activations inside the graph are a divergence
                throw CheckError("training diverged at step " + std::to_string(step) + ": " +
                                 e.what());
            }
            tape.backward(g.total);

            avg.fm += g.losses.fm;
            avg.pred += g.losses.pred;
            avg.attn += g.losses.attn;
            for (const auto &name : model.param_names()) {
                if (attention_only && !is_attention_param(name)) continue;
                const Matrix &pg = tape.grad(g.nodes.param_nodes.at(name));
                auto it = grads.find(name);
                if (it == grads.end())
                    grads.emplace(name, pg);
                else
                    for (size_t i = 0; i < pg.size(); ++i) it->second.data()[i] += pg.data()[i];
            }
        }
        avg.fm /= double(batch);
        avg.pred /= double(batch);
        avg.attn /= double(batch);
        const double total = avg.total(teacher ? cfg.alpha : 0.0, teacher ? cfg.beta : 0.0);
        CLEARLAB_CHECK(std::isfinite(total),
                       "training diverged at step " + std::to_string(step) + " (loss not finite)");
        for (auto &[name, g] : grads)
            for (auto &x : g.data()) x /= double(batch);
        adam.step(model, grads, lr);
        result.curve.push_back({step, avg.fm, avg.pred, avg.attn, total});
    }
    return result;
}

} // namespace

TrainResult train_distill(ToyDit &student, const ToyDit &teacher, const ToyDataset &dataset,
                          const DistillConfig &cfg) {
    CLEARLAB_CHECK(student.config() == teacher.config(),
                   "student and teacher must share one architecture");
    return run_training(student, &teacher, dataset, cfg.steps, cfg.batch, cfg.lr, cfg.seed, cfg,
                        /*attention_only=*/true);
}

TrainResult train_flow_matching(ToyDit &model, const ToyDataset &dataset, size_t steps,
                                size_t batch, double lr, uint64_t seed) {
    DistillConfig cfg;
    cfg.seed = seed;
    return run_training(model, nullptr, dataset, steps, batch, lr, seed, cfg,
                        /*attention_only=*/false);
}

Matrix euler_sample(const ToyDit &model, const Matrix &z_at_t1, size_t klass,
                    size_t sampler_steps) {
    CLEARLAB_CHECK(sampler_steps >= 1, "need at least one sampler step");
    Matrix z = z_at_t1;
    const double dt = 1.0 / double(sampler_steps);
    for (size_t s = 0; s < sampler_steps; ++s) {
        const double t = 1.0 - double(s) * dt;
        Matrix vel = model.forward(z, t, klass).pred;
        for (size_t i = 0; i < z.size(); ++i) z.data()[i] -= dt * vel.data()[i];
    }
    return z;
}

ToyDataset generate_teacher_dataset(const ToyDit &teacher, size_t count, size_t sampler_steps,
                                    uint64_t seed) {
    Rng rng(seed ^ 0x67656e64ull);
    const ToyDitConfig &cfg = teacher.config();
    ToyDataset ds;
    for (size_t i = 0; i < count; ++i) {
        LabeledLatent item;
        item.klass = size_t(rng.uniform_int(cfg.n_classes));
        Matrix noise =
            Matrix::random_normal(cfg.grid_h * cfg.grid_w, cfg.latent_dim, rng);
        item.z0 = euler_sample(teacher, noise, item.klass, sampler_steps);
        ds.items.push_back(std::move(item));
    }
    return ds;
}

} // namespace clearlab
