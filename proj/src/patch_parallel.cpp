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

#include "clearlab/patch_parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

namespace clearlab {

PatchPlan make_plan(const TokenGrid &grid, size_t workers, double r) {
    CLEARLAB_CHECK(workers >= 1, "need at least one worker");
    CLEARLAB_CHECK(r > 0.0, "window radius must be positive");
    PatchPlan plan;
    plan.grid = grid;
    plan.radius = r;
    plan.workers = workers;
    plan.halo = size_t(std::ceil(r));
    const size_t base = grid.height / workers;
    CLEARLAB_CHECK(base >= plan.halo,
                   "patch too thin: H/N rows per worker is smaller than the ceil(r) halo");
    size_t y = 0;
    for (size_t w = 0; w < workers; ++w) {
        size_t rows = base + (w + 1 == workers ? grid.height % workers : 0);
        plan.row_ranges.emplace_back(y, y + rows);
        y += rows;
    }
    return plan;
}

const char *msg_kind_name(MsgKind k) {
    switch (k) {
    case MsgKind::HaloKv: return "halo_kv";
    case MsgKind::TextPartial: return "text_partial";
    case MsgKind::Barrier: return "barrier";
    }
    return "?";
}

MailboxHub::MailboxHub(size_t workers, int timeout_ms)
    : workers_(workers), timeout_ms_(timeout_ms), boxes_(workers) {}

void MailboxHub::record(const WorkerMsg &msg, bool received) {
    if (msg.kind == MsgKind::Barrier) return; // sync traffic carries no tokens
    ledger_.push_back({msg.step, msg.layer, msg.sender, msg.receiver, msg.kind,
                       msg.payload.rows(), received});
}

void MailboxHub::send(WorkerMsg msg) {
    CLEARLAB_CHECK(msg.receiver < workers_ && msg.sender < workers_, "bad worker id");
    std::lock_guard<std::mutex> lock(mu_);
    record(msg, false);
    Tag tag{msg.sender, msg.step, msg.layer, size_t(msg.kind)};
    boxes_[msg.receiver][tag].push_back(std::move(msg));
    cv_.notify_all();
}

WorkerMsg MailboxHub::receive(size_t receiver, size_t sender, size_t step, size_t layer,
                              MsgKind kind) {
    std::unique_lock<std::mutex> lock(mu_);
    Tag tag{sender, step, layer, size_t(kind)};
    auto ready = [&]() {
        if (poisoned_) return true;
        auto it = boxes_[receiver].find(tag);
        return it != boxes_[receiver].end() && !it->second.empty();
    };
    if (!cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms_), ready)) {
        poisoned_ = true;
        poison_reason_ = "deadlock: worker " + std::to_string(receiver) + " waited for " +
                         msg_kind_name(kind) + " from " + std::to_string(sender) + " at step " +
                         std::to_string(step) + " layer " + std::to_string(layer);
        cv_.notify_all();
        throw CheckError(poison_reason_);
    }
    if (poisoned_) throw CheckError(poison_reason_.empty() ? "hub poisoned" : poison_reason_);
    auto it = boxes_[receiver].find(tag);
    WorkerMsg msg = std::move(it->second.front());
    it->second.erase(it->second.begin());
    if (it->second.empty()) boxes_[receiver].erase(it);
    record(msg, true);
    return msg;
}

void MailboxHub::poison(const std::string &reason) {
    std::lock_guard<std::mutex> lock(mu_);
    if (!poisoned_) {
        poisoned_ = true;
        poison_reason_ = reason;
    }
    cv_.notify_all();
}

std::vector<LedgerEntry> MailboxHub::ledger_sorted() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<LedgerEntry> out = ledger_;
    std::sort(out.begin(), out.end(), [](const LedgerEntry &a, const LedgerEntry &b) {
        return std::tie(a.step, a.layer, a.sender, a.receiver, a.kind, a.received) <
               std::tie(b.step, b.layer, b.sender, b.receiver, b.kind, b.received);
    });
    return out;
}

namespace {

/// Barrier over the mailbox system: everyone reports to worker 0, worker 0
/// releases everyone. Rounds come from a per-worker counter that advances
/// identically on every worker.
void message_barrier(MailboxHub &hub, size_t worker, size_t workers, size_t &round) {
    const size_t r = round++;
    if (workers == 1) return;
    if (worker == 0) {
        for (size_t w = 1; w < workers; ++w) hub.receive(0, w, r, 0, MsgKind::Barrier);
        for (size_t w = 1; w < workers; ++w)
            hub.send({MsgKind::Barrier, 0, w, r, 0, Matrix(), {}});
    } else {
        hub.send({MsgKind::Barrier, worker, 0, r, 0, Matrix(), {}});
        hub.receive(worker, 0, r, 0, MsgKind::Barrier);
    }
}

struct GroupStats {
    std::vector<double> max_logit; // per query row
    std::vector<double> mass;      // per query row
};

/// Softmax partial of `scores` columns [c0, c1) against matching value rows.
void group_partial(const Matrix &scores, const Matrix &values, size_t c0, size_t c1, Matrix &out,
                   GroupStats &stats) {
    const size_t rows = scores.rows();
    out = Matrix(rows, values.cols());
    stats.max_logit.assign(rows, 0.0);
    stats.mass.assign(rows, 0.0);
    for (size_t i = 0; i < rows; ++i) {
        double m = neg_infinity();
        for (size_t j = c0; j < c1; ++j) m = std::max(m, scores(i, j));
        double z = 0.0;
        for (size_t j = c0; j < c1; ++j) z += std::exp(scores(i, j) - m);
        for (size_t j = c0; j < c1; ++j) {
            const double w = std::exp(scores(i, j) - m) / z;
            const double *vr = values.row_ptr(j);
            for (size_t c = 0; c < values.cols(); ++c) out(i, c) += w * vr[c];
        }
        stats.max_logit[i] = m;
        stats.mass[i] = z;
    }
}

/// Log-sum-exp recombination of per-group softmax partials, groups combined
/// in their vector order.
Matrix combine_groups(const std::vector<Matrix> &outs, const std::vector<GroupStats> &stats) {
    CLEARLAB_CHECK(!outs.empty() && outs.size() == stats.size(), "empty group set");
    const size_t rows = outs[0].rows(), cols = outs[0].cols();
    if (outs.size() == 1) return outs[0];
    Matrix result(rows, cols);
    for (size_t i = 0; i < rows; ++i) {
        double big = neg_infinity();
        for (const auto &s : stats) big = std::max(big, s.max_logit[i]);
        double total = 0.0;
        for (const auto &s : stats) total += s.mass[i] * std::exp(s.max_logit[i] - big);
        for (size_t g = 0; g < outs.size(); ++g) {
            const double w = stats[g].mass[i] * std::exp(stats[g].max_logit[i] - big) / total;
            for (size_t c = 0; c < cols; ++c) result(i, c) += w * outs[g](i, c);
        }
    }
    return result;
}

struct StripRange {
    size_t ylo = 0, yhi = 0;
};

StripRange strip_of(const PatchPlan &plan, size_t w) {
    const auto [y0, y1] = plan.row_ranges[w];
    StripRange s;
    s.ylo = y0 >= plan.halo ? y0 - plan.halo : 0;
    s.yhi = std::min(plan.grid.height, y1 + plan.halo);
    return s;
}

/// Additive mask for own image query rows against the local key strip:
/// text columns visible, image columns gated by the strict circle.
Matrix strip_additive_mask(const PatchPlan &plan, size_t y0, size_t rows_own, size_t ylo,
                           size_t strip_rows) {
    const size_t W = plan.grid.width;
    const size_t nt = plan.grid.n_text;
    const double rr = plan.radius * plan.radius;
    Matrix add(rows_own * W, nt + strip_rows * W);
    const double ninf = neg_infinity();
    for (size_t qy = 0; qy < rows_own; ++qy) {
        const int64_t y = int64_t(y0 + qy);
        for (size_t qx = 0; qx < W; ++qx) {
            double *row = add.row_ptr(qy * W + qx);
            for (size_t ky = 0; ky < strip_rows; ++ky) {
                const int64_t dy = y - int64_t(ylo + ky);
                for (size_t kx = 0; kx < W; ++kx) {
                    const int64_t dx = int64_t(qx) - int64_t(kx);
                    if (double(dx * dx + dy * dy) >= rr)
                        row[nt + ky * W + kx] = ninf;
                }
            }
        }
    }
    return add;
}

} // namespace

DistributedAttentionResult distributed_clear_attention(const PatchPlan &plan,
                                                       const AttentionInputs &in, double r) {
    CLEARLAB_CHECK(r == plan.radius, "plan was built for a different radius");
    const TokenGrid &g = plan.grid;
    CLEARLAB_CHECK(in.q.rows() == g.n_total() && in.k.rows() == g.n_total() &&
                       in.v.rows() == g.n_total(),
                   "inputs must cover the grid");
    const size_t N = plan.workers;
    const size_t nt = g.n_text;
    const size_t W = g.width;
    const double s = in.effective_scale();

    MailboxHub hub(N);
    std::vector<Matrix> image_out(N);
    std::vector<Matrix> text_out(N);
    std::vector<std::string> errors(N);

    auto worker = [&](size_t w) {
        try {
            const auto [y0, y1] = plan.row_ranges[w];
            const size_t rows_own = y1 - y0;
            // worker-local shards: text replica + own image rows
            Matrix k_own = in.k.slice_rows(nt + y0 * W, nt + y1 * W);
            Matrix v_own = in.v.slice_rows(nt + y0 * W, nt + y1 * W);
            Matrix q_own = in.q.slice_rows(nt + y0 * W, nt + y1 * W);
            Matrix q_text = in.q.slice_rows(0, nt);
            Matrix k_text = in.k.slice_rows(0, nt);
            Matrix v_text = in.v.slice_rows(0, nt);

            // halo exchange: top rows go up, bottom rows go down
            const size_t hrows = plan.halo;
            if (w > 0)
                hub.send({MsgKind::HaloKv, w, w - 1, 0, 0,
                          concat_cols(k_own.slice_rows(0, hrows * W),
                                      v_own.slice_rows(0, hrows * W)),
                          {}});
            if (w + 1 < N)
                hub.send({MsgKind::HaloKv, w, w + 1, 0, 0,
                          concat_cols(k_own.slice_rows((rows_own - hrows) * W, rows_own * W),
                                      v_own.slice_rows((rows_own - hrows) * W, rows_own * W)),
                          {}});
            Matrix k_strip = k_own, v_strip = v_own;
            if (w > 0) {
                WorkerMsg m = hub.receive(w, w - 1, 0, 0, MsgKind::HaloKv);
                const size_t c = in.k.cols();
                k_strip = concat_rows(m.payload.slice_cols(0, c), k_strip);
                v_strip = concat_rows(m.payload.slice_cols(c, c + in.v.cols()), v_strip);
            }
            if (w + 1 < N) {
                WorkerMsg m = hub.receive(w, w + 1, 0, 0, MsgKind::HaloKv);
                const size_t c = in.k.cols();
                k_strip = concat_rows(k_strip, m.payload.slice_cols(0, c));
                v_strip = concat_rows(v_strip, m.payload.slice_cols(c, c + in.v.cols()));
            }
            const StripRange strip = strip_of(plan, w);
            CLEARLAB_CHECK(k_strip.rows() == (strip.yhi - strip.ylo) * W,
                           "missing halo: strip incomplete");

            Matrix k_local = concat_rows(k_text, k_strip);
            Matrix v_local = concat_rows(v_text, v_strip);

            // own image rows, bit-matching the single-worker path
            Matrix scores = scale(matmul_nt(q_own, k_local), s);
            Matrix addm = strip_additive_mask(plan, y0, rows_own, strip.ylo,
                                              strip.yhi - strip.ylo);
            image_out[w] = matmul(softmax_rows(scores, addm), v_local);

            // text rows
            if (N == 1) {
                Matrix tscores = scale(matmul_nt(q_text, k_local), s);
                text_out[w] = matmul(softmax_rows(tscores), v_local);
            } else {
                // own-patch partial over image keys only
                Matrix tscores = scale(matmul_nt(q_text, k_own), s);
                Matrix own_out;
                GroupStats own_stats;
                group_partial(tscores, v_own, 0, tscores.cols(), own_out, own_stats);
                std::vector<double> aux;
                aux.insert(aux.end(), own_stats.max_logit.begin(), own_stats.max_logit.end());
                aux.insert(aux.end(), own_stats.mass.begin(), own_stats.mass.end());
                for (size_t p = 0; p < N; ++p)
                    if (p != w) hub.send({MsgKind::TextPartial, w, p, 0, 0, own_out, aux});

                // text-key group: identical on every worker
                Matrix text_scores = scale(matmul_nt(q_text, k_text), s);
                std::vector<Matrix> outs(N + 1);
                std::vector<GroupStats> stats(N + 1);
                group_partial(text_scores, v_text, 0, nt, outs[0], stats[0]);
                outs[1 + w] = own_out;
                stats[1 + w] = own_stats;
                for (size_t p = 0; p < N; ++p) {
                    if (p == w) continue;
                    WorkerMsg m = hub.receive(w, p, 0, 0, MsgKind::TextPartial);
                    outs[1 + p] = std::move(m.payload);
                    stats[1 + p].max_logit.assign(m.aux.begin(), m.aux.begin() + ptrdiff_t(nt));
                    stats[1 + p].mass.assign(m.aux.begin() + ptrdiff_t(nt), m.aux.end());
                }
                text_out[w] = combine_groups(outs, stats);
            }
        } catch (const std::exception &e) {
            errors[w] = e.what();
            hub.poison(e.what());
        }
    };

    std::vector<std::thread> threads;
    for (size_t w = 0; w < N; ++w) threads.emplace_back(worker, w);
    for (auto &t : threads) t.join();
    for (const auto &e : errors)
        if (!e.empty()) throw CheckError(e);

    DistributedAttentionResult result;
    result.output = text_out[0];
    for (size_t w = 0; w < N; ++w) result.output = concat_rows(result.output, image_out[w]);
    result.ledger = hub.ledger_sorted();
    return result;
}

namespace {

void patch_partials(const PatchPlan &plan, const Matrix &q_text, const Matrix &k_image,
                    const Matrix &v_image, double s, std::vector<Matrix> &outs,
                    std::vector<GroupStats> &stats) {
    const size_t W = plan.grid.width;
    Matrix scores = scale(matmul_nt(q_text, k_image), s);
    outs.resize(plan.workers);
    stats.resize(plan.workers);
    for (size_t p = 0; p < plan.workers; ++p) {
        const auto [y0, y1] = plan.row_ranges[p];
        group_partial(scores, v_image, y0 * W, y1 * W, outs[p], stats[p]);
    }
}

} // namespace

Matrix text_patch_average(const PatchPlan &plan, const Matrix &q_text, const Matrix &k_image,
                          const Matrix &v_image, std::optional<double> scale_opt) {
    CLEARLAB_CHECK(k_image.rows() == plan.grid.n_image(), "K must cover the image raster");
    const double s = scale_opt ? *scale_opt : 1.0 / std::sqrt(double(q_text.cols()));
    std::vector<Matrix> outs;
    std::vector<GroupStats> stats;
    patch_partials(plan, q_text, k_image, v_image, s, outs, stats);
    Matrix avg(q_text.rows(), v_image.cols());
    for (const auto &o : outs)
        for (size_t i = 0; i < avg.size(); ++i) avg.data()[i] += o.data()[i];
    for (auto &x : avg.data()) x /= double(plan.workers);
    return avg;
}

Matrix text_exact_recombination(const PatchPlan &plan, const Matrix &q_text,
                                const Matrix &k_image, const Matrix &v_image,
                                std::optional<double> scale_opt) {
    CLEARLAB_CHECK(k_image.rows() == plan.grid.n_image(), "K must cover the image raster");
    const double s = scale_opt ? *scale_opt : 1.0 / std::sqrt(double(q_text.cols()));
    std::vector<Matrix> outs;
    std::vector<GroupStats> stats;
    patch_partials(plan, q_text, k_image, v_image, s, outs, stats);
    return combine_groups(outs, stats);
}

CommReport comm_report(const PatchPlan &plan, CommMode mode) {
    const uint64_t full = uint64_t(plan.grid.height) * plan.grid.width;
    CommReport r;
    if (mode == CommMode::FullSync) {
        r.tokens_per_pair = full;
        r.ratio = 1.0;
        return r;
    }
    r.tokens_per_pair = uint64_t(std::min<size_t>(plan.halo, plan.grid.height)) * plan.grid.width;
    r.ratio = double(r.tokens_per_pair) / double(full);
    return r;
}

InferenceTrace single_worker_trace(const ToyDit &model, const Matrix &z_at_t1, size_t klass,
                                   size_t steps) {
    CLEARLAB_CHECK(steps >= 1, "need at least one step");
    const TokenGrid grid = model.config().grid();
    InferenceTrace trace;
    Matrix z = z_at_t1;
    const double dt = 1.0 / double(steps);
    for (size_t s = 0; s < steps; ++s) {
        const double t = 1.0 - double(s) * dt;
        ToyDit::ForwardResult fwd = model.forward(z, t, klass);
        std::vector<Matrix> layer_rows;
        for (const auto &a : fwd.attn_outputs)
            layer_rows.push_back(a.slice_rows(grid.n_text, grid.n_total()));
        trace.attn_image_rows.push_back(std::move(layer_rows));
        for (size_t i = 0; i < z.size(); ++i) z.data()[i] -= dt * fwd.pred.data()[i];
        trace.z_steps.push_back(z);
    }
    trace.z_final = z;
    return trace;
}

namespace {

/// Angle table rows for tokens [text..] + image raster rows [ylo, yhi) of
/// the model's grid, in strip order.
std::vector<double> strip_angles(const ToyDit &model, size_t ylo, size_t yhi) {
    const ToyDitConfig &cfg = model.config();
    const TokenGrid grid = cfg.grid();
    RopeConfig rc(cfg.head_dim(), cfg.rope_base);
    std::vector<double> full = rope_angles(grid, rc);
    const size_t pairs = cfg.head_dim() / 2;
    std::vector<double> out;
    out.insert(out.end(), full.begin(), full.begin() + ptrdiff_t(grid.n_text * pairs));
    const size_t img0 = (grid.n_text + ylo * grid.width) * pairs;
    const size_t img1 = (grid.n_text + yhi * grid.width) * pairs;
    out.insert(out.end(), full.begin() + ptrdiff_t(img0), full.begin() + ptrdiff_t(img1));
    return out;
}

struct SimWorkerOutput {
    std::vector<Matrix> z_steps;                      // own rows after each step
    std::vector<std::vector<Matrix>> attn_image_rows; // [step][block], own rows
    Matrix text_final;                                // text features, sanity/debug
    std::string error;
};

void simulate_worker(size_t w, const PatchPlan &plan, const ToyDit &model, const Matrix &z_init,
                     size_t klass, size_t steps, TextMode mode, MailboxHub &hub,
                     SimWorkerOutput &out) {
    const ToyDitConfig &cfg = model.config();
    const TokenGrid grid = cfg.grid();
    const size_t N = plan.workers;
    const size_t nt = grid.n_text;
    const size_t W = grid.width;
    const auto [y0, y1] = plan.row_ranges[w];
    const size_t rows_own = y1 - y0;
    const StripRange strip = strip_of(plan, w);
    const size_t strip_rows = strip.yhi - strip.ylo;
    const size_t dh = cfg.head_dim();
    const double attn_scale = 1.0 / std::sqrt(double(dh));
    const size_t halo = plan.halo;

    const std::vector<double> own_angles = strip_angles(model, y0, y1);
    const std::vector<double> local_angles = strip_angles(model, strip.ylo, strip.yhi);
    const size_t pairs = dh / 2;
    // strip-local angle rows for image keys only (text rows are zero and
    // included in both tables above)
    Matrix addm = strip_additive_mask(plan, y0, rows_own, strip.ylo, strip_rows);

    Matrix z_own = z_init.slice_rows(y0 * W, y1 * W);
    const double dt = 1.0 / double(steps);
    size_t round = 0;

    for (size_t step = 0; step < steps; ++step) {
        const double t = 1.0 - double(step) * dt;

        // token features for text + own image rows (mirrors the tape path)
        Matrix x_img = matmul(z_own, model.param("w_in"));
        Matrix cls = model.param("class_embed").slice_rows(klass, klass + 1);
        Matrix x_text = model.param("text_bias");
        for (size_t i = 0; i < x_text.rows(); ++i)
            for (size_t c = 0; c < x_text.cols(); ++c) x_text(i, c) += cls(0, c);
        Matrix x = concat_rows(x_text, x_img);
        Matrix t_emb = matmul(ToyDit::time_features(t), model.param("t_proj"));
        for (size_t i = 0; i < x.rows(); ++i)
            for (size_t c = 0; c < x.cols(); ++c) x(i, c) += t_emb(0, c);

        std::vector<Matrix> step_attn;
        for (size_t b = 0; b < cfg.blocks; ++b) {
            message_barrier(hub, w, N, round);
            const std::string prefix = "block" + std::to_string(b);

            // halo exchange of raw token features
            if (w > 0)
                hub.send({MsgKind::HaloKv, w, w - 1, step, b,
                          x.slice_rows(nt, nt + halo * W), {}});
            if (w + 1 < N)
                hub.send({MsgKind::HaloKv, w, w + 1, step, b,
                          x.slice_rows(nt + (rows_own - halo) * W, nt + rows_own * W), {}});
            Matrix x_strip_img = x.slice_rows(nt, x.rows());
            if (w > 0) {
                WorkerMsg m = hub.receive(w, w - 1, step, b, MsgKind::HaloKv);
                x_strip_img = concat_rows(m.payload, x_strip_img);
            }
            if (w + 1 < N) {
                WorkerMsg m = hub.receive(w, w + 1, step, b, MsgKind::HaloKv);
                x_strip_img = concat_rows(x_strip_img, m.payload);
            }
            Matrix x_strip = concat_rows(x.slice_rows(0, nt), x_strip_img);

            Matrix q = matmul(x, model.param(prefix + ".wq"));
            Matrix k = matmul(x_strip, model.param(prefix + ".wk"));
            Matrix v = matmul(x_strip, model.param(prefix + ".wv"));

            Matrix merged;       // text + own image rows, heads side by side
            Matrix text_partial; // per-head eq7/exact partial payloads
            std::vector<double> text_aux;
            std::vector<Matrix> head_text_outs(cfg.heads);

            for (size_t h = 0; h < cfg.heads; ++h) {
                Matrix qh = rotate_pairs(q.slice_cols(h * dh, (h + 1) * dh), own_angles, false);
                Matrix kh = rotate_pairs(k.slice_cols(h * dh, (h + 1) * dh), local_angles, false);
                Matrix vh = v.slice_cols(h * dh, (h + 1) * dh);

                // image rows
                Matrix scores_img =
                    scale(matmul_nt(qh.slice_rows(nt, qh.rows()), kh), attn_scale);
                Matrix oh_img = matmul(softmax_rows(scores_img, addm), vh);

                Matrix head_rows;
                if (N == 1) {
                    Matrix ts = scale(matmul_nt(qh.slice_rows(0, nt), kh), attn_scale);
                    head_rows = concat_rows(matmul(softmax_rows(ts), vh), oh_img);
                } else {
                    // text rows need peer partials; filled in after the gather
                    Matrix q_text_h = qh.slice_rows(0, nt);
                    const size_t own0 = nt + (y0 - strip.ylo) * W;
                    const size_t own1 = own0 + rows_own * W;
                    Matrix ts = scale(matmul_nt(q_text_h, kh), attn_scale);
                    if (mode == TextMode::Exact) {
                        Matrix own_out;
                        GroupStats own_stats;
                        group_partial(ts, vh, own0, own1, own_out, own_stats);
                        Matrix text_out;
                        GroupStats text_stats;
                        group_partial(ts, vh, 0, nt, text_out, text_stats);
                        text_partial = (h == 0) ? own_out : concat_cols(text_partial, own_out);
                        // aux per head: own max, own mass, text max, text mass
                        text_aux.insert(text_aux.end(), own_stats.max_logit.begin(),
                                        own_stats.max_logit.end());
                        text_aux.insert(text_aux.end(), own_stats.mass.begin(),
                                        own_stats.mass.end());
                        text_aux.insert(text_aux.end(), text_stats.max_logit.begin(),
                                        text_stats.max_logit.end());
                        text_aux.insert(text_aux.end(), text_stats.mass.begin(),
                                        text_stats.mass.end());
                        head_text_outs[h] = text_out;
                    } else {
                        // deployment-style: softmax over [text keys; own patch keys]
                        Matrix sel(ts.rows(), ts.cols());
                        const double ninf = neg_infinity();
                        for (size_t i = 0; i < ts.rows(); ++i)
                            for (size_t j = nt; j < ts.cols(); ++j)
                                if (j < own0 || j >= own1) sel(i, j) = ninf;
                        Matrix ow = matmul(softmax_rows(ts, sel), vh);
                        text_partial = (h == 0) ? ow : concat_cols(text_partial, ow);
                    }
                    head_rows = concat_rows(Matrix(nt, dh), oh_img);
                }
                merged = (h == 0) ? head_rows : concat_cols(merged, head_rows);
            }

            if (N > 1) {
                // exchange per-head text partials, then fill the text rows
                for (size_t p = 0; p < N; ++p)
                    if (p != w)
                        hub.send({MsgKind::TextPartial, w, p, step, b, text_partial, text_aux});
                std::vector<Matrix> peer_payload(N);
                std::vector<std::vector<double>> peer_aux(N);
                peer_payload[w] = text_partial;
                peer_aux[w] = text_aux;
                for (size_t p = 0; p < N; ++p) {
                    if (p == w) continue;
                    WorkerMsg m = hub.receive(w, p, step, b, MsgKind::TextPartial);
                    peer_payload[p] = std::move(m.payload);
                    peer_aux[p] = std::move(m.aux);
                }
                for (size_t h = 0; h < cfg.heads; ++h) {
                    Matrix text_rows;
                    if (mode == TextMode::Exact) {
                        // groups: text keys (local), then patches 0..N-1
                        std::vector<Matrix> outs(N + 1);
                        std::vector<GroupStats> stats(N + 1);
                        outs[0] = head_text_outs[h];
                        // aux layout per head: [own m, own z, text m, text z]
                        const size_t per_head = 4 * nt;
                        const double *aux0 = text_aux.data() + h * per_head;
                        stats[0].max_logit.assign(aux0 + 2 * nt, aux0 + 3 * nt);
                        stats[0].mass.assign(aux0 + 3 * nt, aux0 + 4 * nt);
                        for (size_t p = 0; p < N; ++p) {
                            outs[1 + p] = peer_payload[p].slice_cols(h * dh, (h + 1) * dh);
                            const double *pa = peer_aux[p].data() + h * per_head;
                            stats[1 + p].max_logit.assign(pa, pa + nt);
                            stats[1 + p].mass.assign(pa + nt, pa + 2 * nt);
                        }
                        text_rows = combine_groups(outs, stats);
                    } else {
                        text_rows = Matrix(nt, dh);
                        for (size_t p = 0; p < N; ++p) {
                            Matrix piece = peer_payload[p].slice_cols(h * dh, (h + 1) * dh);
                            for (size_t i = 0; i < text_rows.size(); ++i)
                                text_rows.data()[i] += piece.data()[i];
                        }
                        for (auto &xval : text_rows.data()) xval /= double(N);
                    }
                    for (size_t i = 0; i < nt; ++i)
                        for (size_t c = 0; c < dh; ++c) merged(i, h * dh + c) = text_rows(i, c);
                }
            }

            Matrix attn_out = matmul(merged, model.param(prefix + ".wo"));
            step_attn.push_back(attn_out.slice_rows(nt, attn_out.rows()));
            x = add(x, attn_out);
            Matrix hdn = matmul(x, model.param(prefix + ".mlp_w1"));
            for (auto &xv : hdn.data()) {
                const double sg =
                    xv >= 0.0 ? 1.0 / (1.0 + std::exp(-xv)) : std::exp(xv) / (1.0 + std::exp(xv));
                xv = xv * sg;
            }
            x = add(x, matmul(hdn, model.param(prefix + ".mlp_w2")));
        }

        Matrix pred = matmul(x.slice_rows(nt, x.rows()), model.param("w_out"));
        for (size_t i = 0; i < z_own.size(); ++i) z_own.data()[i] -= dt * pred.data()[i];
        out.z_steps.push_back(z_own);
        out.attn_image_rows.push_back(std::move(step_attn));
        out.text_final = x.slice_rows(0, nt);
    }
}

} // namespace

SimulateResult simulate_inference(const PatchPlan &plan, const ToyDit &student,
                                  const Matrix &z_at_t1, size_t klass, size_t steps,
                                  TextMode text_mode) {
    const ToyDitConfig &cfg = student.config();
    const TokenGrid grid = cfg.grid();
    CLEARLAB_CHECK(plan.grid.n_text == grid.n_text && plan.grid.height == grid.height &&
                       plan.grid.width == grid.width,
                   "plan and model grids differ");
    CLEARLAB_CHECK(student.clear_radius() > 0.0, "student must carry circular-window masks");
    CLEARLAB_CHECK(plan.radius == student.clear_radius(), "plan radius != student mask radius");
    CLEARLAB_CHECK(z_at_t1.rows() == grid.n_image() && z_at_t1.cols() == cfg.latent_dim,
                   "z must be n_image x latent_dim");
    CLEARLAB_CHECK(steps >= 1, "need at least one step");

    const size_t N = plan.workers;
    MailboxHub hub(N);
    std::vector<SimWorkerOutput> outs(N);
    std::vector<std::thread> threads;
    for (size_t w = 0; w < N; ++w)
        threads.emplace_back([&, w]() {
            try {
                simulate_worker(w, plan, student, z_at_t1, klass, steps, text_mode, hub, outs[w]);
            } catch (const std::exception &e) {
                outs[w].error = e.what();
                hub.poison(e.what());
            }
        });
    for (auto &t : threads) t.join();
    for (const auto &o : outs)
        if (!o.error.empty()) throw CheckError(o.error);

    SimulateResult result;
    for (size_t s = 0; s < steps; ++s) {
        Matrix z;
        for (size_t w = 0; w < N; ++w)
            z = (w == 0) ? outs[w].z_steps[s] : concat_rows(z, outs[w].z_steps[s]);
        result.trace.z_steps.push_back(std::move(z));
        std::vector<Matrix> layers;
        for (size_t b = 0; b < cfg.blocks; ++b) {
            Matrix rows;
            for (size_t w = 0; w < N; ++w)
                rows = (w == 0) ? outs[w].attn_image_rows[s][b]
                                : concat_rows(rows, outs[w].attn_image_rows[s][b]);
            layers.push_back(std::move(rows));
        }
        result.trace.attn_image_rows.push_back(std::move(layers));
    }
    result.trace.z_final = result.trace.z_steps.back();
    result.ledger = hub.ledger_sorted();
    return result;
}

} // namespace clearlab
