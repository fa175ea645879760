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

#pragma once

#include <array>
#include <condition_variable>
#include <map>
#include <mutex>

#include "clearlab/attention.hpp"
#include "clearlab/toy_dit.hpp"

namespace clearlab {

/// Vertical partition of the image raster for N simulated workers. Worker
/// w owns raster rows [row_ranges[w].first, row_ranges[w].second); the last
/// worker absorbs remainder rows. Interior boundaries exchange ceil(r) halo
/// rows (one row of slack over the strict-circle minimum).
struct PatchPlan {
    TokenGrid grid;
    double radius = 0.0;
    size_t workers = 0;
    size_t halo = 0;
    std::vector<std::pair<size_t, size_t>> row_ranges;

    size_t patch_rows(size_t w) const {
        return row_ranges[w].second - row_ranges[w].first;
    }
};

/// Fails (mirroring the published NA configurations) when patches would be
/// thinner than the halo.
PatchPlan make_plan(const TokenGrid &grid, size_t workers, double r);

enum class MsgKind : uint8_t { HaloKv = 0, TextPartial = 1, Barrier = 2 };

const char *msg_kind_name(MsgKind k);

struct WorkerMsg {
    MsgKind kind = MsgKind::Barrier;
    size_t sender = 0;
    size_t receiver = 0;
    size_t step = 0;
    size_t layer = 0;
    Matrix payload;
    std::vector<double> aux; // per-row log-sum-exp stats for text partials
};

struct LedgerEntry {
    size_t step = 0;
    size_t layer = 0;
    size_t sender = 0;
    size_t receiver = 0;
    MsgKind kind = MsgKind::HaloKv;
    size_t token_count = 0;
    bool received = false; // one entry per send and one per receive
};

/// Typed mailboxes keyed by (sender, step, layer, kind). receive() blocks
/// on exactly the expected tag; a missing message surfaces as a timeout
/// error rather than a hang, which is the deadlock detector.
class MailboxHub {
public:
    explicit MailboxHub(size_t workers, int timeout_ms = 120000);

    void send(WorkerMsg msg);
    WorkerMsg receive(size_t receiver, size_t sender, size_t step, size_t layer, MsgKind kind);

    /// Wake every waiting worker with an error (used when a peer throws).
    void poison(const std::string &reason);

    std::vector<LedgerEntry> ledger_sorted() const;

private:
    using Tag = std::array<size_t, 4>; // sender, step, layer, kind

    void record(const WorkerMsg &msg, bool received);

    size_t workers_;
    int timeout_ms_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::vector<std::map<Tag, std::vector<WorkerMsg>>> boxes_;
    std::vector<LedgerEntry> ledger_;
    bool poisoned_ = false;
    std::string poison_reason_;
};

struct DistributedAttentionResult {
    Matrix output; // full n x c', text rows via exact recombination
    std::vector<LedgerEntry> ledger;
};

/// Multi-worker exact CLEAR attention: each worker computes its own image
/// rows from its patch plus received halo keys; image rows reproduce the
/// single-worker masked_attention bit-for-bit (gated at 1e-10 rel).
DistributedAttentionResult distributed_clear_attention(const PatchPlan &plan,
                                                       const AttentionInputs &in, double r);

/// Uniform patch-average approximation of text-token attention: patch key
/// sets are the plan's image rows only. scale defaults to 1/sqrt(c).
Matrix text_patch_average(const PatchPlan &plan, const Matrix &q_text, const Matrix &k_image,
                          const Matrix &v_image, std::optional<double> scale = std::nullopt);

/// Exact log-sum-exp recombination over the same patch partials; equal to
/// dense attention of the text rows over all image keys.
Matrix text_exact_recombination(const PatchPlan &plan, const Matrix &q_text,
                                const Matrix &k_image, const Matrix &v_image,
                                std::optional<double> scale = std::nullopt);

struct CommReport {
    uint64_t tokens_per_pair = 0;
    double ratio = 0.0; // clear halo traffic / full KV sync
};

enum class CommMode { Clear, FullSync };

CommReport comm_report(const PatchPlan &plan, CommMode mode);

enum class TextMode : uint8_t { Exact = 0, Average = 1 };

struct InferenceTrace {
    Matrix z_final;
    std::vector<Matrix> z_steps; // z after each Euler step
    // [step][block] -> attention outputs of the image rows
    std::vector<std::vector<Matrix>> attn_image_rows;
};

/// Reference single-worker Euler trajectory with per-step/per-layer capture.
InferenceTrace single_worker_trace(const ToyDit &model, const Matrix &z_at_t1, size_t klass,
                                   size_t steps);

struct SimulateResult {
    InferenceTrace trace;
    std::vector<LedgerEntry> ledger;
};

/// N concurrent workers run the full denoising loop with per-layer
/// barrier-synchronized halo and text-partial exchange. Exact text mode
/// matches the single-worker run to fp noise; Average mode is the uniform
/// patch-average approximation. N=1 is bit-identical to the reference.
SimulateResult simulate_inference(const PatchPlan &plan, const ToyDit &student,
                                  const Matrix &z_at_t1, size_t klass, size_t steps,
                                  TextMode text_mode);

} // namespace clearlab
