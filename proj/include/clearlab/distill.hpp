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

#include <string>
#include <vector>

#include "clearlab/toy_dit.hpp"

namespace clearlab {

/// Rectified-flow sample: z_t = (1-t) z0 + t eps, target velocity eps - z0.
struct FlowSample {
    Matrix z0;
    Matrix eps;
    double t = 0.0;
    size_t klass = 0;

    Matrix z_t() const;
    Matrix target() const; // eps - z0
};

struct DistillConfig {
    double alpha = 0.5;
    double beta = 0.5;
    std::vector<size_t> attn_loss_layers; // empty -> second half of blocks
    size_t steps = 2000;
    size_t batch = 2;
    double lr = 2e-3;
    uint64_t seed = 0;

    std::vector<size_t> resolved_layers(size_t blocks) const;
};

struct LabeledLatent {
    Matrix z0;
    size_t klass = 0;
};

struct ToyDataset {
    std::vector<LabeledLatent> items;

    void save(const std::string &path) const;
    static ToyDataset load(const std::string &path);
    uint64_t content_hash() const;
};

/// Class-conditioned Gaussian mixture over token fields: class k draws
/// z0 = mu_k + noise_std * N(0, I). Means are fixed by the task seed.
struct SyntheticTask {
    std::vector<Matrix> class_means;
    double noise_std = 0.25;

    SyntheticTask(const ToyDitConfig &cfg, uint64_t task_seed);
    LabeledLatent sample(Rng &rng) const;
    ToyDataset make_dataset(size_t count, Rng &rng) const;
};

double flow_matching_loss(const ToyDit &model, const FlowSample &sample);

struct DistillLosses {
    double fm = 0.0;
    double pred = 0.0;
    double attn = 0.0;
    double total(double alpha, double beta) const { return fm + alpha * pred + beta * attn; }
};

/// L_fm, L_pred and the per-layer attention-output loss between a student
/// and its teacher on one sample. Layer indices outside the model are an
/// error; an empty layer set makes L_attn zero by convention.
DistillLosses distill_losses(const ToyDit &student, const ToyDit &teacher,
                             const FlowSample &sample, const DistillConfig &cfg);

struct LossCurveRow {
    size_t step = 0;
    double fm = 0.0;
    double pred = 0.0;
    double attn = 0.0;
    double total = 0.0;
};

struct TrainResult {
    std::vector<LossCurveRow> curve;
};

/// Adam steps on the combined objective, restricted to attention weights.
/// Non-attention weights come out bit-identical. Aborts with a diagnostic
/// if the loss goes non-finite.
TrainResult train_distill(ToyDit &student, const ToyDit &teacher, const ToyDataset &dataset,
                          const DistillConfig &cfg);

/// Plain flow-matching pre-training (teacher setup); updates every weight.
TrainResult train_flow_matching(ToyDit &model, const ToyDataset &dataset, size_t steps,
                                size_t batch, double lr, uint64_t seed);

/// Euler sampler from t=1 noise down to t=0 over `sampler_steps`, paired
/// with the class conditions that produced them.
ToyDataset generate_teacher_dataset(const ToyDit &teacher, size_t count, size_t sampler_steps,
                                    uint64_t seed);

/// One Euler denoising trajectory (exposed for inference tests/CLI).
Matrix euler_sample(const ToyDit &model, const Matrix &z_at_t1, size_t klass,
                    size_t sampler_steps);

} // namespace clearlab
