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

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "clearlab/mask.hpp"
#include "clearlab/rope.hpp"
#include "clearlab/tape.hpp"

namespace clearlab {

/// Small text-image joint-attention flow-matching transformer. Every block
/// runs multi-head attention over the concatenated [text; image] sequence
/// (RoPE on image tokens, per-layer mask slot) followed by a per-token MLP;
/// the timestep enters as an additive embedding.
struct ToyDitConfig {
    size_t grid_h = 8;
    size_t grid_w = 8;
    size_t n_text = 4;
    size_t width = 64; // token feature dim
    size_t heads = 4;
    size_t blocks = 4;
    size_t latent_dim = 4; // per-image-token latent channels
    size_t mlp_ratio = 2;
    size_t n_classes = 4;
    double rope_base = 10000.0;

    TokenGrid grid() const { return TokenGrid(n_text, grid_h, grid_w); }
    size_t head_dim() const { return width / heads; }
    void validate() const;
    bool operator==(const ToyDitConfig &) const = default;
};

/// Attention weights (the distillation trainables) are the per-block
/// wq/wk/wv/wo tensors; everything else is frozen during distillation.
bool is_attention_param(const std::string &name);

class ToyDit {
public:
    ToyDit(ToyDitConfig cfg, uint64_t init_seed);

    const ToyDitConfig &config() const { return cfg_; }

    /// Ordered parameter names (fixed, independent of container internals).
    const std::vector<std::string> &param_names() const { return names_; }
    Matrix &param(const std::string &name);
    const Matrix &param(const std::string &name) const;

    /// One mask slot per block. Full for a teacher, circular-window for a
    /// linearized student.
    void set_masks_full();
    void set_masks_clear(double radius);
    std::shared_ptr<const AttentionMask> mask(size_t block) const { return masks_.at(block); }
    double clear_radius() const { return clear_radius_; } // 0 when full

    /// Build the forward graph on a tape. Returns the prediction node
    /// (n_image x latent_dim) plus the per-block attention output nodes.
    struct ForwardNodes {
        Tape::NodeId pred = -1;
        std::vector<Tape::NodeId> attn_outputs;
        std::map<std::string, Tape::NodeId> param_nodes;
    };
    ForwardNodes build_forward(Tape &tape, const Matrix &z_t, double t, size_t klass) const;

    /// Plain forward (fresh tape internally, no gradients).
    struct ForwardResult {
        Matrix pred;
        std::vector<Matrix> attn_outputs;
    };
    ForwardResult forward(const Matrix &z_t, double t, size_t klass) const;

    /// Timestep Fourier features (fixed frequencies, not trainable).
    static Matrix time_features(double t);

    void save(const std::string &path) const;
    static ToyDit load(const std::string &path);

    uint64_t weights_hash() const;
    /// Hash over the non-attention tensors only (frozen-weight checks).
    uint64_t frozen_weights_hash() const;

private:
    ToyDitConfig cfg_;
    std::vector<std::string> names_;
    std::map<std::string, Matrix> params_;
    std::vector<std::shared_ptr<const AttentionMask>> masks_;
    std::shared_ptr<const std::vector<double>> head_angles_;
    double clear_radius_ = 0.0;
};

} // namespace clearlab
