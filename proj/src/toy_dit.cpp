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

#include "clearlab/toy_dit.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

namespace clearlab {

namespace {

constexpr char kCkptMagic[8] = {'C', 'L', 'C', 'K', 'P', 'T', '0', '1'};
constexpr size_t kTimeFreqs = 4;

} // namespace

void ToyDitConfig::validate() const {
    CLEARLAB_CHECK(width % heads == 0, "width must be divisible by heads");
    CLEARLAB_CHECK((width / heads) % 4 == 0, "head_dim must be a multiple of 4 for 2D rope");
    CLEARLAB_CHECK(blocks >= 1 && n_classes >= 1 && latent_dim >= 1, "degenerate config");
    CLEARLAB_CHECK(n_text >= 1, "need at least one text token");
}

bool is_attention_param(const std::string &name) {
    return name.find(".wq") != std::string::npos || name.find(".wk") != std::string::npos ||
           name.find(".wv") != std::string::npos || name.find(".wo") != std::string::npos;
}

ToyDit::ToyDit(ToyDitConfig cfg, uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    const size_t c = cfg_.width;
    const size_t hidden = cfg_.mlp_ratio * c;

    names_ = {"class_embed", "t_proj", "text_bias", "w_in", "w_out"};
    for (size_t b = 0; b < cfg_.blocks; ++b) {
        const std::string p = "block" + std::to_string(b);
        for (const char *s : {".wq", ".wk", ".wv", ".wo", ".mlp_w1", ".mlp_w2"})
            names_.push_back(p + s);
    }

    Rng rng(init_seed ^ 0x746f79646974ull);
    auto init = [&](size_t rows, size_t cols, double stddev) {
        return Matrix::random_normal(rows, cols, rng, stddev);
    };
    params_["class_embed"] = init(cfg_.n_classes, c, 1.0);
    params_["t_proj"] = init(2 * kTimeFreqs, c, 1.0 / std::sqrt(double(2 * kTimeFreqs)));
    params_["text_bias"] = init(cfg_.n_text, c, 0.5);
    params_["w_in"] = init(cfg_.latent_dim, c, 1.0 / std::sqrt(double(cfg_.latent_dim)));
    params_["w_out"] = init(c, cfg_.latent_dim, 0.02);
    const double wstd = 1.0 / std::sqrt(double(c));
    for (size_t b = 0; b < cfg_.blocks; ++b) {
        const std::string p = "block" + std::to_string(b);
        params_[p + ".wq"] = init(c, c, wstd);
        params_[p + ".wk"] = init(c, c, wstd);
        params_[p + ".wv"] = init(c, c, wstd);
        params_[p + ".wo"] = init(c, c, wstd);
        params_[p + ".mlp_w1"] = init(c, hidden, wstd);
        params_[p + ".mlp_w2"] = init(hidden, c, 1.0 / std::sqrt(double(hidden)));
    }

    set_masks_full();
    RopeConfig rc(cfg_.head_dim(), cfg_.rope_base);
    head_angles_ = std::make_shared<const std::vector<double>>(rope_angles(cfg_.grid(), rc));
}

Matrix &ToyDit::param(const std::string &name) {
    auto it = params_.find(name);
    CLEARLAB_CHECK(it != params_.end(), "unknown parameter: " + name);
    return it->second;
}

const Matrix &ToyDit::param(const std::string &name) const {
    auto it = params_.find(name);
    CLEARLAB_CHECK(it != params_.end(), "unknown parameter: " + name);
    return it->second;
}

void ToyDit::set_masks_full() {
    masks_.assign(cfg_.blocks, std::make_shared<const AttentionMask>(build_full(cfg_.grid())));
    clear_radius_ = 0.0;
}

void ToyDit::set_masks_clear(double radius) {
    masks_.assign(cfg_.blocks,
                  std::make_shared<const AttentionMask>(build_clear(cfg_.grid(), radius)));
    clear_radius_ = radius;
}

Matrix ToyDit::time_features(double t) {
    Matrix f(1, 2 * kTimeFreqs);
    for (size_t k = 0; k < kTimeFreqs; ++k) {
        const double w = 2.0 * std::numbers::pi * double(1u << k);
        f(0, 2 * k) = std::sin(w * t);
        f(0, 2 * k + 1) = std::cos(w * t);
    }
    return f;
}

ToyDit::ForwardNodes ToyDit::build_forward(Tape &tape, const Matrix &z_t, double t,
                                           size_t klass) const {
    const TokenGrid grid = cfg_.grid();
    CLEARLAB_CHECK(z_t.rows() == grid.n_image() && z_t.cols() == cfg_.latent_dim,
                   "z_t must be n_image x latent_dim");
    CLEARLAB_CHECK(klass < cfg_.n_classes, "class index out of range");

    ForwardNodes out;
    for (const auto &name : names_)
        out.param_nodes[name] = tape.input(params_.at(name), is_attention_param(name));
    auto P = [&](const std::string &name) { return out.param_nodes.at(name); };

    const size_t dh = cfg_.head_dim();
    const double attn_scale = 1.0 / std::sqrt(double(dh));

    Tape::NodeId z_in = tape.input(z_t);
    Tape::NodeId x_img = tape.matmul(z_in, P("w_in"));
    Tape::NodeId cls_row = tape.slice_rows(P("class_embed"), klass, klass + 1);
    Tape::NodeId text = tape.add_row_broadcast(P("text_bias"), cls_row);
    Tape::NodeId x = tape.concat_rows(text, x_img);
    Tape::NodeId t_emb = tape.matmul(tape.input(time_features(t)), P("t_proj"));
    x = tape.add_row_broadcast(x, t_emb);

    for (size_t b = 0; b < cfg_.blocks; ++b) {
        const std::string p = "block" + std::to_string(b);
        Tape::NodeId q = tape.matmul(x, P(p + ".wq"));
        Tape::NodeId k = tape.matmul(x, P(p + ".wk"));
        Tape::NodeId v = tape.matmul(x, P(p + ".wv"));
        Tape::NodeId merged = -1;
        for (size_t h = 0; h < cfg_.heads; ++h) {
            Tape::NodeId qh = tape.rope(tape.slice_cols(q, h * dh, (h + 1) * dh), head_angles_);
            Tape::NodeId kh = tape.rope(tape.slice_cols(k, h * dh, (h + 1) * dh), head_angles_);
            Tape::NodeId vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
            Tape::NodeId scores = tape.scale(tape.matmul_nt(qh, kh), attn_scale);
            Tape::NodeId probs = tape.masked_softmax(scores, masks_[b]);
            Tape::NodeId oh = tape.matmul(probs, vh);
            merged = (h == 0) ? oh : tape.concat_cols(merged, oh);
        }
        Tape::NodeId attn_out = tape.matmul(merged, P(p + ".wo"));
        out.attn_outputs.push_back(attn_out);
        x = tape.add(x, attn_out);
        Tape::NodeId hdn = tape.silu(tape.matmul(x, P(p + ".mlp_w1")));
        x = tape.add(x, tape.matmul(hdn, P(p + ".mlp_w2")));
    }

    Tape::NodeId img_rows = tape.slice_rows(x, grid.n_text, grid.n_total());
    out.pred = tape.matmul(img_rows, P("w_out"));
    return out;
}

ToyDit::ForwardResult ToyDit::forward(const Matrix &z_t, double t, size_t klass) const {
    Tape tape;
    ForwardNodes nodes = build_forward(tape, z_t, t, klass);
    ForwardResult r;
    r.pred = tape.value(nodes.pred);
    for (Tape::NodeId id : nodes.attn_outputs) r.attn_outputs.push_back(tape.value(id));
    return r;
}

void ToyDit::save(const std::string &path) const {
    std::ofstream f(path, std::ios::binary);
    CLEARLAB_CHECK(f.good(), "cannot open checkpoint for writing: " + path);
    f.write(kCkptMagic, 8);
    auto put_u64 = [&](uint64_t v) { f.write(reinterpret_cast<const char *>(&v), 8); };
    auto put_f64 = [&](double v) { f.write(reinterpret_cast<const char *>(&v), 8); };
    put_u64(1); // version
    put_u64(cfg_.grid_h);
    put_u64(cfg_.grid_w);
    put_u64(cfg_.n_text);
    put_u64(cfg_.width);
    put_u64(cfg_.heads);
    put_u64(cfg_.blocks);
    put_u64(cfg_.latent_dim);
    put_u64(cfg_.mlp_ratio);
    put_u64(cfg_.n_classes);
    put_f64(cfg_.rope_base);
    put_f64(clear_radius_);
    put_u64(names_.size());
    for (const auto &name : names_) {
        const Matrix &m = params_.at(name);
        put_u64(name.size());
        f.write(name.data(), std::streamsize(name.size()));
        put_u64(m.rows());
        put_u64(m.cols());
        f.write(reinterpret_cast<const char *>(m.data().data()),
                std::streamsize(m.size() * sizeof(double)));
    }
    CLEARLAB_CHECK(f.good(), "checkpoint write failed: " + path);
}

ToyDit ToyDit::load(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    CLEARLAB_CHECK(f.good(), "cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    CLEARLAB_CHECK(f.good() && std::equal(magic, magic + 8, kCkptMagic),
                   "bad checkpoint magic");
    auto get_u64 = [&]() {
        uint64_t v = 0;
        f.read(reinterpret_cast<char *>(&v), 8);
        return v;
    };
    auto get_f64 = [&]() {
        double v = 0;
        f.read(reinterpret_cast<char *>(&v), 8);
        return v;
    };
    CLEARLAB_CHECK(get_u64() == 1, "unsupported checkpoint version");
    ToyDitConfig cfg;
    cfg.grid_h = get_u64();
    cfg.grid_w = get_u64();
    cfg.n_text = get_u64();
    cfg.width = get_u64();
    cfg.heads = get_u64();
    cfg.blocks = get_u64();
    cfg.latent_dim = get_u64();
    cfg.mlp_ratio = get_u64();
    cfg.n_classes = get_u64();
    cfg.rope_base = get_f64();
    double radius = get_f64();

    ToyDit model(cfg, 0);
    uint64_t n_tensors = get_u64();
    CLEARLAB_CHECK(n_tensors == model.names_.size(), "checkpoint tensor count mismatch");
    for (uint64_t i = 0; i < n_tensors; ++i) {
        uint64_t name_len = get_u64();
        std::string name(name_len, '\0');
        f.read(name.data(), std::streamsize(name_len));
        uint64_t rows = get_u64(), cols = get_u64();
        Matrix &dst = model.param(name);
        CLEARLAB_CHECK(dst.rows() == rows && dst.cols() == cols,
                       "checkpoint tensor shape mismatch: " + name);
        f.read(reinterpret_cast<char *>(dst.data().data()),
               std::streamsize(rows * cols * sizeof(double)));
    }
    CLEARLAB_CHECK(f.good(), "checkpoint payload truncated: " + path);
    if (radius > 0.0)
        model.set_masks_clear(radius);
    else
        model.set_masks_full();
    return model;
}

uint64_t ToyDit::weights_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto &name : names_) {
        const Matrix &m = params_.at(name);
        h = fnv1a(name.data(), name.size(), h);
        h = fnv1a(m.data().data(), m.size() * sizeof(double), h);
    }
    return h;
}

uint64_t ToyDit::frozen_weights_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto &name : names_) {
        if (is_attention_param(name)) continue;
        const Matrix &m = params_.at(name);
        h = fnv1a(name.data(), name.size(), h);
        h = fnv1a(m.data().data(), m.size() * sizeof(double), h);
    }
    return h;
}

} // namespace clearlab
