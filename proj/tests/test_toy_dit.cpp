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

#include <cmath>
#include <cstdio>

#include <doctest.h>

#include "clearlab/distill.hpp"

using namespace clearlab;

namespace {

ToyDitConfig tiny_config() {
    ToyDitConfig cfg;
    cfg.grid_h = 4;
    cfg.grid_w = 4;
    cfg.n_text = 2;
    cfg.width = 16;
    cfg.heads = 2;
    cfg.blocks = 2;
    cfg.latent_dim = 3;
    cfg.n_classes = 3;
    return cfg;
}

FlowSample make_sample(const ToyDitConfig &cfg, uint64_t seed) {
    Rng rng(seed);
    FlowSample s;
    s.z0 = Matrix::random_normal(cfg.grid_h * cfg.grid_w, cfg.latent_dim, rng);
    s.eps = Matrix::random_normal(cfg.grid_h * cfg.grid_w, cfg.latent_dim, rng);
    s.t = rng.uniform();
    s.klass = size_t(rng.uniform_int(cfg.n_classes));
    return s;
}

} // namespace

TEST_CASE("zero output projection gives zero prediction") {
    ToyDit model(tiny_config(), 41);
    for (auto &v : model.param("w_out").data()) v = 0.0;
    FlowSample s = make_sample(model.config(), 42);
    Matrix pred = model.forward(s.z_t(), s.t, s.klass).pred;
    for (double v : pred.data()) CHECK(v == 0.0);
}

TEST_CASE("forward is deterministic and shape-checked") {
    ToyDit model(tiny_config(), 43);
    FlowSample s = make_sample(model.config(), 44);
    Matrix a = model.forward(s.z_t(), s.t, s.klass).pred;
    Matrix b = model.forward(s.z_t(), s.t, s.klass).pred;
    CHECK(max_abs_diff(a, b) == 0.0);
    CHECK(a.rows() == model.config().grid_h * model.config().grid_w);
    CHECK(a.cols() == model.config().latent_dim);
    Matrix bad(3, 3);
    CHECK_THROWS_AS(model.forward(bad, 0.5, 0), CheckError);
    CHECK_THROWS_AS(model.forward(s.z_t(), 0.5, 99), CheckError);
}

TEST_CASE("teacher full mask equals student with covering clear radius") {
    ToyDitConfig cfg = tiny_config();
    ToyDit teacher(cfg, 45);
    ToyDit student = teacher;
    student.set_masks_clear(20.0); // radius > grid diagonal: mask is all-ones
    FlowSample s = make_sample(cfg, 46);
    Matrix tp = teacher.forward(s.z_t(), s.t, s.klass).pred;
    Matrix sp = student.forward(s.z_t(), s.t, s.klass).pred;
    CHECK(max_abs_diff(tp, sp) < 1e-10);
}

TEST_CASE("text permutation symmetry: class content moves with y") {
    // identical text content and unrotated text positions mean swapping the
    // class only changes outputs through the class embedding content
    ToyDitConfig cfg = tiny_config();
    ToyDit model(cfg, 47);
    // make two classes share one embedding row; predictions must match
    Matrix &emb = model.param("class_embed");
    for (size_t c = 0; c < emb.cols(); ++c) emb(1, c) = emb(0, c);
    FlowSample s = make_sample(cfg, 48);
    Matrix p0 = model.forward(s.z_t(), s.t, 0).pred;
    Matrix p1 = model.forward(s.z_t(), s.t, 1).pred;
    CHECK(max_abs_diff(p0, p1) == 0.0);
}

TEST_CASE("flow matching loss closed forms") {
    ToyDitConfig cfg = tiny_config();
    ToyDit model(cfg, 49);
    FlowSample s = make_sample(cfg, 50);

    // prediction == target -> loss 0: rig w_out to zero and target to zero
    FlowSample degenerate = s;
    degenerate.eps = degenerate.z0; // target = 0
    ToyDit zeroed = model;
    for (auto &v : zeroed.param("w_out").data()) v = 0.0;
    CHECK(flow_matching_loss(zeroed, degenerate) == 0.0);

    // prediction == 0 -> loss = mean ||eps - z0||^2
    double want = 0.0;
    Matrix target = s.target();
    for (double v : target.data()) want += v * v;
    want /= double(target.size());
    CHECK(flow_matching_loss(zeroed, s) == doctest::Approx(want).epsilon(1e-12));

    // random small case vs direct arithmetic
    Matrix pred = model.forward(s.z_t(), s.t, s.klass).pred;
    double direct = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        double d = target.data()[i] - pred.data()[i];
        direct += d * d;
    }
    direct /= double(pred.size());
    CHECK(flow_matching_loss(model, s) == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("distill losses: identical models give zero pred and attn loss") {
    ToyDitConfig cfg = tiny_config();
    ToyDit teacher(cfg, 51);
    ToyDit student = teacher; // same weights, same full masks
    FlowSample s = make_sample(cfg, 52);
    DistillConfig dc;
    DistillLosses l = distill_losses(student, teacher, s, dc);
    CHECK(l.pred == 0.0);
    CHECK(l.attn == 0.0);
    CHECK(l.fm > 0.0);
}

TEST_CASE("empty layer set makes L_attn zero by convention") {
    ToyDitConfig cfg = tiny_config();
    ToyDit teacher(cfg, 53);
    ToyDit student = teacher;
    student.set_masks_clear(1.5);
    FlowSample s = make_sample(cfg, 54);
    DistillConfig dc;
    dc.attn_loss_layers = {0}; // explicit singleton first
    DistillLosses with_layer = distill_losses(student, teacher, s, dc);
    CHECK(with_layer.attn > 0.0);

    // out-of-range layer errors
    DistillConfig bad;
    bad.attn_loss_layers = {7};
    CHECK_THROWS_AS(distill_losses(student, teacher, s, bad), CheckError);
}

TEST_CASE("one-block model: L_attn equals the single-layer squared gap") {
    ToyDitConfig cfg = tiny_config();
    cfg.blocks = 1;
    ToyDit teacher(cfg, 55);
    ToyDit student = teacher;
    student.set_masks_clear(1.2);
    FlowSample s = make_sample(cfg, 56);
    DistillConfig dc;
    dc.attn_loss_layers = {0};
    DistillLosses l = distill_losses(student, teacher, s, dc);
    Matrix ta = teacher.forward(s.z_t(), s.t, s.klass).attn_outputs[0];
    Matrix sa = student.forward(s.z_t(), s.t, s.klass).attn_outputs[0];
    double want = 0.0;
    for (size_t i = 0; i < ta.size(); ++i) {
        double d = ta.data()[i] - sa.data()[i];
        want += d * d;
    }
    want /= double(ta.size());
    CHECK(l.attn == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("default attention loss layers are the second half of blocks") {
    DistillConfig dc;
    CHECK(dc.resolved_layers(4) == std::vector<size_t>{2, 3});
    CHECK(dc.resolved_layers(6) == std::vector<size_t>{3, 4, 5});
}

TEST_CASE("zero training steps leave the student unchanged") {
    ToyDitConfig cfg = tiny_config();
    ToyDit teacher(cfg, 57);
    ToyDit student = teacher;
    student.set_masks_clear(1.5);
    uint64_t before = student.weights_hash();
    SyntheticTask task(cfg, 58);
    Rng rng(59);
    ToyDataset ds = task.make_dataset(4, rng);
    DistillConfig dc;
    dc.steps = 0;
    train_distill(student, teacher, ds, dc);
    CHECK(student.weights_hash() == before);
}

TEST_CASE("covering radius: distillation terms are numerically zero at init") {
    ToyDitConfig cfg = tiny_config();
    ToyDit teacher(cfg, 60);
    ToyDit student = teacher;
    student.set_masks_clear(30.0); // covers the whole grid
    FlowSample s = make_sample(cfg, 61);
    DistillConfig dc;
    DistillLosses l = distill_losses(student, teacher, s, dc);
    CHECK(l.pred < 1e-24);
    CHECK(l.attn < 1e-24);
}

TEST_CASE("short distillation run decreases losses and freezes non-attention weights") {
    ToyDitConfig cfg = tiny_config();
    ToyDit teacher(cfg, 62);
    SyntheticTask task(cfg, 62);
    Rng rng(63);
    ToyDataset pretrain = task.make_dataset(16, rng);
    train_flow_matching(teacher, pretrain, 30, 2, 2e-3, 64);

    ToyDit student = teacher;
    student.set_masks_clear(1.5);
    uint64_t frozen_before = student.frozen_weights_hash();

    DistillConfig dc;
    dc.steps = 60;
    dc.batch = 2;
    dc.seed = 65;
    TrainResult r = train_distill(student, teacher, pretrain, dc);
    REQUIRE(r.curve.size() == 60);
    CHECK(student.frozen_weights_hash() == frozen_before);

    double first = 0.0, last = 0.0;
    for (size_t i = 0; i < 10; ++i) {
        first += r.curve[i].pred;
        last += r.curve[r.curve.size() - 1 - i].pred;
    }
    CHECK(last < first); // averaged L_pred trending down

    // determinism: identical seeds, identical curves
    ToyDit student2 = teacher;
    student2.set_masks_clear(1.5);
    TrainResult r2 = train_distill(student2, teacher, pretrain, dc);
    for (size_t i = 0; i < r.curve.size(); ++i) {
        CHECK(r.curve[i].total == r2.curve[i].total);
    }
    CHECK(student.weights_hash() == student2.weights_hash());
}

TEST_CASE("training aborts on divergence with a diagnostic") {
    ToyDitConfig cfg = tiny_config();
    ToyDit teacher(cfg, 66);
    ToyDit student = teacher;
    student.set_masks_clear(1.5);
    // a catastphically large learning rate puts NaNs into the weights fast
    SyntheticTask task(cfg, 66);
    Rng rng(67);
    ToyDataset ds = task.make_dataset(4, rng);
    for (auto &item : ds.items)
        for (auto &v : item.z0.data()) v *= 1e150; // overflow fuel
    DistillConfig dc;
    dc.steps = 50;
    dc.lr = 1e280;
    CHECK_THROWS_WITH_AS(train_distill(student, teacher, ds, dc),
                         doctest::Contains("diverged"), CheckError);
}

TEST_CASE("euler sampler: perfect linear field recovers z0 in one step") {
    // build a "model" whose prediction is exactly eps - z0 by construction:
    // impossible with random weights, so instead check the integrator math
    // on a hand-rolled velocity: z1 = eps, v = eps - z0 constant
    ToyDitConfig cfg = tiny_config();
    Rng rng(68);
    Matrix z0 = Matrix::random_normal(cfg.grid_h * cfg.grid_w, cfg.latent_dim, rng);
    Matrix eps = Matrix::random_normal(cfg.grid_h * cfg.grid_w, cfg.latent_dim, rng);
    // Euler with the true velocity: one step from t=1: z0_hat = eps - 1*(eps-z0)
    Matrix z = eps;
    Matrix v = sub(eps, z0);
    for (size_t i = 0; i < z.size(); ++i) z.data()[i] -= 1.0 * v.data()[i];
    CHECK(max_abs_diff(z, z0) < 1e-14);
}

TEST_CASE("teacher dataset generation is seed-reproducible") {
    ToyDitConfig cfg = tiny_config();
    ToyDit teacher(cfg, 69);
    ToyDataset a = generate_teacher_dataset(teacher, 3, 5, 1234);
    ToyDataset b = generate_teacher_dataset(teacher, 3, 5, 1234);
    CHECK(a.content_hash() == b.content_hash());
    ToyDataset c = generate_teacher_dataset(teacher, 3, 5, 999);
    CHECK(a.content_hash() != c.content_hash());
}

TEST_CASE("dataset save/load round-trips") {
    ToyDitConfig cfg = tiny_config();
    SyntheticTask task(cfg, 70);
    Rng rng(71);
    ToyDataset ds = task.make_dataset(5, rng);
    ds.save("test_dataset_roundtrip.bin");
    ToyDataset back = ToyDataset::load("test_dataset_roundtrip.bin");
    std::remove("test_dataset_roundtrip.bin");
    CHECK(back.content_hash() == ds.content_hash());
}

TEST_CASE("checkpoint save/load round-trips weights and masks") {
    ToyDitConfig cfg = tiny_config();
    ToyDit model(cfg, 72);
    model.set_masks_clear(1.5);
    model.save("test_ckpt_roundtrip.bin");
    ToyDit back = ToyDit::load("test_ckpt_roundtrip.bin");
    std::remove("test_ckpt_roundtrip.bin");
    CHECK(back.weights_hash() == model.weights_hash());
    CHECK(back.clear_radius() == 1.5);
    FlowSample s = make_sample(cfg, 73);
    CHECK(max_abs_diff(back.forward(s.z_t(), s.t, s.klass).pred,
                       model.forward(s.z_t(), s.t, s.klass).pred) == 0.0);
}
