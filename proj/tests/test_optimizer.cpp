#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <vector>

#include "ftforge/optimizer.hpp"

using namespace ftforge;

namespace {

ModelConfig tiny_config() {
  ModelConfig mc;
  mc.vocab_size = 8;
  mc.embed_dim = 3;
  mc.hidden_dim = 4;
  mc.max_decode_len = 6;
  return mc;
}

std::vector<Tensor> random_grads(const ParamBundle& params, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> grads = params.zero_like_trainable();
  for (Tensor& g : grads)
    for (double& v : g.flat()) v = rng.uniform(-1.0, 1.0);
  return grads;
}

bool bundles_equal(const ParamBundle& a, const ParamBundle& b) {
  for (int i = 0; i < a.count(); ++i) {
    if (std::memcmp(a.live(i).data(), b.live(i).data(),
                    a.live(i).size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("SGD single-scalar update") {
  const ModelConfig mc = tiny_config();
  ParamBundle params = ParamBundle::create(mc);
  const int idx = params.index("b_out");
  params.live(idx).at(0, 0) = 1.0;

  std::vector<Tensor> grads = params.zero_like_trainable();
  grads[idx].at(0, 0) = 0.5;

  OptimizerState opt;
  opt.kind = OptKind::sgd;
  opt.lr = 0.1;
  opt.clip_norm = 0.0;  // disabled
  apply_update(params, grads, opt);
  CHECK(params.live(idx).at(0, 0) == 0.95);
  CHECK(opt.step_count == 1);
}

TEST_CASE("Adam first step moves by about lr in the gradient direction") {
  const ModelConfig mc = tiny_config();
  ParamBundle params = ParamBundle::create(mc);
  const int idx = params.index("enc_b_z");
  std::vector<Tensor> grads = params.zero_like_trainable();
  const double g = 0.5;
  grads[idx].at(1, 0) = g;

  OptimizerState opt;
  opt.kind = OptKind::adam;
  opt.lr = 1e-3;
  opt.clip_norm = 0.0;
  apply_update(params, grads, opt);

  // bias correction at step 1 gives m_hat = g, v_hat = g^2
  const double want = -opt.lr * g / (std::abs(g) + opt.eps);
  CHECK(params.live(idx).at(1, 0) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  const ModelConfig mc = tiny_config();
  for (OptKind kind : {OptKind::sgd, OptKind::adam}) {
    ParamBundle params = ParamBundle::init_random(mc, 5);
    const ParamBundle before = params;
    std::vector<Tensor> grads = params.zero_like_trainable();
    OptimizerState opt;
    opt.kind = kind;
    opt.lr = 0.1;
    apply_update(params, grads, opt);
    CHECK(bundles_equal(params, before));
  }
}

TEST_CASE("non-finite gradients abort the update") {
  const ModelConfig mc = tiny_config();
  ParamBundle params = ParamBundle::init_random(mc, 6);
  const ParamBundle before = params;
  std::vector<Tensor> grads = params.zero_like_trainable();
  grads[3].at(0, 0) = std::nan("");
  OptimizerState opt;
  CHECK_THROWS_AS(apply_update(params, grads, opt), NumericError);
  CHECK(bundles_equal(params, before));
  CHECK(opt.step_count == 0);
}

TEST_CASE("gradient clipping") {
  const ModelConfig mc = tiny_config();
  const ParamBundle params = ParamBundle::create(mc);

  SUBCASE("below the threshold nothing changes") {
    std::vector<Tensor> grads = params.zero_like_trainable();
    grads[0].at(0, 0) = 0.3;
    grads[1].at(0, 0) = 0.4;  // norm 0.5
    std::vector<Tensor> before = grads;
    const double norm = clip_gradients(grads, 1.0);
    CHECK(norm == doctest::Approx(0.5).epsilon(1e-12));
    for (std::size_t i = 0; i < grads.size(); ++i)
      CHECK(grads[i].max_abs_diff(before[i]) == 0.0);
  }

  SUBCASE("above the threshold rescales to max norm, direction preserved") {
    std::vector<Tensor> grads = random_grads(params, 7);
    double sq = 0.0;
    for (const Tensor& g : grads) sq += g.squared_norm();
    const double scale_to_two = 2.0 / std::sqrt(sq);
    for (Tensor& g : grads)
      for (double& v : g.flat()) v *= scale_to_two;  // now norm 2 exactly-ish
    std::vector<Tensor> before = grads;

    const double norm = clip_gradients(grads, 1.0);
    CHECK(norm == doctest::Approx(2.0).epsilon(1e-12));

    double new_sq = 0.0, dot = 0.0, before_sq = 0.0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
      new_sq += grads[i].squared_norm();
      before_sq += before[i].squared_norm();
      for (std::size_t k = 0; k < grads[i].size(); ++k)
        dot += grads[i].flat()[k] * before[i].flat()[k];
      for (std::size_t k = 0; k < grads[i].size(); ++k)
        CHECK(grads[i].flat()[k] == doctest::Approx(before[i].flat()[k] / 2.0).epsilon(1e-12));
    }
    CHECK(std::sqrt(new_sq) == doctest::Approx(1.0).epsilon(1e-12));
    const double cosine = dot / (std::sqrt(new_sq) * std::sqrt(before_sq));
    CHECK(cosine == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("tuneout updates touch only the deltas") {
  const ModelConfig mc = tiny_config();
  ParamBundle params = ParamBundle::init_random(mc, 8);
  params.snapshot_prior();
  params.init_delta_zero();
  std::vector<Tensor> prior_before, live_before;
  for (int i = 0; i < params.count(); ++i) {
    prior_before.push_back(params.prior(i));
    live_before.push_back(params.live(i));
  }

  OptimizerState opt;
  opt.kind = OptKind::adam;
  opt.lr = 0.01;
  for (int step = 0; step < 5; ++step)
    apply_update(params, random_grads(params, 100 + step), opt);

  bool delta_moved = false;
  for (int i = 0; i < params.count(); ++i) {
    CHECK(std::memcmp(params.prior(i).data(), prior_before[i].data(),
                      prior_before[i].size() * sizeof(double)) == 0);
    CHECK(std::memcmp(params.live(i).data(), live_before[i].data(),
                      live_before[i].size() * sizeof(double)) == 0);
    if (params.delta(i).squared_norm() > 0.0) delta_moved = true;
  }
  CHECK(delta_moved);
  CHECK(opt.step_count == 5);
}

TEST_CASE("updates are deterministic given equal inputs") {
  const ModelConfig mc = tiny_config();
  auto run = [&]() {
    ParamBundle params = ParamBundle::init_random(mc, 9);
    OptimizerState opt;
    opt.kind = OptKind::adam;
    opt.lr = 3e-3;
    opt.clip_norm = 1.0;
    for (int step = 0; step < 25; ++step) {
      std::vector<Tensor> grads = random_grads(params, 500 + step);
      clip_gradients(grads, opt.clip_norm);
      apply_update(params, grads, opt);
    }
    return params;
  };
  const ParamBundle a = run();
  const ParamBundle b = run();
  CHECK(bundles_equal(a, b));
}

TEST_CASE("shape mismatch in gradients is rejected") {
  const ModelConfig mc = tiny_config();
  ParamBundle params = ParamBundle::init_random(mc, 10);
  std::vector<Tensor> grads = params.zero_like_trainable();
  grads[2] = Tensor(1, 1);
  OptimizerState opt;
  CHECK_THROWS_AS(apply_update(params, grads, opt), DimensionError);
}
