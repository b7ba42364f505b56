#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fd_harness.hpp"

using namespace mstage;
using namespace mstage::test;

TEST_CASE("predictor loss: single uniform frame") {
  Tensor p = Tensor::from({1, 2}, {0.5, 0.5});
  auto v = predictor_loss(p, {0});
  CHECK(v.ce_term == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(v.smooth_term == 0.0);
  CHECK(v.total == doctest::Approx(0.693147).epsilon(1e-6));
}

TEST_CASE("predictor loss: identical confident rows have zero smooth term") {
  Tensor p = Tensor::from({2, 2}, {0.9, 0.1, 0.9, 0.1});
  auto v = predictor_loss(p, {0, 0});
  CHECK(v.ce_term == doctest::Approx(0.105361).epsilon(1e-6));
  CHECK(v.smooth_term == 0.0);
  CHECK(v.total == doctest::Approx(0.105361).epsilon(1e-6));
}

TEST_CASE("predictor loss: changing rows pay the smoothing penalty") {
  Tensor p = Tensor::from({2, 2}, {0.9, 0.1, 0.1, 0.9});
  auto v = predictor_loss(p, {0, 1});
  CHECK(v.ce_term == doctest::Approx(0.105361).epsilon(1e-6));
  CHECK(v.smooth_term == doctest::Approx(0.32).epsilon(1e-9));
  CHECK(v.total == doctest::Approx(0.425361).epsilon(1e-6));
}

TEST_CASE("predictor loss: total equals ce + lambda * smooth") {
  RngStream rng(9);
  for (int rep = 0; rep < 25; ++rep) {
    Tensor logits = random_tensor({7, 4}, rng, 2.0);
    Tensor p = softmax_rows(logits);
    auto labels = random_labels(7, 4, rng);
    double lambda = rng.uniform(0.0, 3.0);
    auto v = predictor_loss(p, labels, lambda);
    CHECK(v.total == doctest::Approx(v.ce_term + lambda * v.smooth_term).epsilon(1e-12));
    CHECK(v.ce_term >= 0.0);
    CHECK(v.smooth_term >= 0.0);
  }
}

TEST_CASE("predictor loss: smooth term is zero iff adjacent rows are identical") {
  Tensor flat = Tensor::from({3, 2}, {0.3, 0.7, 0.3, 0.7, 0.3, 0.7});
  CHECK(predictor_loss(flat, {1, 1, 1}).smooth_term == 0.0);

  Tensor bump = flat;
  bump.at2(1, 0) = 0.31;
  bump.at2(1, 1) = 0.69;
  CHECK(predictor_loss(bump, {1, 1, 1}).smooth_term > 0.0);
}

TEST_CASE("predictor loss: clamp keeps zero probabilities finite") {
  Tensor p = Tensor::from({1, 2}, {0.0, 1.0});
  auto v = predictor_loss(p, {0});
  CHECK(std::isfinite(v.total));
  CHECK(v.ce_term == doctest::Approx(-std::log(1e-12)).epsilon(1e-9));
}

TEST_CASE("predictor loss: label out of range names the frame") {
  Tensor p = Tensor::from({2, 2}, {0.5, 0.5, 0.5, 0.5});
  try {
    predictor_loss(p, {0, 2});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("frame 1") != std::string::npos);
  }
}

TEST_CASE("predictor loss: empty sequence and length mismatch rejected") {
  Tensor p = Tensor::from({2, 2}, {0.5, 0.5, 0.5, 0.5});
  CHECK_THROWS_AS(predictor_loss(p, {0}), Error);
  CHECK_THROWS_AS(predictor_loss(p, {0, 0, 0}), Error);
}

TEST_CASE("predictor loss: ce term is invariant to frame order, smooth term is not") {
  Tensor p = Tensor::from({3, 2}, {0.9, 0.1, 0.5, 0.5, 0.2, 0.8});
  PhaseLabels labels = {0, 0, 1};
  auto base = predictor_loss(p, labels);

  Tensor perm = Tensor::from({3, 2}, {0.2, 0.8, 0.9, 0.1, 0.5, 0.5});
  PhaseLabels perm_labels = {1, 0, 0};
  auto swapped = predictor_loss(perm, perm_labels);
  CHECK(swapped.ce_term == doctest::Approx(base.ce_term).epsilon(1e-12));
  CHECK(swapped.smooth_term != base.smooth_term);
}

TEST_CASE("predictor loss gradients match finite differences over seeds") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto r1 = fd_check_softmax_ce(seed);
    CHECK_MESSAGE(r1.passed, r1.to_string());
    auto r2 = fd_check_predictor_loss(seed);
    CHECK_MESSAGE(r2.passed, r2.to_string());
  }
}

TEST_CASE("refinement loss: perfect prediction is at the clamp floor") {
  Tensor p({4, 3});
  PhaseLabels labels = {0, 2, 1, 1};
  for (size_t t = 0; t < 4; ++t) p.at2(t, static_cast<size_t>(labels[t])) = 1.0;
  auto v = refinement_loss({p}, labels);
  CHECK(v.total >= 0.0);
  CHECK(v.total <= 1e-9);
  CHECK(v.smooth_term == 0.0);
}

TEST_CASE("refinement loss: uniform rows give ln C") {
  Tensor p({5, 4});
  p.fill(0.25);
  auto v = refinement_loss({p}, {0, 1, 2, 3, 0});
  CHECK(v.total == doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("refinement loss: stages add") {
  RngStream rng(21);
  Tensor p = softmax_rows(random_tensor({6, 3}, rng, 1.5));
  auto labels = random_labels(6, 3, rng);
  double single = refinement_loss({p}, labels).total;
  double triple = refinement_loss({p, p, p}, labels).total;
  CHECK(triple == doctest::Approx(3.0 * single).epsilon(1e-12));
}

TEST_CASE("refinement loss: empty stage list and shape drift rejected") {
  Tensor p = Tensor::from({2, 2}, {0.5, 0.5, 0.5, 0.5});
  Tensor q = Tensor::from({3, 2}, {0.5, 0.5, 0.5, 0.5, 0.5, 0.5});
  CHECK_THROWS_AS(refinement_loss({}, {0, 1}), Error);
  CHECK_THROWS_AS(refinement_loss({p, q}, {0, 1}), Error);
}

TEST_CASE("refinement loss: per-stage gradients are independent") {
  RngStream rng(31);
  Tensor a = softmax_rows(random_tensor({5, 3}, rng, 1.0));
  Tensor b = softmax_rows(random_tensor({5, 3}, rng, 1.0));
  auto labels = random_labels(5, 3, rng);

  std::vector<Tensor> gp;
  refinement_loss({a, b}, labels, &gp);
  REQUIRE(gp.size() == 2);

  std::vector<Tensor> ga;
  refinement_loss({a}, labels, &ga);
  std::vector<Tensor> gb;
  refinement_loss({b}, labels, &gb);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(gp[0][i] == ga[0][i]);
    CHECK(gp[1][i] == gb[0][i]);
  }
}
