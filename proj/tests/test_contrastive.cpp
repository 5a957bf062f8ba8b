// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "hfedckd/contrastive.hpp"
#include "oracles.hpp"

using namespace hfedckd;

namespace {

FeatureTriplet random_triplet(std::size_t m, std::size_t d, std::size_t k,
                              std::mt19937_64& rng) {
  FeatureTriplet t;
  t.local = oracles::random_tensor({m, d}, rng);
  t.global_side = oracles::random_tensor({m, d}, rng);
  for (std::size_t i = 0; i < k; ++i)
    t.history.push_back(oracles::random_tensor({m, d}, rng));
  return t;
}

}  // namespace

TEST_CASE("encode loss: no negatives gives exactly zero") {
  std::mt19937_64 rng(3);
  FeatureTriplet t = random_triplet(4, 6, 0, rng);
  const ContrastiveResult res = encode_contrastive_loss(t, 0.5);
  CHECK(res.loss == 0.0);
  for (double g : res.dlocal.data) CHECK(g == 0.0);

  // an explicit K = 0 also silences present negatives
  FeatureTriplet t2 = random_triplet(4, 6, 2, rng);
  CHECK(encode_contrastive_loss(t2, 0.5, 0).loss == 0.0);
}

TEST_CASE("encode loss: coinciding positive and negative gives ln 2") {
  std::mt19937_64 rng(5);
  FeatureTriplet t;
  t.local = oracles::random_tensor({3, 4}, rng);
  t.global_side = t.local;
  t.history = {t.local};
  CHECK(encode_contrastive_loss(t, 0.7).loss == Catch::Approx(std::log(2.0)).margin(1e-12));
}

TEST_CASE("decode loss: coinciding vectors give ln 2; K = 0 gives zero") {
  std::mt19937_64 rng(7);
  FeatureTriplet t;
  t.local = oracles::random_tensor({2, 5}, rng);
  t.global_side = t.local;
  t.history = {t.local};
  CHECK(decode_contrastive_loss(t, 0.3).loss == Catch::Approx(std::log(2.0)).margin(1e-12));
  CHECK(decode_contrastive_loss(t, 0.3, 0).loss == 0.0);
}

TEST_CASE("both losses match the per-sample summation oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 150; ++trial) {
    FeatureTriplet t = random_triplet(4, 5, 2, rng);
    const double tau = 0.4;
    CHECK(encode_contrastive_loss(t, tau).loss ==
          Catch::Approx(oracles::naive_infonce(t.local, t.global_side, t.history, tau))
              .margin(1e-10));
    // decode: positive is history[0], negative is the global side
    CHECK(decode_contrastive_loss(t, tau).loss ==
          Catch::Approx(oracles::naive_infonce(t.local, t.history[0], {t.global_side}, tau))
              .margin(1e-10));
  }
}

TEST_CASE("swapping positive and negative roles changes the loss") {
  std::mt19937_64 rng(13);
  FeatureTriplet t = random_triplet(4, 5, 1, rng);
  const double dec = decode_contrastive_loss(t, 0.5).loss;
  FeatureTriplet swapped = t;
  std::swap(swapped.global_side, swapped.history[0]);
  const double dec_swapped = decode_contrastive_loss(swapped, 0.5).loss;
  CHECK(std::abs(dec - dec_swapped) > 1e-6);
  // and each agrees with the oracle in its own direction
  CHECK(dec == Catch::Approx(oracles::naive_infonce(t.local, t.history[0],
                                                    {t.global_side}, 0.5)));
  CHECK(dec_swapped == Catch::Approx(oracles::naive_infonce(t.local, t.global_side,
                                                            {t.history[0]}, 0.5)));
}

TEST_CASE("losses are invariant to positive rescaling of any feature vector") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    FeatureTriplet t = random_triplet(3, 4, 2, rng);
    const double base = encode_contrastive_loss(t, 0.5).loss;
    FeatureTriplet scaled = t;
    for (double& v : scaled.local.data) v *= 7.0;
    CHECK(encode_contrastive_loss(scaled, 0.5).loss == Catch::Approx(base).margin(1e-10));
    FeatureTriplet scaled_g = t;
    for (double& v : scaled_g.global_side.data) v *= 3.5;
    CHECK(encode_contrastive_loss(scaled_g, 0.5).loss == Catch::Approx(base).margin(1e-10));
  }
}

TEST_CASE("encode loss decreases as local aligns with global, negatives fixed") {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 1000; ++trial) {
    FeatureTriplet t;
    t.local = oracles::random_tensor({1, 4}, rng);
    t.history = {oracles::random_tensor({1, 4}, rng)};
    // positive progressively closer to the local direction
    TensorValue far = oracles::random_tensor({1, 4}, rng);
    FeatureTriplet closer = t;
    closer.global_side = t.local;  // cos = 1
    t.global_side = far;
    const double loss_far = encode_contrastive_loss(t, 0.5).loss;
    const double loss_close = encode_contrastive_loss(closer, 0.5).loss;
    const double cos_far = cosine_similarity(t.local.row(0), far.row(0));
    if (cos_far < 1.0 - 1e-9) CHECK(loss_close < loss_far);
  }
}

TEST_CASE("decode loss decreases as local aligns with history, negative fixed") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    FeatureTriplet t;
    t.local = oracles::random_tensor({1, 4}, rng);
    t.global_side = oracles::random_tensor({1, 4}, rng);
    t.history = {oracles::random_tensor({1, 4}, rng)};
    FeatureTriplet aligned = t;
    aligned.history[0] = t.local;
    const double cos_pos = cosine_similarity(t.local.row(0), t.history[0].row(0));
    if (cos_pos < 1.0 - 1e-9)
      CHECK(decode_contrastive_loss(aligned, 0.5).loss <
            decode_contrastive_loss(t, 0.5).loss);
  }
}

TEST_CASE("flat limit: huge temperature pushes both losses to log(1+K)") {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 1 + trial % 4;
    FeatureTriplet t = random_triplet(2, 5, k, rng);
    CHECK(encode_contrastive_loss(t, 1e6).loss ==
          Catch::Approx(std::log(1.0 + static_cast<double>(k))).margin(1e-3));
    CHECK(decode_contrastive_loss(t, 1e6).loss ==
          Catch::Approx(std::log(2.0)).margin(1e-3));  // decode has one negative
  }
}

TEST_CASE("contrastive gradients match finite differences for all inputs") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    FeatureTriplet t = random_triplet(3, 4, 2, rng);
    const double tau = 0.6;

    const ContrastiveResult enc = encode_contrastive_loss(t, tau);
    {
      const auto loss = [&]() { return encode_contrastive_loss(t, tau).loss; };
      const std::vector<TensorValue> fd = oracles::finite_difference(
          {&t.local, &t.global_side, &t.history[0], &t.history[1]}, loss);
      for (std::size_t i = 0; i < t.local.size(); ++i) {
        CHECK(oracles::grad_close(enc.dlocal.data[i], fd[0].data[i]));
        CHECK(oracles::grad_close(enc.dglobal.data[i], fd[1].data[i]));
        CHECK(oracles::grad_close(enc.dhistory[0].data[i], fd[2].data[i]));
        CHECK(oracles::grad_close(enc.dhistory[1].data[i], fd[3].data[i]));
      }
    }

    const ContrastiveResult dec = decode_contrastive_loss(t, tau);
    {
      const auto loss = [&]() { return decode_contrastive_loss(t, tau).loss; };
      const std::vector<TensorValue> fd =
          oracles::finite_difference({&t.local, &t.global_side, &t.history[0]}, loss);
      for (std::size_t i = 0; i < t.local.size(); ++i) {
        CHECK(oracles::grad_close(dec.dlocal.data[i], fd[0].data[i]));
        CHECK(oracles::grad_close(dec.dglobal.data[i], fd[1].data[i]));
        CHECK(oracles::grad_close(dec.dhistory[0].data[i], fd[2].data[i]));
      }
    }
  }
}

TEST_CASE("multilayer_combine: reduction, annihilation, oracle, length check") {
  ContrastiveConfig cfg;
  cfg.decode_weight = 1.0;
  cfg.layer_weights = {1.0};
  CHECK(multilayer_combine({2.0}, {3.0}, cfg) == Catch::Approx(5.0));

  cfg.layer_weights = {0.0, 0.0, 0.0};
  CHECK(multilayer_combine({1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}, cfg) == 0.0);

  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    ContrastiveConfig c;
    c.decode_weight = u(rng);
    c.layer_weights = {u(rng), u(rng), u(rng)};
    const std::vector<double> enc = {u(rng), u(rng), u(rng)};
    const std::vector<double> dec = {u(rng), u(rng), u(rng)};
    double want = 0.0;
    for (int l = 0; l < 3; ++l)
      want += c.layer_weights[static_cast<std::size_t>(l)] *
              (enc[static_cast<std::size_t>(l)] +
               c.decode_weight * dec[static_cast<std::size_t>(l)]);
    CHECK(multilayer_combine(enc, dec, c) == Catch::Approx(want).margin(1e-12));
  }

  ContrastiveConfig bad;
  CHECK_THROWS_AS(multilayer_combine({1.0, 2.0}, {1.0}, bad), ShapeError);
}

TEST_CASE("empty layer weights resolve to uniform") {
  ContrastiveConfig cfg;  // layer_weights empty
  const std::vector<double> lw = resolve_layer_weights(cfg, 4);
  for (double w : lw) CHECK(w == Catch::Approx(0.25));
  CHECK(multilayer_combine({4.0, 4.0, 4.0, 4.0}, {0.0, 0.0, 0.0, 0.0}, cfg) ==
        Catch::Approx(4.0));
}

TEST_CASE("total_local_loss arithmetic") {
  CHECK(total_local_loss(2.0, 3.0, 0.0) == 2.0);
  CHECK(total_local_loss(0.0, 3.0, 1.0) == 3.0);
  CHECK(total_local_loss(2.0, 3.0, 0.5) == Catch::Approx(3.5));
}
