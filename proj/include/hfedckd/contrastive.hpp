// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "hfedckd/nn.hpp"

namespace hfedckd {

// Bidirectional contrastive losses over cosine similarities. Both directions
// share one InfoNCE core: -log(exp(s_pos/tau) / (exp(s_pos/tau) + sum_k
// exp(s_neg_k/tau))), averaged over the batch. The encode direction pulls
// local features toward the global model with historical snapshots as
// negatives; the decode direction pulls classifier outputs toward the
// historical snapshot with the global model as the negative.

struct ContrastiveConfig {
  double temperature = 0.5;            // tau, > 0
  double decode_weight = 1.0;          // weight of the decode term inside a layer
  std::vector<double> layer_weights;   // per-layer weights; empty = uniform
  double coefficient = 1.0;            // weight of the whole contrastive term
  std::size_t negative_count = 1;      // stored history snapshots (K)

  bool operator==(const ContrastiveConfig&) const = default;
};

/// Per-layer bundle of the three feature roles. `local` is the anchor;
/// `global_side` and `history` take positive/negative roles depending on
/// direction. All tensors are batch x extent with the same extents.
struct FeatureTriplet {
  TensorValue local;
  TensorValue global_side;
  std::vector<TensorValue> history;
};

struct ContrastiveResult {
  double loss = 0.0;
  TensorValue dlocal;
  TensorValue dglobal;
  std::vector<TensorValue> dhistory;
};

namespace detail {

// d cos(u, v) / du accumulated into du with coefficient c; zero vectors
// contribute a zero (neutral) gradient, matching cosine_similarity.
inline void add_cosine_grad(std::span<const double> u, std::span<const double> v,
                            double c, std::span<double> du) {
  double dot = 0.0, nu2 = 0.0, nv2 = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu2 += u[i] * u[i];
    nv2 += v[i] * v[i];
  }
  if (nu2 == 0.0 || nv2 == 0.0 || c == 0.0) return;
  const double nu = std::sqrt(nu2), nv = std::sqrt(nv2);
  const double inv = 1.0 / (nu * nv);
  const double s_over_nu2 = dot * inv / nu2;
  for (std::size_t i = 0; i < u.size(); ++i)
    du[i] += c * (v[i] * inv - s_over_nu2 * u[i]);
}

struct InfoNceResult {
  double loss = 0.0;
  TensorValue danchor;
  TensorValue dpositive;
  std::vector<TensorValue> dnegatives;
};

inline InfoNceResult info_nce(const TensorValue& anchor, const TensorValue& positive,
                              const std::vector<TensorValue>& negatives, double tau) {
  if (tau <= 0.0) throw ConfigError("contrastive temperature must be positive");
  if (anchor.rank() != 2 || !anchor.same_shape(positive))
    throw ShapeError("contrastive: anchor " + shape_string(anchor) +
                     " and positive " + shape_string(positive) + " must match");
  for (const TensorValue& n : negatives)
    if (!n.same_shape(anchor))
      throw ShapeError("contrastive: negative shape " + shape_string(n) +
                       " does not match anchor " + shape_string(anchor));

  const std::size_t m = anchor.rows();
  const std::size_t k = negatives.size();
  InfoNceResult res;
  res.danchor = TensorValue::zeros(anchor.shape);
  res.dpositive = TensorValue::zeros(anchor.shape);
  res.dnegatives.assign(k, TensorValue::zeros(anchor.shape));
  if (m == 0) return res;

  std::vector<double> scaled(k + 1);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t j = 0; j < m; ++j) {
    const auto a = anchor.row(j);
    scaled[0] = cosine_similarity(a, positive.row(j)) / tau;
    for (std::size_t n = 0; n < k; ++n)
      scaled[n + 1] = cosine_similarity(a, negatives[n].row(j)) / tau;

    double mx = scaled[0];
    for (std::size_t n = 1; n <= k; ++n) mx = std::max(mx, scaled[n]);
    double z = 0.0;
    for (std::size_t n = 0; n <= k; ++n) z += std::exp(scaled[n] - mx);
    const double lse = mx + std::log(z);
    res.loss += (lse - scaled[0]) * inv_m;

    // dloss/ds_pos = (sigma_pos - 1)/tau, dloss/ds_neg = sigma_neg/tau
    const double sigma_pos = std::exp(scaled[0] - mx) / z;
    const double c_pos = inv_m * (sigma_pos - 1.0) / tau;
    add_cosine_grad(a, positive.row(j), c_pos, res.danchor.row(j));
    add_cosine_grad(positive.row(j), a, c_pos, res.dpositive.row(j));
    for (std::size_t n = 0; n < k; ++n) {
      const double sigma_n = std::exp(scaled[n + 1] - mx) / z;
      const double c_n = inv_m * sigma_n / tau;
      add_cosine_grad(a, negatives[n].row(j), c_n, res.danchor.row(j));
      add_cosine_grad(negatives[n].row(j), a, c_n, res.dnegatives[n].row(j));
    }
  }
  res.loss = std::max(res.loss, 0.0);
  return res;
}

}  // namespace detail

/// Encode direction: positive = global features, negatives = the first
/// `negative_count` history snapshots. With no negatives the loss is zero.
inline ContrastiveResult encode_contrastive_loss(const FeatureTriplet& t, double tau,
                                                 std::size_t negative_count) {
  std::vector<TensorValue> negatives(
      t.history.begin(),
      t.history.begin() +
          static_cast<std::ptrdiff_t>(std::min(negative_count, t.history.size())));
  detail::InfoNceResult core = detail::info_nce(t.local, t.global_side, negatives, tau);
  ContrastiveResult res;
  res.loss = core.loss;
  res.dlocal = std::move(core.danchor);
  res.dglobal = std::move(core.dpositive);
  res.dhistory = std::move(core.dnegatives);
  res.dhistory.resize(t.history.size(), TensorValue::zeros(t.local.shape));
  return res;
}

inline ContrastiveResult encode_contrastive_loss(const FeatureTriplet& t, double tau) {
  return encode_contrastive_loss(t, tau, t.history.size());
}

/// Decode direction: positive = historical output, negative = global output
/// (there is one global model, so the negative count caps at 1).
inline ContrastiveResult decode_contrastive_loss(const FeatureTriplet& t, double tau,
                                                 std::size_t negative_count = 1) {
  if (t.history.empty())
    throw ShapeError("decode_contrastive_loss: needs at least one historical entry");
  std::vector<TensorValue> negatives;
  if (negative_count > 0) negatives.push_back(t.global_side);
  detail::InfoNceResult core = detail::info_nce(t.local, t.history[0], negatives, tau);
  ContrastiveResult res;
  res.loss = core.loss;
  res.dlocal = std::move(core.danchor);
  res.dhistory.push_back(std::move(core.dpositive));
  res.dhistory.resize(t.history.size(), TensorValue::zeros(t.local.shape));
  if (!core.dnegatives.empty())
    res.dglobal = std::move(core.dnegatives[0]);
  else
    res.dglobal = TensorValue::zeros(t.local.shape);
  return res;
}

/// Resolved per-layer weights: configured list if its length matches,
/// otherwise uniform 1/L.
inline std::vector<double> resolve_layer_weights(const ContrastiveConfig& cfg,
                                                 std::size_t layers) {
  if (cfg.layer_weights.size() == layers) return cfg.layer_weights;
  return std::vector<double>(layers, layers ? 1.0 / static_cast<double>(layers) : 0.0);
}

/// sum_l lambda_l * (encode_l + decode_weight * decode_l)
inline double multilayer_combine(const std::vector<double>& encode_losses,
                                 const std::vector<double>& decode_losses,
                                 const ContrastiveConfig& cfg) {
  if (encode_losses.size() != decode_losses.size())
    throw ShapeError("multilayer_combine: per-layer lists have different lengths (" +
                     std::to_string(encode_losses.size()) + " vs " +
                     std::to_string(decode_losses.size()) + ")");
  const std::vector<double> lw = resolve_layer_weights(cfg, encode_losses.size());
  double total = 0.0;
  for (std::size_t l = 0; l < encode_losses.size(); ++l)
    total += lw[l] * (encode_losses[l] + cfg.decode_weight * decode_losses[l]);
  return total;
}

inline double total_local_loss(double kd_loss, double contrastive_loss,
                               double coefficient) {
  return kd_loss + coefficient * contrastive_loss;
}

}  // namespace hfedckd
