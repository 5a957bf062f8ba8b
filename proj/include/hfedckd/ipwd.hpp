// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "hfedckd/generator.hpp"
#include "hfedckd/model.hpp"

namespace hfedckd {

// Inverse-probability client weighting and the weighted distillation loss.
// Clients are weighted by alpha / participation-frequency plus a divergence
// bonus; pseudo-samples by a logistic propensity of their ensemble
// confidence.

/// Per-round participant sets. `budget` is the configured total round count;
/// `cardinality` the configured |C_t| (0 = unchecked).
struct ParticipationLedger {
  std::vector<std::vector<std::size_t>> rounds;
  std::size_t budget = 0;
  std::size_t cardinality = 0;

  void record(std::vector<std::size_t> participants) {
    if (cardinality != 0 && participants.size() != cardinality)
      throw StateError("ledger: round has " + std::to_string(participants.size()) +
                       " participants, configured cardinality is " +
                       std::to_string(cardinality));
    rounds.push_back(std::move(participants));
  }

  std::size_t elapsed() const { return rounds.size(); }
};

struct IpwdConfig {
  double alpha = 1.0;             // frequency emphasis
  double beta = 1.0;              // divergence emphasis
  double sample_slope = 5.0;      // lambda of the logistic sample weight
  double sample_threshold = 0.5;  // theta of the logistic sample weight
  double frequency_floor = 0.0;   // epsilon_pi; resolve to 1/(2T) before use

  void validate() const {
    if (alpha < 0.0 || beta < 0.0)
      throw ConfigError("ipwd: alpha and beta must be nonnegative");
    if (sample_slope <= 0.0) throw ConfigError("ipwd: sample_slope must be positive");
    if (frequency_floor <= 0.0)
      throw ConfigError("ipwd: frequency_floor must be positive");
  }

  bool operator==(const IpwdConfig&) const = default;
};

struct ClientWeight {
  std::size_t client = 0;
  double frequency = 0.0;   // pi_i
  double divergence = 0.0;  // delta_i
  double raw = 0.0;         // w_i = alpha / max(pi, floor) + beta * delta
  double normalized = 0.0;  // sums to 1 over the participant set
};

/// Fraction of elapsed rounds in which client i was selected.
inline double participation_frequency(const ParticipationLedger& ledger, std::size_t client) {
  if (ledger.rounds.empty())
    throw StateError("participation_frequency: ledger is empty");
  std::size_t hits = 0;
  for (const std::vector<std::size_t>& round : ledger.rounds)
    if (std::find(round.begin(), round.end(), client) != round.end()) ++hits;
  return static_cast<double>(hits) / static_cast<double>(ledger.rounds.size());
}

/// Jensen-Shannon divergence (base e) between two label distributions;
/// symmetric and bounded by ln 2.
inline double label_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw ShapeError("label_divergence: distribution lengths differ");
  std::vector<double> mix(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) mix[i] = 0.5 * (p[i] + q[i]);
  const double js = 0.5 * kl_divergence(p, mix) + 0.5 * kl_divergence(q, mix);
  return std::clamp(js, 0.0, std::log(2.0));
}

/// Raw and normalized weights for the participants of one round.
inline std::vector<ClientWeight> client_weights(
    const ParticipationLedger& ledger, const std::vector<std::vector<double>>& histograms,
    std::span<const double> global_histogram, const IpwdConfig& cfg,
    const std::vector<std::size_t>& participants) {
  if (participants.empty())
    throw StateError("client_weights: participant set is empty");
  cfg.validate();
  std::vector<ClientWeight> weights;
  weights.reserve(participants.size());
  double sum = 0.0;
  for (std::size_t id : participants) {
    ClientWeight w;
    w.client = id;
    w.frequency = participation_frequency(ledger, id);
    w.divergence = label_divergence(histograms.at(id), global_histogram);
    w.raw = cfg.alpha / std::max(w.frequency, cfg.frequency_floor) + cfg.beta * w.divergence;
    sum += w.raw;
    weights.push_back(w);
  }
  for (ClientWeight& w : weights)
    w.normalized = sum > 0.0 ? w.raw / sum : 1.0 / static_cast<double>(weights.size());
  return weights;
}

/// Logistic propensity weight of a sample confidence.
inline double sample_weight(double confidence_score, const IpwdConfig& cfg) {
  const double t = cfg.sample_slope * (confidence_score - cfg.sample_threshold);
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

/// Weighted mean of the teacher distributions, weights normalized upstream.
inline TensorValue ensemble_probs(const std::vector<TensorValue>& teacher_probs,
                                  std::span<const double> weights) {
  if (teacher_probs.empty())
    throw StateError("ensemble_probs: need at least one teacher");
  if (teacher_probs.size() != weights.size())
    throw ShapeError("ensemble_probs: weight count does not match teacher count");
  TensorValue mean = TensorValue::zeros(teacher_probs[0].shape);
  for (std::size_t k = 0; k < teacher_probs.size(); ++k) {
    if (!teacher_probs[k].same_shape(mean))
      throw ShapeError("ensemble_probs: teacher batch shapes differ");
    for (std::size_t i = 0; i < mean.size(); ++i)
      mean.data[i] += weights[k] * teacher_probs[k].data[i];
  }
  return mean;
}

/// Per-sample confidence: the top entry of the weighted ensemble distribution.
inline std::vector<double> confidence(const std::vector<TensorValue>& teacher_probs,
                                      std::span<const double> weights) {
  TensorValue mean = ensemble_probs(teacher_probs, weights);
  std::vector<double> conf(mean.rows());
  for (std::size_t j = 0; j < mean.rows(); ++j) {
    const auto row = mean.row(j);
    conf[j] = *std::max_element(row.begin(), row.end());
  }
  return conf;
}

struct WeightedKlResult {
  double loss = 0.0;
  TensorValue dlogits;  // gradient w.r.t. the student logits
};

/// sum_k w_k sum_j gamma_j KL(student_j || teacher_j^(k)), with the analytic
/// gradient w.r.t. the student logits that produced student_probs.
inline WeightedKlResult weighted_kl_loss(const TensorValue& student_probs,
                                         const std::vector<TensorValue>& teacher_probs,
                                         std::span<const double> teacher_weights,
                                         std::span<const double> sample_weights) {
  if (teacher_probs.empty())
    throw ShapeError("weighted_kl_loss: need at least one teacher");
  if (teacher_probs.size() != teacher_weights.size())
    throw ShapeError("weighted_kl_loss: teacher weight count mismatch");
  const std::size_t m = student_probs.rows(), c = student_probs.cols();
  if (sample_weights.size() != m)
    throw ShapeError("weighted_kl_loss: sample weight count " +
                     std::to_string(sample_weights.size()) + " does not match batch " +
                     std::to_string(m));
  for (const TensorValue& t : teacher_probs)
    if (!t.same_shape(student_probs))
      throw ShapeError("weighted_kl_loss: teacher batch " + shape_string(t) +
                       " does not match student batch " + shape_string(student_probs));

  WeightedKlResult res;
  res.dlogits = TensorValue::zeros(student_probs.shape);
  std::vector<double> log_ratio(c);
  for (std::size_t k = 0; k < teacher_probs.size(); ++k) {
    const double wk = teacher_weights[k];
    for (std::size_t j = 0; j < m; ++j) {
      const double* p = student_probs.data.data() + j * c;
      const double* q = teacher_probs[k].data.data() + j * c;
      double kl = 0.0;
      for (std::size_t i = 0; i < c; ++i) {
        if (p[i] > 0.0) {
          log_ratio[i] = std::log(p[i] / std::max(q[i], kLogEps));
          kl += p[i] * log_ratio[i];
        } else {
          log_ratio[i] = 0.0;  // p log p -> 0 limit
        }
      }
      const double coeff = wk * sample_weights[j];
      res.loss += coeff * kl;
      double* g = res.dlogits.data.data() + j * c;
      for (std::size_t i = 0; i < c; ++i)
        g[i] += coeff * p[i] * (log_ratio[i] - kl);
    }
  }
  return res;
}

/// Softmax of each teacher's full forward on a batch.
inline std::vector<TensorValue> teacher_probabilities(
    const std::vector<const SplitModel*>& teachers, const TensorValue& batch) {
  std::vector<TensorValue> probs;
  probs.reserve(teachers.size());
  for (const SplitModel* t : teachers) probs.push_back(softmax(model_forward(*t, batch)));
  return probs;
}

/// One SGD step of the global model on the weighted distillation loss.
/// Teacher models are read-only.
inline double server_distill_step(SplitModel& global_model, const PseudoBatch& batch,
                                  const std::vector<const SplitModel*>& teachers,
                                  std::span<const double> teacher_weights, double lr) {
  if (batch.size() == 0) throw StateError("server_distill_step: empty pseudo batch");
  ModelCache cache;
  TensorValue logits = model_forward(global_model, batch.samples, &cache);
  std::vector<TensorValue> probs = teacher_probabilities(teachers, batch.samples);
  WeightedKlResult kl =
      weighted_kl_loss(softmax(logits), probs, teacher_weights, batch.weight);
  auto [grad, dinput] = model_backward(global_model, cache, kl.dlogits);
  (void)dinput;
  sgd_step(global_model, grad, lr);
  return kl.loss;
}

}  // namespace hfedckd
