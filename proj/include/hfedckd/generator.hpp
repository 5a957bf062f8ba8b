// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "hfedckd/model.hpp"
#include "hfedckd/rng.hpp"

namespace hfedckd {

// Server-side conditional generator. Maps [noise || label embedding] to a
// pseudo-sample of the experiment's input extent. Trained against the
// weighted teacher ensemble so pseudo-samples carry client knowledge, with a
// small diversity bonus to keep the batch spread out.

struct GeneratorNet {
  std::size_t noise_extent = 0;
  TensorValue label_embedding;  // class_count x embed_extent
  LayerStack body;              // (noise + embed) -> ... -> input_extent

  std::size_t class_count() const { return label_embedding.rows(); }
  std::size_t embed_extent() const { return label_embedding.cols(); }
  std::size_t output_extent() const {
    return body.empty() ? 0 : body.back().out_extent();
  }
};

/// Generator-produced samples with conditioning labels and the per-sample
/// confidence/weight slots the distillation step consumes. Fresh batches
/// carry neutral values (confidence 0, weight 0.5) until populated.
struct PseudoBatch {
  TensorValue samples;            // M x input_extent
  std::vector<int> labels;        // conditioning labels y_j
  std::vector<double> confidence; // s_j
  std::vector<double> weight;     // gamma_j

  std::size_t size() const { return labels.size(); }

  void check_aligned() const {
    const std::size_t m = labels.size();
    if (samples.rows() != m || confidence.size() != m || weight.size() != m)
      throw StateError("pseudo batch fields are not aligned");
  }
};

inline GeneratorNet build_generator(std::size_t class_count, std::size_t input_extent,
                                    std::size_t noise_extent, std::size_t embed_extent,
                                    const std::vector<std::size_t>& hidden,
                                    std::uint64_t seed) {
  if (class_count == 0 || input_extent == 0 || noise_extent == 0 || embed_extent == 0)
    throw ConfigError("build_generator: all extents must be positive");
  Rng rng(seed);
  GeneratorNet g;
  g.noise_extent = noise_extent;
  const double bound = std::sqrt(6.0 / static_cast<double>(class_count + embed_extent));
  std::uniform_real_distribution<double> u(-bound, bound);
  g.label_embedding = TensorValue::zeros({class_count, embed_extent});
  for (double& w : g.label_embedding.data) w = u(rng);
  std::size_t in = noise_extent + embed_extent;
  for (std::size_t width : hidden) {
    g.body.push_back(detail::init_layer(width, in, Activation::Relu, rng));
    in = width;
  }
  g.body.push_back(detail::init_layer(input_extent, in, Activation::Identity, rng));
  return g;
}

namespace detail {

inline TensorValue generator_inputs(const GeneratorNet& g, const std::vector<int>& labels,
                                    Rng& rng) {
  const std::size_t noise = g.noise_extent, embed = g.embed_extent();
  TensorValue in = TensorValue::zeros({labels.size(), noise + embed});
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const int y = labels[j];
    if (y < 0 || static_cast<std::size_t>(y) >= g.class_count())
      throw ShapeError("generator: conditioning label " + std::to_string(y) +
                       " out of range");
    double* row = in.data.data() + j * (noise + embed);
    for (std::size_t d = 0; d < noise; ++d) row[d] = gauss(rng);
    const double* e = g.label_embedding.data.data() +
                      static_cast<std::size_t>(y) * embed;
    for (std::size_t d = 0; d < embed; ++d) row[noise + d] = e[d];
  }
  return in;
}

}  // namespace detail

/// One sample per conditioning label; deterministic in (g, labels, seed).
inline PseudoBatch generate(const GeneratorNet& g, const std::vector<int>& labels,
                            std::uint64_t seed) {
  Rng rng = make_rng(seed, SeedTag::PseudoNoise);
  PseudoBatch batch;
  batch.labels = labels;
  batch.samples = labels.empty() ? TensorValue::zeros({0, g.output_extent()})
                                 : forward(g.body, detail::generator_inputs(g, labels, rng));
  batch.confidence.assign(labels.size(), 0.0);
  batch.weight.assign(labels.size(), 0.5);
  return batch;
}

/// Classes that never win the weighted-ensemble argmax over the batch.
inline std::vector<int> detect_missing_classes(const PseudoBatch& batch,
                                               const std::vector<const SplitModel*>& teachers,
                                               std::span<const double> teacher_weights,
                                               std::size_t class_count) {
  if (batch.size() == 0) throw StateError("detect_missing_classes: empty batch");
  std::vector<TensorValue> probs;
  probs.reserve(teachers.size());
  for (const SplitModel* t : teachers)
    probs.push_back(softmax(model_forward(*t, batch.samples)));
  TensorValue mean = TensorValue::zeros(probs.at(0).shape);
  for (std::size_t k = 0; k < probs.size(); ++k)
    for (std::size_t i = 0; i < mean.size(); ++i)
      mean.data[i] += teacher_weights[k] * probs[k].data[i];

  std::vector<bool> seen(class_count, false);
  for (std::size_t j = 0; j < mean.rows(); ++j) {
    const auto row = mean.row(j);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
      if (row[c] > row[best]) best = c;
    if (best < class_count) seen[best] = true;
  }
  std::vector<int> missing;
  for (std::size_t c = 0; c < class_count; ++c)
    if (!seen[c]) missing.push_back(static_cast<int>(c));
  return missing;
}

/// Append per_class_count generated samples for each missing class; their
/// conditioning labels become the pseudo-labels.
inline PseudoBatch fill_missing(const GeneratorNet& g, const PseudoBatch& batch,
                                const std::vector<int>& missing,
                                std::size_t per_class_count, std::uint64_t seed) {
  if (missing.empty()) return batch;
  std::vector<int> extra_labels;
  extra_labels.reserve(missing.size() * per_class_count);
  for (int c : missing)
    for (std::size_t i = 0; i < per_class_count; ++i) extra_labels.push_back(c);

  PseudoBatch extra = generate(g, extra_labels, derive_seed(seed, SeedTag::MissingFill));
  PseudoBatch out = batch;
  out.labels.insert(out.labels.end(), extra.labels.begin(), extra.labels.end());
  out.confidence.insert(out.confidence.end(), extra.confidence.begin(), extra.confidence.end());
  out.weight.insert(out.weight.end(), extra.weight.begin(), extra.weight.end());
  const std::size_t width = batch.samples.cols();
  out.samples = TensorValue::zeros({out.labels.size(), width});
  std::copy(batch.samples.data.begin(), batch.samples.data.end(), out.samples.data.begin());
  std::copy(extra.samples.data.begin(), extra.samples.data.end(),
            out.samples.data.begin() + static_cast<std::ptrdiff_t>(batch.samples.size()));
  out.check_aligned();
  return out;
}

struct GeneratorStepResult {
  double loss = 0.0;
  double ensemble_ce = 0.0;
  double diversity = 0.0;
};

/// One SGD step on: weighted-ensemble cross-entropy against the conditioning
/// labels minus 0.1 x mean pairwise sample distance. Teachers are read-only.
inline GeneratorStepResult train_generator_step(GeneratorNet& g,
                                                const std::vector<const SplitModel*>& teachers,
                                                std::span<const double> teacher_weights,
                                                std::size_t batch_size, double lr,
                                                std::uint64_t seed) {
  if (teachers.empty()) throw StateError("train_generator_step: need at least one teacher");
  if (batch_size == 0) throw StateError("train_generator_step: empty batch");

  Rng rng = make_rng(seed, SeedTag::GeneratorStep);
  std::vector<int> labels(batch_size);
  std::uniform_int_distribution<int> pick_label(0, static_cast<int>(g.class_count()) - 1);
  for (int& y : labels) y = pick_label(rng);

  TensorValue inputs = detail::generator_inputs(g, labels, rng);
  ForwardCache body_cache;
  TensorValue samples = forward(g.body, inputs, &body_cache);
  const std::size_t m = batch_size, d = samples.cols();

  // weighted ensemble prediction and its cross-entropy to the labels
  std::vector<TensorValue> probs;
  std::vector<ModelCache> caches(teachers.size());
  probs.reserve(teachers.size());
  for (std::size_t k = 0; k < teachers.size(); ++k)
    probs.push_back(softmax(model_forward(*teachers[k], samples, &caches[k])));
  TensorValue mean = TensorValue::zeros(probs[0].shape);
  for (std::size_t k = 0; k < teachers.size(); ++k)
    for (std::size_t i = 0; i < mean.size(); ++i)
      mean.data[i] += teacher_weights[k] * probs[k].data[i];

  GeneratorStepResult res;
  const std::size_t classes = mean.cols();
  TensorValue dmean = TensorValue::zeros(mean.shape);  // dCE / d ensemble probs
  for (std::size_t j = 0; j < m; ++j) {
    const auto y = static_cast<std::size_t>(labels[j]);
    const double p = std::max(mean.at(j, y), kLogEps);
    res.ensemble_ce -= std::log(p) / static_cast<double>(m);
    dmean.at(j, y) = -1.0 / (p * static_cast<double>(m));
  }

  // route dCE through each teacher (softmax jacobian, then full backward)
  TensorValue dsamples = TensorValue::zeros(samples.shape);
  for (std::size_t k = 0; k < teachers.size(); ++k) {
    TensorValue dlogits = TensorValue::zeros(mean.shape);
    for (std::size_t j = 0; j < m; ++j) {
      const double* p = probs[k].data.data() + j * classes;
      const double* u = dmean.data.data() + j * classes;
      double dot = 0.0;
      for (std::size_t c = 0; c < classes; ++c) dot += u[c] * p[c];
      double* out = dlogits.data.data() + j * classes;
      for (std::size_t c = 0; c < classes; ++c)
        out[c] = teacher_weights[k] * p[c] * (u[c] - dot);
    }
    auto [grad, dx] = model_backward(*teachers[k], caches[k], dlogits);
    (void)grad;
    for (std::size_t i = 0; i < dsamples.size(); ++i) dsamples.data[i] += dx.data[i];
  }

  // diversity bonus: mean pairwise distance, maximized
  constexpr double kDiversityCoeff = 0.1;
  if (m > 1) {
    const double norm = 2.0 / (static_cast<double>(m) * static_cast<double>(m - 1));
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = i + 1; j < m; ++j) {
        const double* xi = samples.data.data() + i * d;
        const double* xj = samples.data.data() + j * d;
        double dist2 = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          const double diff = xi[c] - xj[c];
          dist2 += diff * diff;
        }
        const double dist = std::sqrt(dist2);
        res.diversity += norm * dist;
        if (dist > 1e-12) {
          double* gi = dsamples.data.data() + i * d;
          double* gj = dsamples.data.data() + j * d;
          const double coeff = -kDiversityCoeff * norm / dist;
          for (std::size_t c = 0; c < d; ++c) {
            const double diff = xi[c] - xj[c];
            gi[c] += coeff * diff;
            gj[c] -= coeff * diff;
          }
        }
      }
    }
  }
  res.loss = res.ensemble_ce - kDiversityCoeff * res.diversity;

  BackwardResult body_grad = backward(g.body, body_cache, dsamples);
  // slice the input gradient: noise part is not a parameter, the embedding
  // slice accumulates into the conditioning label's row
  TensorValue dembed = TensorValue::zeros(g.label_embedding.shape);
  const std::size_t noise = g.noise_extent, embed = g.embed_extent();
  for (std::size_t j = 0; j < m; ++j) {
    const double* gin = body_grad.input_gradient.data.data() + j * (noise + embed);
    double* row = dembed.data.data() + static_cast<std::size_t>(labels[j]) * embed;
    for (std::size_t c = 0; c < embed; ++c) row[c] += gin[noise + c];
  }
  sgd_step(g.body, body_grad.tape, lr);
  for (std::size_t i = 0; i < g.label_embedding.size(); ++i)
    g.label_embedding.data[i] -= lr * dembed.data[i];
  return res;
}

}  // namespace hfedckd
