// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hfedckd/nn.hpp"
#include "hfedckd/rng.hpp"

namespace hfedckd {

// Heterogeneous MLP zoo. Three families differing in encoder depth/width
// stand in for distinct client architectures whose parameters cannot be
// aggregated. The last encoder layer is a shared-width projection so that
// features are comparable across families; the classifier is one dense layer.

enum class ModelFamily { Compact, Standard, Deep };

inline const char* family_name(ModelFamily f) {
  switch (f) {
    case ModelFamily::Compact: return "compact";
    case ModelFamily::Standard: return "standard";
    case ModelFamily::Deep: return "deep";
  }
  return "?";
}

inline ModelFamily family_from_name(const std::string& s) {
  if (s == "compact") return ModelFamily::Compact;
  if (s == "standard") return ModelFamily::Standard;
  if (s == "deep") return ModelFamily::Deep;
  throw ConfigError("unknown model family '" + s + "'");
}

struct ModelSpec {
  ModelFamily family = ModelFamily::Standard;
  double capacity = 1.0;  // scales hidden widths; one of 1, 1/2, 1/4
  std::size_t input_extent = 0;
  std::size_t feature_extent = 0;
  std::size_t class_count = 0;
};

/// Hidden widths of the encoder at capacity 1, projection layer excluded.
inline std::vector<std::size_t> family_hidden_widths(ModelFamily f) {
  switch (f) {
    case ModelFamily::Compact: return {48};
    case ModelFamily::Standard: return {64, 32};
    case ModelFamily::Deep: return {96, 64, 32};
  }
  return {};
}

inline std::size_t scaled_width(std::size_t base, double capacity) {
  const auto w = static_cast<std::size_t>(std::floor(static_cast<double>(base) * capacity));
  return std::max<std::size_t>(w, 4);
}

struct SplitModel {
  LayerStack encoder;     // input -> ... -> feature_extent
  LayerStack classifier;  // feature_extent -> class_count
  ModelSpec spec;
};

namespace detail {

inline DenseLayer init_layer(std::size_t out, std::size_t in, Activation act, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-bound, bound);
  DenseLayer layer;
  layer.weights = TensorValue::zeros({out, in});
  for (double& w : layer.weights.data) w = u(rng);
  layer.bias = TensorValue::zeros({out});
  layer.activation = act;
  return layer;
}

}  // namespace detail

/// Deterministic in (spec, seed).
inline SplitModel build_model(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.input_extent == 0 || spec.feature_extent == 0 || spec.class_count == 0)
    throw ConfigError("build_model: spec extents must be positive");
  Rng rng(seed);
  SplitModel model;
  model.spec = spec;
  std::size_t in = spec.input_extent;
  for (std::size_t base : family_hidden_widths(spec.family)) {
    const std::size_t w = scaled_width(base, spec.capacity);
    model.encoder.push_back(detail::init_layer(w, in, Activation::Relu, rng));
    in = w;
  }
  // projection to the shared feature space; tanh keeps features bounded
  model.encoder.push_back(detail::init_layer(spec.feature_extent, in, Activation::Tanh, rng));
  model.classifier.push_back(
      detail::init_layer(spec.class_count, spec.feature_extent, Activation::Identity, rng));
  return model;
}

inline std::size_t parameter_count(const SplitModel& m) {
  std::size_t n = 0;
  for (const DenseLayer& l : m.encoder) n += l.weights.size() + l.bias.size();
  for (const DenseLayer& l : m.classifier) n += l.weights.size() + l.bias.size();
  return n;
}

struct EncodeResult {
  TensorValue features;                    // batch x feature_extent
  std::vector<TensorValue> layer_features; // one per encoder layer, shallow to deep
};

/// Extract features, keeping per-layer intermediates for multi-layer losses.
inline EncodeResult encode(const SplitModel& model, const TensorValue& x) {
  ForwardCache cache;
  EncodeResult res;
  res.features = forward(model.encoder, x, &cache);
  res.layer_features.assign(cache.acts.begin() + 1, cache.acts.end());
  return res;
}

inline TensorValue classify(const SplitModel& model, const TensorValue& z) {
  if (z.cols() != model.spec.feature_extent)
    throw ShapeError("classify: feature extent " + std::to_string(z.cols()) +
                     " does not match spec feature extent " +
                     std::to_string(model.spec.feature_extent));
  return forward(model.classifier, z);
}

struct ModelCache {
  ForwardCache encoder;
  ForwardCache classifier;
};

/// Full forward (encode then classify) to logits.
inline TensorValue model_forward(const SplitModel& model, const TensorValue& x,
                                 ModelCache* cache = nullptr) {
  if (!cache) {
    TensorValue z = forward(model.encoder, x);
    return forward(model.classifier, z);
  }
  TensorValue z = forward(model.encoder, x, &cache->encoder);
  return forward(model.classifier, z, &cache->classifier);
}

struct ModelGrad {
  GradientTape encoder;
  GradientTape classifier;
};

/// Backprop dlogits through classifier and encoder; returns both tapes and
/// the gradient w.r.t. the input batch.
inline std::pair<ModelGrad, TensorValue> model_backward(const SplitModel& model,
                                                        const ModelCache& cache,
                                                        const TensorValue& dlogits) {
  BackwardResult cls = backward(model.classifier, cache.classifier, dlogits);
  BackwardResult enc = backward(model.encoder, cache.encoder, cls.input_gradient);
  ModelGrad grad;
  grad.classifier = std::move(cls.tape);
  grad.encoder = std::move(enc.tape);
  return {std::move(grad), std::move(enc.input_gradient)};
}

inline void sgd_step(SplitModel& model, const ModelGrad& grad, double lr) {
  sgd_step(model.encoder, grad.encoder, lr);
  sgd_step(model.classifier, grad.classifier, lr);
}

enum class Heterogeneity { WidthScaled, Families };

inline const char* heterogeneity_name(Heterogeneity h) {
  return h == Heterogeneity::WidthScaled ? "width_scaled" : "families";
}

/// Deal specs across N clients at 40/30/30 (largest-remainder rounding),
/// largest spec first, then shuffle the assignment with the seed.
inline std::vector<ModelSpec> assign_specs(std::size_t n_clients, Heterogeneity mode,
                                           std::uint64_t seed, std::size_t input_extent,
                                           std::size_t feature_extent,
                                           std::size_t class_count) {
  if (n_clients == 0) throw ConfigError("assign_specs: need at least one client");

  std::array<ModelSpec, 3> tiers;
  for (ModelSpec& s : tiers) {
    s.input_extent = input_extent;
    s.feature_extent = feature_extent;
    s.class_count = class_count;
  }
  if (mode == Heterogeneity::WidthScaled) {
    tiers[0].family = tiers[1].family = tiers[2].family = ModelFamily::Standard;
    tiers[0].capacity = 1.0;
    tiers[1].capacity = 0.5;
    tiers[2].capacity = 0.25;
  } else {
    tiers[0].family = ModelFamily::Deep;
    tiers[1].family = ModelFamily::Standard;
    tiers[2].family = ModelFamily::Compact;
    tiers[0].capacity = tiers[1].capacity = tiers[2].capacity = 1.0;
  }

  const std::array<double, 3> ratio = {0.4, 0.3, 0.3};
  std::array<std::size_t, 3> count{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double quota = ratio[i] * static_cast<double>(n_clients);
    count[i] = static_cast<std::size_t>(std::floor(quota));
    remainder[i] = quota - std::floor(quota);
    assigned += count[i];
  }
  while (assigned < n_clients) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i)
      if (remainder[i] > remainder[best]) best = i;
    ++count[best];
    remainder[best] = -1.0;
    ++assigned;
  }

  std::vector<ModelSpec> specs;
  specs.reserve(n_clients);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < count[i]; ++k) specs.push_back(tiers[i]);

  Rng rng = make_rng(seed, SeedTag::SpecAssign);
  for (std::size_t i = specs.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(specs[i - 1], specs[pick(rng)]);
  }
  return specs;
}

}  // namespace hfedckd
