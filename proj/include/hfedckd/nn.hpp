// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hfedckd/errors.hpp"
#include "hfedckd/tensor.hpp"

namespace hfedckd {

// Minimal dense differentiable compute: fixed chains of affine layers with
// elementwise activations, analytic backward, and the scalar losses the
// protocol needs. Everything is double precision.

constexpr double kLogEps = 1e-12;  // clamp for log arguments

enum class Activation { Identity, Relu, Tanh };

struct DenseLayer {
  TensorValue weights;  // out x in
  TensorValue bias;     // out
  Activation activation = Activation::Identity;

  std::size_t in_extent() const { return weights.cols(); }
  std::size_t out_extent() const { return weights.rows(); }
};

using LayerStack = std::vector<DenseLayer>;

inline void check_layer(const DenseLayer& layer, const char* what) {
  if (layer.weights.rank() != 2 || layer.bias.rank() != 1 ||
      layer.bias.size() != layer.weights.rows()) {
    throw ShapeError(std::string(what) + ": weight " + shape_string(layer.weights) +
                     " and bias " + shape_string(layer.bias) + " are inconsistent");
  }
}

/// Per-layer activations cached during forward; required by backward.
struct ForwardCache {
  std::vector<TensorValue> acts;  // acts[0] = input, acts[l+1] = output of layer l
  std::vector<TensorValue> pre;   // pre-activation of layer l
};

namespace detail {

inline double apply_activation(Activation a, double z) {
  switch (a) {
    case Activation::Identity: return z;
    case Activation::Relu: return z > 0.0 ? z : 0.0;
    case Activation::Tanh: return std::tanh(z);
  }
  return z;
}

// derivative expressed through pre-activation z and post-activation y
inline double activation_grad(Activation a, double z, double y) {
  switch (a) {
    case Activation::Identity: return 1.0;
    case Activation::Relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: return 1.0 - y * y;
  }
  return 1.0;
}

inline TensorValue affine(const DenseLayer& layer, const TensorValue& input) {
  const std::size_t m = input.rows(), in = input.cols(), out = layer.out_extent();
  TensorValue z = TensorValue::zeros({m, out});
  const double* w = layer.weights.data.data();
  for (std::size_t r = 0; r < m; ++r) {
    const double* x = input.data.data() + r * in;
    double* zr = z.data.data() + r * out;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = w + o * in;
      double s = layer.bias.data[o];
      for (std::size_t i = 0; i < in; ++i) s += wo[i] * x[i];
      zr[o] = s;
    }
  }
  return z;
}

}  // namespace detail

/// Run a layer chain on a batch (rows = samples). Pass a cache to enable
/// backward on the same chain.
inline TensorValue forward(const LayerStack& layers, const TensorValue& input,
                           ForwardCache* cache = nullptr) {
  if (input.rank() != 2)
    throw ShapeError("forward: expected rank-2 batch, got " + shape_string(input));
  if (!layers.empty() && input.cols() != layers.front().in_extent())
    throw ShapeError("forward: input extent " + std::to_string(input.cols()) +
                     " does not match first layer in-extent " +
                     std::to_string(layers.front().in_extent()));
  if (cache) {
    cache->acts.clear();
    cache->pre.clear();
    cache->acts.push_back(input);
  }
  TensorValue current = input;
  for (const DenseLayer& layer : layers) {
    check_layer(layer, "forward");
    if (current.cols() != layer.in_extent())
      throw ShapeError("forward: layer in-extent mismatch");
    TensorValue z = detail::affine(layer, current);
    TensorValue y = z;
    if (layer.activation != Activation::Identity)
      for (double& v : y.data) v = detail::apply_activation(layer.activation, v);
    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->acts.push_back(y);
    }
    current = std::move(y);
  }
  check_finite(current, "forward");
  return current;
}

/// Gradients for a parameter list, stored [dW0, db0, dW1, db1, ...].
struct GradientTape {
  std::vector<TensorValue> grads;

  static GradientTape zeros_like(const LayerStack& layers) {
    GradientTape t;
    t.grads.reserve(layers.size() * 2);
    for (const DenseLayer& l : layers) {
      t.grads.push_back(TensorValue::zeros(l.weights.shape));
      t.grads.push_back(TensorValue::zeros(l.bias.shape));
    }
    return t;
  }
};

inline void tape_axpy(GradientTape& dst, const GradientTape& src, double scale = 1.0) {
  if (dst.grads.size() != src.grads.size())
    throw StateError("tape_axpy: tapes have different parameter counts");
  for (std::size_t i = 0; i < dst.grads.size(); ++i) {
    if (!dst.grads[i].same_shape(src.grads[i]))
      throw StateError("tape_axpy: gradient shape mismatch at slot " + std::to_string(i));
    for (std::size_t j = 0; j < dst.grads[i].size(); ++j)
      dst.grads[i].data[j] += scale * src.grads[i].data[j];
  }
}

struct BackwardResult {
  GradientTape tape;
  TensorValue input_gradient;
};

inline void check_cache(const LayerStack& layers, const ForwardCache& cache) {
  if (cache.pre.size() != layers.size() || cache.acts.size() != layers.size() + 1)
    throw StateError("backward: cache does not belong to this layer chain");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (cache.acts[l].cols() != layers[l].in_extent() ||
        cache.pre[l].cols() != layers[l].out_extent())
      throw StateError("backward: cache extents stale for layer " + std::to_string(l));
  }
}

/// Backward with an additive output gradient per layer: layer_grads[l] is
/// injected at the post-activation output of layer l (empty tensor = none).
/// Supports losses attached to intermediate features.
inline BackwardResult backward_multi(const LayerStack& layers, const ForwardCache& cache,
                                     const std::vector<TensorValue>& layer_grads) {
  check_cache(layers, cache);
  if (layer_grads.size() != layers.size())
    throw StateError("backward_multi: need one (possibly empty) gradient per layer");

  const std::size_t batch = cache.acts[0].rows();
  BackwardResult out;
  out.tape.grads.resize(layers.size() * 2);

  TensorValue carry;  // gradient w.r.t. output of the layer below
  for (std::size_t li = layers.size(); li-- > 0;) {
    const DenseLayer& layer = layers[li];
    const TensorValue& inject = layer_grads[li];
    if (!inject.empty() &&
        (inject.rows() != batch || inject.cols() != layer.out_extent()))
      throw StateError("backward_multi: injected gradient shape mismatch at layer " +
                       std::to_string(li));

    TensorValue dpost = carry.empty() ? TensorValue::zeros({batch, layer.out_extent()})
                                      : std::move(carry);
    if (!inject.empty())
      for (std::size_t j = 0; j < dpost.size(); ++j) dpost.data[j] += inject.data[j];

    // through the activation
    const TensorValue& pre = cache.pre[li];
    const TensorValue& post = cache.acts[li + 1];
    TensorValue dz = std::move(dpost);
    if (layer.activation != Activation::Identity)
      for (std::size_t j = 0; j < dz.size(); ++j)
        dz.data[j] *= detail::activation_grad(layer.activation, pre.data[j], post.data[j]);

    const TensorValue& a = cache.acts[li];
    const std::size_t in = layer.in_extent(), outw = layer.out_extent();
    TensorValue dw = TensorValue::zeros({outw, in});
    TensorValue db = TensorValue::zeros({outw});
    TensorValue da = TensorValue::zeros({batch, in});
    for (std::size_t r = 0; r < batch; ++r) {
      const double* ar = a.data.data() + r * in;
      const double* dzr = dz.data.data() + r * outw;
      double* dar = da.data.data() + r * in;
      for (std::size_t o = 0; o < outw; ++o) {
        const double g = dzr[o];
        if (g == 0.0) continue;
        db.data[o] += g;
        double* dwo = dw.data.data() + o * in;
        const double* wo = layer.weights.data.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) {
          dwo[i] += g * ar[i];
          dar[i] += g * wo[i];
        }
      }
    }
    out.tape.grads[2 * li] = std::move(dw);
    out.tape.grads[2 * li + 1] = std::move(db);
    carry = std::move(da);
  }
  out.input_gradient = carry.empty() ? TensorValue::zeros({batch, 0}) : std::move(carry);
  return out;
}

/// Plain backward: upstream gradient applies at the final output.
inline BackwardResult backward(const LayerStack& layers, const ForwardCache& cache,
                               const TensorValue& upstream) {
  if (layers.empty()) throw StateError("backward: empty layer chain");
  std::vector<TensorValue> grads(layers.size());
  grads.back() = upstream;
  return backward_multi(layers, cache, grads);
}

inline std::vector<TensorValue*> parameters(LayerStack& layers) {
  std::vector<TensorValue*> out;
  out.reserve(layers.size() * 2);
  for (DenseLayer& l : layers) {
    out.push_back(&l.weights);
    out.push_back(&l.bias);
  }
  return out;
}

inline std::vector<const TensorValue*> parameters(const LayerStack& layers) {
  std::vector<const TensorValue*> out;
  out.reserve(layers.size() * 2);
  for (const DenseLayer& l : layers) {
    out.push_back(&l.weights);
    out.push_back(&l.bias);
  }
  return out;
}

/// params <- params - lr * grads. Tape must align 1:1 with the stack.
inline void sgd_step(LayerStack& layers, const GradientTape& tape, double lr) {
  std::vector<TensorValue*> params = parameters(layers);
  if (tape.grads.size() != params.size())
    throw StateError("sgd_step: tape has " + std::to_string(tape.grads.size()) +
                     " gradients for " + std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(tape.grads[i]))
      throw StateError("sgd_step: gradient shape mismatch at slot " + std::to_string(i));
    for (std::size_t j = 0; j < params[i]->size(); ++j)
      params[i]->data[j] -= lr * tape.grads[i].data[j];
  }
}

/// Row-wise softmax with max subtraction. Accepts rank-1 (single row) or
/// rank-2 batches.
inline TensorValue softmax(const TensorValue& logits) {
  if (logits.cols() == 0) throw ShapeError("softmax: empty last extent");
  TensorValue out = logits;
  const std::size_t m = out.rows(), n = out.cols();
  for (std::size_t r = 0; r < m; ++r) {
    double* row = out.data.data() + r * n;
    double mx = row[0];
    for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    for (std::size_t c = 0; c < n; ++c) row[c] /= sum;
  }
  return out;
}

/// KL(p || q) with q clamped below at kLogEps and 0*log0 = 0.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw ShapeError("kl_divergence: distribution lengths differ (" +
                     std::to_string(p.size()) + " vs " + std::to_string(q.size()) + ")");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    kl += p[i] * std::log(p[i] / std::max(q[i], kLogEps));
  }
  return std::max(kl, 0.0);
}

/// Cosine similarity clamped to [-1, 1]; zero vectors map to 0.
inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size())
    throw ShapeError("cosine_similarity: vector lengths differ");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

struct CrossEntropyResult {
  double loss = 0.0;
  TensorValue dlogits;
};

/// Mean cross-entropy of softmax(logits) against integer labels, with the
/// analytic gradient w.r.t. the logits.
inline CrossEntropyResult cross_entropy(const TensorValue& logits,
                                        const std::vector<int>& labels) {
  if (logits.rows() != labels.size())
    throw ShapeError("cross_entropy: batch size " + std::to_string(logits.rows()) +
                     " does not match label count " + std::to_string(labels.size()));
  const std::size_t m = logits.rows(), n = logits.cols();
  TensorValue probs = softmax(logits);
  CrossEntropyResult res;
  res.dlogits = probs;
  for (std::size_t r = 0; r < m; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= n)
      throw ShapeError("cross_entropy: label " + std::to_string(y) + " out of range");
    res.loss -= std::log(std::max(probs.at(r, static_cast<std::size_t>(y)), kLogEps));
    res.dlogits.at(r, static_cast<std::size_t>(y)) -= 1.0;
  }
  res.loss /= static_cast<double>(m);
  for (double& g : res.dlogits.data) g /= static_cast<double>(m);
  return res;
}

}  // namespace hfedckd
