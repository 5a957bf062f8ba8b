// SPDX-License-Identifier: Apache-2.0
//
// Test-only reference implementations. Everything here is written as plainly
// as possible (direct loops over the defining formulas) and stays independent
// of the library code paths it checks.
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "hfedckd/hfedckd.hpp"

namespace oracles {

using hfedckd::TensorValue;

// direct triple-loop affine + activation chain
inline TensorValue naive_forward(const std::vector<hfedckd::DenseLayer>& layers,
                                 const TensorValue& input) {
  TensorValue cur = input;
  for (const auto& layer : layers) {
    const std::size_t m = cur.rows(), in = cur.cols(), out = layer.weights.rows();
    TensorValue next = TensorValue::zeros({m, out});
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t o = 0; o < out; ++o) {
        double s = layer.bias.data[o];
        for (std::size_t i = 0; i < in; ++i)
          s += layer.weights.at(o, i) * cur.at(r, i);
        switch (layer.activation) {
          case hfedckd::Activation::Identity: break;
          case hfedckd::Activation::Relu: s = s > 0 ? s : 0; break;
          case hfedckd::Activation::Tanh: s = std::tanh(s); break;
        }
        next.at(r, o) = s;
      }
    cur = next;
  }
  return cur;
}

inline double naive_kl(const std::vector<double>& p, const std::vector<double>& q) {
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) kl += p[i] * std::log(p[i] / std::max(q[i], 1e-12));
  return kl;
}

inline double naive_js(const std::vector<double>& p, const std::vector<double>& q) {
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  return 0.5 * naive_kl(p, m) + 0.5 * naive_kl(q, m);
}

// Eq.-style double loop: sum_k w_k sum_j gamma_j KL(student_j || teacher_jk)
inline double naive_weighted_kl(const TensorValue& student,
                                const std::vector<TensorValue>& teachers,
                                const std::vector<double>& w,
                                const std::vector<double>& gamma) {
  double loss = 0.0;
  for (std::size_t k = 0; k < teachers.size(); ++k)
    for (std::size_t j = 0; j < student.rows(); ++j) {
      std::vector<double> p(student.row(j).begin(), student.row(j).end());
      std::vector<double> q(teachers[k].row(j).begin(), teachers[k].row(j).end());
      loss += w[k] * gamma[j] * naive_kl(p, q);
    }
  return loss;
}

inline double naive_cos(const std::vector<double>& u, const std::vector<double>& v) {
  double dot = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0 || nv == 0) return 0.0;
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

// per-sample -log(a / (a + sum b_k)) with a, b straight from the formulas
inline double naive_infonce(const TensorValue& anchor, const TensorValue& positive,
                            const std::vector<TensorValue>& negatives, double tau) {
  double loss = 0.0;
  const std::size_t m = anchor.rows();
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<double> a(anchor.row(j).begin(), anchor.row(j).end());
    std::vector<double> p(positive.row(j).begin(), positive.row(j).end());
    const double pos = std::exp(naive_cos(a, p) / tau);
    double denom = pos;
    for (const TensorValue& n : negatives) {
      std::vector<double> nn(n.row(j).begin(), n.row(j).end());
      denom += std::exp(naive_cos(a, nn) / tau);
    }
    loss += -std::log(pos / denom);
  }
  return loss / static_cast<double>(m);
}

// central finite differences over a list of parameter tensors
inline std::vector<TensorValue> finite_difference(
    const std::vector<TensorValue*>& params, const std::function<double()>& loss,
    double step = 1e-5) {
  std::vector<TensorValue> grads;
  grads.reserve(params.size());
  for (TensorValue* p : params) {
    TensorValue g = TensorValue::zeros(p->shape);
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double saved = p->data[i];
      p->data[i] = saved + step;
      const double up = loss();
      p->data[i] = saved - step;
      const double down = loss();
      p->data[i] = saved;
      g.data[i] = (up - down) / (2.0 * step);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

// relative error with an absolute fallback for tiny magnitudes
inline bool grad_close(double analytic, double numeric, double rel_tol = 1e-3,
                       double abs_floor = 1e-6) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale < abs_floor) return std::abs(analytic - numeric) < abs_floor;
  return std::abs(analytic - numeric) / scale <= rel_tol;
}

inline bool tape_matches_fd(const hfedckd::GradientTape& tape,
                            const std::vector<TensorValue>& fd, double rel_tol = 1e-3) {
  if (tape.grads.size() != fd.size()) return false;
  for (std::size_t i = 0; i < fd.size(); ++i)
    for (std::size_t j = 0; j < fd[i].size(); ++j)
      if (!grad_close(tape.grads[i].data[j], fd[i].data[j], rel_tol)) return false;
  return true;
}

inline TensorValue random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng,
                                 double scale = 1.0) {
  TensorValue t = TensorValue::zeros(std::move(shape));
  std::normal_distribution<double> dist(0.0, scale);
  for (double& v : t.data) v = dist(rng);
  return t;
}

inline std::vector<double> random_distribution(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> p(n);
  double sum = 0;
  for (double& v : p) {
    v = u(rng);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

inline TensorValue random_prob_batch(std::size_t m, std::size_t c, std::mt19937_64& rng) {
  TensorValue t = TensorValue::zeros({m, c});
  for (std::size_t j = 0; j < m; ++j) {
    const std::vector<double> p = random_distribution(c, rng);
    for (std::size_t i = 0; i < c; ++i) t.at(j, i) = p[i];
  }
  return t;
}

}  // namespace oracles
