// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hfedckd/config.hpp"
#include "hfedckd/protocol.hpp"

namespace hfedckd {

// Metrics files are comma-separated text, one row per round, numbers at six
// significant digits. Everything written here is a deterministic function of
// (config, seed); wall time deliberately stays out of the file so identical
// runs produce identical bytes.

inline const char* kMetricsHeader =
    "round,mean_train_loss,mean_kd_loss,mean_contrastive_loss,"
    "mean_client_acc,std_client_acc,global_acc,distill_loss,generator_loss,"
    "participating_p_mass,ideal_objective,partial_objective,objective_gap,"
    "pseudo_label_js,participants";

inline std::string format_metric(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline void write_metrics(const std::vector<RoundRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open metrics file for writing: " + path);
  out << kMetricsHeader << "\n";
  for (const RoundRecord& r : records) {
    double p_mass = 0.0;
    for (std::size_t id : r.participants)
      if (id < r.data_proportions.size()) p_mass += r.data_proportions[id];
    out << r.round << ',' << format_metric(r.mean_train_loss) << ','
        << format_metric(r.mean_kd_loss) << ',' << format_metric(r.mean_contrastive_loss)
        << ',' << format_metric(r.mean_client_accuracy) << ','
        << format_metric(r.std_client_accuracy) << ',' << format_metric(r.global_accuracy)
        << ',' << format_metric(r.distill_loss) << ',' << format_metric(r.generator_loss)
        << ',' << format_metric(p_mass) << ',' << format_metric(r.ideal_objective) << ','
        << format_metric(r.partial_objective) << ',' << format_metric(r.objective_gap)
        << ',' << format_metric(r.pseudo_label_divergence) << ',';
    for (std::size_t i = 0; i < r.participants.size(); ++i) {
      if (i) out << ';';
      out << r.participants[i];
    }
    out << "\n";
  }
  if (!out) throw IoError("metrics write failed: " + path);
}

/// The manifest is the serialized resolved config; a run is reproducible
/// from this file alone.
inline void write_manifest(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open manifest for writing: " + path);
  out << serialize_config(cfg);
  if (!out) throw IoError("manifest write failed: " + path);
}

/// Rows of (tag, true label, feature vector) for an external projection
/// tool; the subsample is deterministic in the seed.
inline void dump_features(const SplitModel& model, const Dataset& data,
                          std::size_t sample_count, const std::string& path,
                          std::uint64_t seed, const std::string& tag = "model") {
  if (sample_count > data.sample_count())
    throw ConfigError("dump_features: sample_count " + std::to_string(sample_count) +
                      " exceeds dataset size " + std::to_string(data.sample_count()));
  std::ofstream out(path);
  if (!out) throw IoError("cannot open feature dump for writing: " + path);

  std::vector<std::size_t> order(data.sample_count());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = make_rng(seed, SeedTag::FeatureDump);
  for (std::size_t i = 0; i < sample_count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(rng)]);
  }

  const std::size_t width = data.input_extent();
  for (std::size_t i = 0; i < sample_count; ++i) {
    const std::size_t idx = order[i];
    TensorValue x = TensorValue::zeros({1, width});
    std::copy(data.features.data.begin() + static_cast<std::ptrdiff_t>(idx * width),
              data.features.data.begin() + static_cast<std::ptrdiff_t>((idx + 1) * width),
              x.data.begin());
    const EncodeResult enc = encode(model, x);
    out << tag << ',' << data.labels[idx];
    for (double f : enc.features.data) out << ',' << format_metric(f);
    out << "\n";
  }
  if (!out) throw IoError("feature dump write failed: " + path);
}

}  // namespace hfedckd
