// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hfedckd/contrastive.hpp"
#include "hfedckd/ipwd.hpp"
#include "hfedckd/model.hpp"

namespace hfedckd {

// Flat key = value experiment configuration. Only `dataset`, `clients` and
// `seed` are required; every other key has a documented default. Unknown
// keys are rejected so typos fail loudly before any compute starts.

enum class DatasetKind { Synthetic, FashionIdx, UciHar };

inline const char* dataset_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::Synthetic: return "synthetic";
    case DatasetKind::FashionIdx: return "fashion_idx";
    case DatasetKind::UciHar: return "ucihar";
  }
  return "?";
}

enum class Variant { Full, NoIpwd, NoBcl, Baseline };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoIpwd: return "no_ipwd";
    case Variant::NoBcl: return "no_bcl";
    case Variant::Baseline: return "baseline";
  }
  return "?";
}

struct ExperimentConfig {
  DatasetKind dataset = DatasetKind::Synthetic;
  std::string data_dir;
  std::size_t clients = 0;
  std::size_t participants_per_round = 0;  // 0 = min(10, clients)
  std::size_t rounds = 100;
  double dirichlet_alpha = 0.1;
  Heterogeneity heterogeneity = Heterogeneity::Families;
  Variant variant = Variant::Full;
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  double learning_rate = 0.001;
  double generator_rate = 0.001;
  double distill_rate = 0.0;  // 0 = use learning_rate
  std::size_t local_epochs = 2;
  std::size_t local_batch = 32;
  std::size_t pseudo_batch = 64;
  double kd_weight = 1.0;
  std::size_t workers = 1;
  std::size_t eval_every = 1;
  bool save_models = false;

  IpwdConfig ipwd;                 // frequency_floor 0 = resolve to 1/(2*rounds)
  ContrastiveConfig contrastive;

  std::size_t feature_extent = 16;
  std::size_t generator_steps = 10;
  std::size_t distill_steps = 10;

  std::size_t synthetic_classes = 3;
  std::size_t synthetic_features = 8;
  std::size_t synthetic_train = 4000;
  std::size_t synthetic_test = 1000;
  double synthetic_separation = 4.0;

  bool operator==(const ExperimentConfig&) const = default;
};

namespace detail {

struct KeyValue {
  std::map<std::string, std::string> entries;

  const std::string* find(const std::string& key) const {
    const auto it = entries.find(key);
    return it == entries.end() ? nullptr : &it->second;
  }
};

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline KeyValue parse_key_values(const std::string& text) {
  KeyValue kv;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (kv.entries.count(key))
      throw ConfigError("config key '" + key + "' appears more than once");
    kv.entries[key] = value;
  }
  return kv;
}

inline double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected number, got '" + value + "'");
  }
}

inline std::uint64_t to_uint(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size() || value.find('-') != std::string::npos)
      throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected nonnegative integer, got '" +
                      value + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

inline std::vector<double> to_double_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  if (value.empty()) return out;
  std::size_t start = 0;
  while (start <= value.size()) {
    const auto end = value.find(';', start);
    const std::string tok = trim(value.substr(start, end - start));
    if (!tok.empty()) out.push_back(to_double(key, tok));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

}  // namespace detail

inline void validate_config(const ExperimentConfig& cfg) {
  if (cfg.clients == 0) throw ConfigError("config key 'clients': must be at least 1");
  if (cfg.participants_per_round > cfg.clients)
    throw ConfigError("config keys 'participants_per_round' and 'clients': " +
                      std::to_string(cfg.participants_per_round) + " participants exceed " +
                      std::to_string(cfg.clients) + " clients");
  if (cfg.rounds == 0) throw ConfigError("config key 'rounds': must be at least 1");
  if (cfg.learning_rate < 0.0)
    throw ConfigError("config key 'learning_rate': must be nonnegative");
  if (cfg.generator_rate < 0.0)
    throw ConfigError("config key 'generator_rate': must be nonnegative");
  if (cfg.distill_rate < 0.0)
    throw ConfigError("config key 'distill_rate': must be nonnegative");
  if (cfg.dirichlet_alpha <= 0.0)
    throw ConfigError("config key 'dirichlet_alpha': must be positive");
  if (cfg.pseudo_batch == 0)
    throw ConfigError("config key 'pseudo_batch': must be at least 1");
  if (cfg.local_batch == 0)
    throw ConfigError("config key 'local_batch': must be at least 1");
  if (cfg.eval_every == 0) throw ConfigError("config key 'eval_every': must be at least 1");
  if (cfg.contrastive.temperature <= 0.0)
    throw ConfigError("config key 'temperature': must be positive");
  if (cfg.ipwd.alpha < 0.0 || cfg.ipwd.beta < 0.0)
    throw ConfigError("config keys 'ipwd_alpha'/'ipwd_beta': must be nonnegative");
  if (cfg.ipwd.sample_slope <= 0.0)
    throw ConfigError("config key 'sample_slope': must be positive");
  for (double w : cfg.contrastive.layer_weights)
    if (w < 0.0) throw ConfigError("config key 'layer_weights': entries must be nonnegative");
  if (cfg.feature_extent == 0)
    throw ConfigError("config key 'feature_extent': must be at least 1");
  if ((cfg.dataset == DatasetKind::FashionIdx || cfg.dataset == DatasetKind::UciHar) &&
      cfg.data_dir.empty())
    throw ConfigError("config key 'data_dir': required for dataset " +
                      std::string(dataset_name(cfg.dataset)));
  if (cfg.dataset == DatasetKind::Synthetic &&
      (cfg.synthetic_classes == 0 || cfg.synthetic_features == 0 ||
       cfg.synthetic_train == 0 || cfg.synthetic_test == 0))
    throw ConfigError("config keys 'synthetic_*': extents must be positive");
}

/// Fill derived defaults: participant count and the frequency floor.
inline void resolve_config(ExperimentConfig& cfg) {
  if (cfg.participants_per_round == 0)
    cfg.participants_per_round = std::min<std::size_t>(10, cfg.clients);
  if (cfg.ipwd.frequency_floor <= 0.0)
    cfg.ipwd.frequency_floor = 1.0 / (2.0 * static_cast<double>(cfg.rounds));
  if (cfg.distill_rate == 0.0) cfg.distill_rate = cfg.learning_rate;
  validate_config(cfg);
}

/// Parse a flat key = value document into a validated, resolved config.
inline ExperimentConfig parse_config(const std::string& text) {
  const detail::KeyValue kv = detail::parse_key_values(text);
  ExperimentConfig cfg;
  std::vector<std::string> known;
  const auto take = [&](const std::string& key) -> const std::string* {
    known.push_back(key);
    return kv.find(key);
  };

  if (const std::string* v = take("dataset")) {
    if (*v == "synthetic") cfg.dataset = DatasetKind::Synthetic;
    else if (*v == "fashion_idx") cfg.dataset = DatasetKind::FashionIdx;
    else if (*v == "ucihar") cfg.dataset = DatasetKind::UciHar;
    else throw ConfigError("config key 'dataset': unknown value '" + *v +
                           "' (expected synthetic | fashion_idx | ucihar)");
  } else {
    throw ConfigError("config key 'dataset' is required");
  }
  if (const std::string* v = take("data_dir")) cfg.data_dir = *v;
  if (const std::string* v = take("clients"))
    cfg.clients = detail::to_uint("clients", *v);
  else
    throw ConfigError("config key 'clients' is required");
  if (const std::string* v = take("seed"))
    cfg.seed = detail::to_uint("seed", *v);
  else
    throw ConfigError("config key 'seed' is required");

  if (const std::string* v = take("participants_per_round"))
    cfg.participants_per_round = detail::to_uint("participants_per_round", *v);
  if (const std::string* v = take("rounds")) cfg.rounds = detail::to_uint("rounds", *v);
  if (const std::string* v = take("dirichlet_alpha"))
    cfg.dirichlet_alpha = detail::to_double("dirichlet_alpha", *v);
  if (const std::string* v = take("heterogeneity")) {
    if (*v == "width_scaled") cfg.heterogeneity = Heterogeneity::WidthScaled;
    else if (*v == "families") cfg.heterogeneity = Heterogeneity::Families;
    else throw ConfigError("config key 'heterogeneity': unknown value '" + *v +
                           "' (expected width_scaled | families)");
  }
  if (const std::string* v = take("variant")) {
    if (*v == "full") cfg.variant = Variant::Full;
    else if (*v == "no_ipwd") cfg.variant = Variant::NoIpwd;
    else if (*v == "no_bcl") cfg.variant = Variant::NoBcl;
    else if (*v == "baseline") cfg.variant = Variant::Baseline;
    else throw ConfigError("config key 'variant': unknown value '" + *v +
                           "' (expected full | no_ipwd | no_bcl | baseline)");
  }
  if (const std::string* v = take("output_dir")) cfg.output_dir = *v;
  if (const std::string* v = take("learning_rate"))
    cfg.learning_rate = detail::to_double("learning_rate", *v);
  if (const std::string* v = take("generator_rate"))
    cfg.generator_rate = detail::to_double("generator_rate", *v);
  if (const std::string* v = take("distill_rate"))
    cfg.distill_rate = detail::to_double("distill_rate", *v);
  if (const std::string* v = take("local_epochs"))
    cfg.local_epochs = detail::to_uint("local_epochs", *v);
  if (const std::string* v = take("local_batch"))
    cfg.local_batch = detail::to_uint("local_batch", *v);
  if (const std::string* v = take("pseudo_batch"))
    cfg.pseudo_batch = detail::to_uint("pseudo_batch", *v);
  if (const std::string* v = take("kd_weight"))
    cfg.kd_weight = detail::to_double("kd_weight", *v);
  if (const std::string* v = take("workers")) cfg.workers = detail::to_uint("workers", *v);
  if (const std::string* v = take("eval_every"))
    cfg.eval_every = detail::to_uint("eval_every", *v);
  if (const std::string* v = take("save_models"))
    cfg.save_models = detail::to_bool("save_models", *v);
  if (const std::string* v = take("ipwd_alpha"))
    cfg.ipwd.alpha = detail::to_double("ipwd_alpha", *v);
  if (const std::string* v = take("ipwd_beta"))
    cfg.ipwd.beta = detail::to_double("ipwd_beta", *v);
  if (const std::string* v = take("sample_slope"))
    cfg.ipwd.sample_slope = detail::to_double("sample_slope", *v);
  if (const std::string* v = take("sample_threshold"))
    cfg.ipwd.sample_threshold = detail::to_double("sample_threshold", *v);
  if (const std::string* v = take("frequency_floor"))
    cfg.ipwd.frequency_floor = detail::to_double("frequency_floor", *v);
  if (const std::string* v = take("temperature"))
    cfg.contrastive.temperature = detail::to_double("temperature", *v);
  if (const std::string* v = take("decode_weight"))
    cfg.contrastive.decode_weight = detail::to_double("decode_weight", *v);
  if (const std::string* v = take("layer_weights"))
    cfg.contrastive.layer_weights = detail::to_double_list("layer_weights", *v);
  if (const std::string* v = take("contrastive_coefficient"))
    cfg.contrastive.coefficient = detail::to_double("contrastive_coefficient", *v);
  if (const std::string* v = take("negative_count"))
    cfg.contrastive.negative_count = detail::to_uint("negative_count", *v);
  if (const std::string* v = take("feature_extent"))
    cfg.feature_extent = detail::to_uint("feature_extent", *v);
  if (const std::string* v = take("generator_steps"))
    cfg.generator_steps = detail::to_uint("generator_steps", *v);
  if (const std::string* v = take("distill_steps"))
    cfg.distill_steps = detail::to_uint("distill_steps", *v);
  if (const std::string* v = take("synthetic_classes"))
    cfg.synthetic_classes = detail::to_uint("synthetic_classes", *v);
  if (const std::string* v = take("synthetic_features"))
    cfg.synthetic_features = detail::to_uint("synthetic_features", *v);
  if (const std::string* v = take("synthetic_train"))
    cfg.synthetic_train = detail::to_uint("synthetic_train", *v);
  if (const std::string* v = take("synthetic_test"))
    cfg.synthetic_test = detail::to_uint("synthetic_test", *v);
  if (const std::string* v = take("synthetic_separation"))
    cfg.synthetic_separation = detail::to_double("synthetic_separation", *v);

  for (const auto& [key, value] : kv.entries) {
    (void)value;
    bool ok = false;
    for (const std::string& k : known)
      if (k == key) { ok = true; break; }
    if (!ok) throw ConfigError("unknown config key '" + key + "'");
  }

  resolve_config(cfg);
  return cfg;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Serialize a resolved config; the output parses back to an equal config
/// and doubles as the run manifest.
inline std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "clients = " << cfg.clients << "\n";
  out << "contrastive_coefficient = " << format_double(cfg.contrastive.coefficient) << "\n";
  out << "data_dir = " << cfg.data_dir << "\n";
  out << "dataset = " << dataset_name(cfg.dataset) << "\n";
  out << "decode_weight = " << format_double(cfg.contrastive.decode_weight) << "\n";
  out << "dirichlet_alpha = " << format_double(cfg.dirichlet_alpha) << "\n";
  out << "distill_rate = " << format_double(cfg.distill_rate) << "\n";
  out << "distill_steps = " << cfg.distill_steps << "\n";
  out << "eval_every = " << cfg.eval_every << "\n";
  out << "feature_extent = " << cfg.feature_extent << "\n";
  out << "frequency_floor = " << format_double(cfg.ipwd.frequency_floor) << "\n";
  out << "generator_rate = " << format_double(cfg.generator_rate) << "\n";
  out << "generator_steps = " << cfg.generator_steps << "\n";
  out << "heterogeneity = " << heterogeneity_name(cfg.heterogeneity) << "\n";
  out << "ipwd_alpha = " << format_double(cfg.ipwd.alpha) << "\n";
  out << "ipwd_beta = " << format_double(cfg.ipwd.beta) << "\n";
  out << "kd_weight = " << format_double(cfg.kd_weight) << "\n";
  out << "layer_weights = ";
  for (std::size_t i = 0; i < cfg.contrastive.layer_weights.size(); ++i) {
    if (i) out << ";";
    out << format_double(cfg.contrastive.layer_weights[i]);
  }
  out << "\n";
  out << "learning_rate = " << format_double(cfg.learning_rate) << "\n";
  out << "local_batch = " << cfg.local_batch << "\n";
  out << "local_epochs = " << cfg.local_epochs << "\n";
  out << "negative_count = " << cfg.contrastive.negative_count << "\n";
  out << "output_dir = " << cfg.output_dir << "\n";
  out << "participants_per_round = " << cfg.participants_per_round << "\n";
  out << "pseudo_batch = " << cfg.pseudo_batch << "\n";
  out << "rounds = " << cfg.rounds << "\n";
  out << "sample_slope = " << format_double(cfg.ipwd.sample_slope) << "\n";
  out << "sample_threshold = " << format_double(cfg.ipwd.sample_threshold) << "\n";
  out << "save_models = " << (cfg.save_models ? "true" : "false") << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "synthetic_classes = " << cfg.synthetic_classes << "\n";
  out << "synthetic_features = " << cfg.synthetic_features << "\n";
  out << "synthetic_separation = " << format_double(cfg.synthetic_separation) << "\n";
  out << "synthetic_test = " << cfg.synthetic_test << "\n";
  out << "synthetic_train = " << cfg.synthetic_train << "\n";
  out << "temperature = " << format_double(cfg.contrastive.temperature) << "\n";
  out << "variant = " << variant_name(cfg.variant) << "\n";
  out << "workers = " << cfg.workers << "\n";
  return out.str();
}

/// Desk-scale presets: S@N runs N synthetic clients with 10 participants.
inline ExperimentConfig preset(const std::string& name) {
  static const std::vector<std::pair<std::string, std::size_t>> kPresets = {
      {"S@10", 10}, {"S@20", 20}, {"S@50", 50},
      {"S@100", 100}, {"S@200", 200}, {"S@500", 500}};
  for (const auto& [pname, n] : kPresets) {
    if (name == pname) {
      ExperimentConfig cfg;
      cfg.dataset = DatasetKind::Synthetic;
      cfg.clients = n;
      cfg.participants_per_round = 10;
      cfg.rounds = 100;  // desk scale; override rounds=1000 for the full schedule
      cfg.seed = 1;
      cfg.output_dir = "out_s" + std::to_string(n);
      resolve_config(cfg);
      return cfg;
    }
  }
  std::string names;
  for (const auto& [pname, n] : kPresets) {
    (void)n;
    if (!names.empty()) names += ", ";
    names += pname;
  }
  throw ConfigError("unknown preset '" + name + "' (available: " + names + ", jr-sweep)");
}

/// The participation-rate sweep: four UCI-HAR configs with jr in
/// {1, 2/3, 1/3, 1/9} over 18 clients.
inline std::vector<ExperimentConfig> jr_sweep(const std::string& data_dir) {
  const std::vector<std::pair<std::string, std::size_t>> rates = {
      {"jr_1", 18}, {"jr_2_3", 12}, {"jr_1_3", 6}, {"jr_1_9", 2}};
  std::vector<ExperimentConfig> out;
  for (const auto& [tag, participants] : rates) {
    ExperimentConfig cfg;
    cfg.dataset = DatasetKind::UciHar;
    cfg.data_dir = data_dir;
    cfg.clients = 18;
    cfg.participants_per_round = participants;
    cfg.rounds = 100;
    cfg.heterogeneity = Heterogeneity::WidthScaled;
    cfg.seed = 1;
    cfg.eval_every = 10;
    cfg.output_dir = "out_" + tag;
    resolve_config(cfg);
    out.push_back(cfg);
  }
  return out;
}

}  // namespace hfedckd
