// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver: run experiments from config files or presets, sweep
// participation rates, and dump feature vectors for external projection.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "hfedckd/hfedckd.hpp"

namespace fs = std::filesystem;
using namespace hfedckd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitIo = 4;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Apply --set key=value overrides on top of a config document.
ExperimentConfig config_with_overrides(const std::string& base_text,
                                       const std::vector<std::string>& overrides) {
  detail::KeyValue kv = detail::parse_key_values(base_text);
  for (const std::string& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + item + "'");
    const std::string key = detail::trim(item.substr(0, eq));
    const std::string value = detail::trim(item.substr(eq + 1));
    kv.entries[key] = value;
  }
  std::ostringstream merged;
  for (const auto& [key, value] : kv.entries) merged << key << " = " << value << "\n";
  return parse_config(merged.str());
}

int run_config(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  const std::string metrics_path = (fs::path(cfg.output_dir) / "metrics.csv").string();
  write_manifest(cfg, metrics_path + ".manifest");

  std::cout << "run: " << dataset_name(cfg.dataset) << ", " << cfg.clients << " clients, "
            << cfg.participants_per_round << "/round, " << cfg.rounds << " rounds, variant "
            << variant_name(cfg.variant) << ", seed " << cfg.seed << "\n";

  const auto t0 = std::chrono::steady_clock::now();
  FedContext ctx = init_experiment(cfg);
  std::vector<RoundRecord> records;
  records.reserve(cfg.rounds);
  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    records.push_back(run_round(ctx));
    const RoundRecord& rec = records.back();
    if (r % 10 == 0 || r == cfg.rounds)
      std::cout << "  round " << rec.round << ": client acc "
                << format_metric(rec.mean_client_accuracy) << " +- "
                << format_metric(rec.std_client_accuracy) << ", global acc "
                << format_metric(rec.global_accuracy) << ", distill "
                << format_metric(rec.distill_loss) << ", gap "
                << format_metric(rec.objective_gap) << "\n";
  }
  write_metrics(records, metrics_path);

  if (cfg.save_models) {
    const fs::path model_dir = fs::path(cfg.output_dir) / "models";
    fs::create_directories(model_dir);
    save_model(ctx.server.global_model, cfg.seed, (model_dir / "global.bin").string());
    for (const ClientState& c : ctx.clients)
      save_model(c.model, cfg.seed,
                 (model_dir / ("client_" + std::to_string(c.id) + ".bin")).string());
  }

  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "done in " << format_metric(elapsed) << " s; metrics at " << metrics_path
            << "\n";
  return kExitOk;
}

DatasetKind dataset_from_name(const std::string& name) {
  if (name == "synthetic") return DatasetKind::Synthetic;
  if (name == "fashion_idx") return DatasetKind::FashionIdx;
  if (name == "ucihar") return DatasetKind::UciHar;
  throw ConfigError("unknown dataset '" + name +
                    "' (expected synthetic | fashion_idx | ucihar)");
}

Dataset load_dump_dataset(const std::string& kind, const std::string& data_dir,
                          const std::string& split) {
  switch (dataset_from_name(kind)) {
    case DatasetKind::Synthetic:
      return synthetic_mixture(3, 8, 1000, 1, 4.0, split);
    case DatasetKind::FashionIdx:
      if (split == "train")
        return load_idx(data_dir + "/train-images-idx3-ubyte",
                        data_dir + "/train-labels-idx1-ubyte", split);
      return load_idx(data_dir + "/t10k-images-idx3-ubyte",
                      data_dir + "/t10k-labels-idx1-ubyte", split);
    case DatasetKind::UciHar: {
      auto [train, test] = load_ucihar(data_dir);
      return split == "train" ? std::move(train) : std::move(test);
    }
  }
  throw ConfigError("unreachable dataset kind");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated distillation laboratory"};
  app.require_subcommand(1);

  std::vector<std::string> overrides;

  auto* run_cmd = app.add_subcommand("run", "run an experiment from a config file");
  std::string config_path;
  run_cmd->add_option("config", config_path, "path to a key = value config file")
      ->required();
  run_cmd->add_option("--set", overrides, "override any config key (key=value)");

  auto* preset_cmd = app.add_subcommand("preset", "run a named preset (S@10 .. S@500)");
  std::string preset_name;
  preset_cmd->add_option("name", preset_name, "preset name, e.g. S@50")->required();
  preset_cmd->add_option("--set", overrides, "override any config key (key=value)");

  auto* sweep_cmd =
      app.add_subcommand("sweep", "participation-rate sweep (jr = 1, 2/3, 1/3, 1/9)");
  std::string sweep_dir;
  sweep_cmd->add_option("--data-dir", sweep_dir, "UCI-HAR directory")->required();
  sweep_cmd->add_option("--set", overrides, "override any config key (key=value)");

  auto* dump_cmd = app.add_subcommand("dump-features", "write feature vectors to csv");
  std::string model_path, dump_dataset = "synthetic", dump_dir, dump_out = "features.csv",
              dump_tag = "model", dump_split = "test";
  std::size_t dump_count = 200;
  std::uint64_t dump_seed = 1;
  dump_cmd->add_option("--model", model_path, "model checkpoint path")->required();
  dump_cmd->add_option("--dataset", dump_dataset, "synthetic | fashion_idx | ucihar");
  dump_cmd->add_option("--data-dir", dump_dir, "dataset directory (file datasets)");
  dump_cmd->add_option("--split", dump_split, "train | test");
  dump_cmd->add_option("--count", dump_count, "samples to dump");
  dump_cmd->add_option("--out", dump_out, "output csv path");
  dump_cmd->add_option("--tag", dump_tag, "tag column value");
  dump_cmd->add_option("--seed", dump_seed, "subsample seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed())
      return run_config(config_with_overrides(read_file(config_path), overrides));
    if (preset_cmd->parsed())
      return run_config(config_with_overrides(serialize_config(preset(preset_name)),
                                              overrides));
    if (sweep_cmd->parsed()) {
      for (const ExperimentConfig& cfg : jr_sweep(sweep_dir)) {
        ExperimentConfig merged =
            config_with_overrides(serialize_config(cfg), overrides);
        const int rc = run_config(merged);
        if (rc != kExitOk) return rc;
      }
      return kExitOk;
    }
    if (dump_cmd->parsed()) {
      const SplitModel model = load_model(model_path);
      const Dataset data = load_dump_dataset(dump_dataset, dump_dir, dump_split);
      dump_features(model, data, std::min(dump_count, data.sample_count()), dump_out,
                    dump_seed, dump_tag);
      std::cout << "wrote " << dump_out << "\n";
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}
