// Copyright 2026 The leopard-sim Authors
// SPDX-License-Identifier: Apache-2.0

// leopard: synthetic traces, toy threshold training, tile simulation and
// design-space sweeps.
//
// Exit codes: 0 success, 1 internal error, 2 user or configuration error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "leopard/learner.hpp"
#include "leopard/report.hpp"
#include "leopard/simulator.hpp"
#include "leopard/synthetic.hpp"
#include "leopard/trace.hpp"

namespace fs = std::filesystem;
using leopard::ojson;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr int kExitInternal = 1;
constexpr int kExitUser = 2;

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw leopard::ParameterError("cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw leopard::ParameterError("cannot open " + path.string() + " for writing");
  f << text;
}

nlohmann::json parse_json_file(const std::string& path) {
  try {
    return nlohmann::json::parse(slurp(path));
  } catch (const nlohmann::json::exception& e) {
    throw leopard::ConfigError(path + ": " + e.what());
  }
}

unsigned worker_threads() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("LEOPARD_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v < 1) throw std::invalid_argument("non-positive");
      n = std::min<unsigned>(n, static_cast<unsigned>(v));
    } catch (const std::exception&) {
      throw leopard::ConfigError(std::string("LEOPARD_THREADS must be a positive integer, got '") + env + "'");
    }
  }
  return n;
}

ojson provenance(const std::string& cmd, const ojson& config, std::uint64_t seed, const std::string& energy_source) {
  return {{"tool", "leopard"},
          {"version", kVersion},
          {"subcommand", cmd},
          {"seed", seed},
          {"config_hash", leopard::hex64(leopard::fnv1a64(config.dump()))},
          {"energy_table", energy_source}};
}

// Tile and energy settings shared by simulate and sweep: preset, then config
// file, then individual flags.
struct HwOptions {
  std::string preset = "ae";
  std::string config_path;
  std::string energy_path;
  std::optional<int> n_qk;
  std::optional<int> B;
  std::optional<std::size_t> fifo_depth;

  void add_to(CLI::App* app) {
    app->add_option("--preset", preset, "Tile preset")->check(CLI::IsMember({"ae", "hp"}));
    app->add_option("--config", config_path, "JSON config with optional \"preset\", \"tile\" and \"energy\"");
    app->add_option("--energy-table", energy_path, "JSON energy table overriding the default");
    app->add_option("--n-qk", n_qk, "QK-DPU count");
    app->add_option("--B", B, "Bits per serial cycle");
    app->add_option("--fifo-depth", fifo_depth, "Score and IDX FIFO depth");
  }

  std::pair<leopard::TileConfig, leopard::EnergyTable> resolve(std::string& energy_source) const {
    std::string p = preset;
    nlohmann::json cfg = nlohmann::json::object();
    if (!config_path.empty()) {
      cfg = parse_json_file(config_path);
      if (!cfg.is_object()) throw leopard::ConfigError(config_path + ": expected a JSON object");
      for (const auto& [k, v] : cfg.items()) {
        if (k != "preset" && k != "tile" && k != "energy") {
          throw leopard::ConfigError(config_path + ": unknown key '" + k + "'");
        }
      }
      if (cfg.contains("preset")) p = cfg["preset"].get<std::string>();
    }
    leopard::TileConfig tile;
    if (p == "ae") {
      tile = leopard::TileConfig::ae();
    } else if (p == "hp") {
      tile = leopard::TileConfig::hp();
    } else {
      throw leopard::ConfigError("unknown preset '" + p + "'");
    }
    if (cfg.contains("tile")) tile = leopard::tile_config_from_json(cfg["tile"], tile);
    leopard::EnergyTable energy;
    energy_source = "default";
    if (cfg.contains("energy")) {
      energy = leopard::energy_table_from_json(cfg["energy"], energy);
      energy_source = config_path;
    }
    if (!energy_path.empty()) {
      energy = leopard::energy_table_from_json(parse_json_file(energy_path), energy);
      energy_source = energy_path;
    }
    if (n_qk) tile.n_qk = *n_qk;
    if (B) tile.B = *B;
    if (fifo_depth) tile.score_fifo_depth = tile.idx_fifo_depth = *fifo_depth;
    tile.validate();
    energy.validate();
    return {tile, energy};
  }
};

leopard::WorkloadTrace load_trace(const std::string& path, const std::string& thresholds_path) {
  if (path.empty()) throw leopard::ParameterError("--trace is required");
  if (!fs::exists(path)) throw leopard::ParameterError("trace not found: " + path);
  auto t = leopard::read_trace(path);
  if (!thresholds_path.empty()) leopard::apply_thresholds(t, leopard::decode_thresholds(slurp(thresholds_path)));
  return t;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Runtime attention pruning: learner, bit-serial engine and tile simulator"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  // gen-synthetic
  leopard::SyntheticSpec gen;
  std::string gen_out;
  std::string gen_dist = "clustered";
  std::optional<double> gen_avg_bits;
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "Write a synthetic trace with a target pruning rate");
  gen_cmd->add_option("--seed", gen.seed, "Random seed");
  gen_cmd->add_option("--seq-len,-s", gen.seq_len, "Sequence length");
  gen_cmd->add_option("--valid-length", gen.valid_length, "Non-padded length (default: seq-len)");
  gen_cmd->add_option("--d", gen.d, "Head dimension");
  gen_cmd->add_option("--heads", gen.heads, "Heads per layer");
  gen_cmd->add_option("--layers", gen.layers, "Layers");
  gen_cmd->add_option("--rate", gen.target_pruning_rate, "Target pruning rate in [0, 1]");
  gen_cmd->add_option("--distribution", gen_dist, "gaussian or clustered");
  gen_cmd->add_option("--separation", gen.separation, "Clustered: push of irrelevant keys");
  gen_cmd->add_option("--avg-bits", gen_avg_bits, "Clustered: target average bits on pruned scores");
  gen_cmd->add_option("--B", gen.B, "Granularity used for --avg-bits");
  gen_cmd->add_option("--out,-o", gen_out, "Output trace path")->required();

  // train
  leopard::ToyRecipe recipe;
  std::optional<double> train_lambda;
  std::optional<int> train_epochs;
  std::optional<std::uint64_t> train_seed;
  std::string train_out = "train_out";
  auto* train_cmd = app.add_subcommand("train", "Fine-tune thresholds on the toy attention task");
  train_cmd->add_option("--seed", train_seed, "Seed for data and shuffling (default: the tuned recipe)");
  train_cmd->add_option("--lambda", train_lambda, "Regularizer weight (default: grid search)");
  train_cmd->add_option("--epochs", train_epochs, "Fine-tuning epochs");
  train_cmd->add_option("--pretrain-epochs", recipe.pretrain_epochs, "Dense pretraining epochs");
  train_cmd->add_option("--layers", recipe.layers, "Attention layers");
  train_cmd->add_option("--out-dir", train_out, "Directory for train_stats.json and thresholds.json");

  // simulate
  HwOptions sim_hw;
  std::string sim_trace, sim_thresholds, sim_out = "sim_out";
  auto* sim_cmd = app.add_subcommand("simulate", "Simulate the tile and the baseline on a trace");
  sim_cmd->add_option("--trace", sim_trace, "Input trace");
  sim_cmd->add_option("--thresholds", sim_thresholds, "Threshold file overriding the trace thresholds");
  sim_cmd->add_option("--out-dir", sim_out, "Directory for report.json");
  sim_hw.add_to(sim_cmd);

  // sweep
  HwOptions sw_hw;
  std::string sw_kind, sw_trace, sw_thresholds, sw_out, sw_range = "3..12";
  std::vector<int> sw_bits{1, 2, 4, 12};
  auto* sw_cmd = app.add_subcommand("sweep", "Sweep n_qk or the serial granularity B");
  sw_cmd->add_option("--kind", sw_kind, "nqk or bits")->required()->check(CLI::IsMember({"nqk", "bits"}));
  sw_cmd->add_option("--trace", sw_trace, "Input trace");
  sw_cmd->add_option("--thresholds", sw_thresholds, "Threshold file overriding the trace thresholds");
  sw_cmd->add_option("--range", sw_range, "n_qk range lo..hi");
  sw_cmd->add_option("--bits", sw_bits, "B values")->delimiter(',');
  sw_cmd->add_option("--out,-o", sw_out, "Output CSV (default: stdout)");
  sw_hw.add_to(sw_cmd);

  // validate-trace
  std::string val_trace;
  auto* val_cmd = app.add_subcommand("validate-trace", "Check a trace file against the format");
  val_cmd->add_option("trace", val_trace, "Trace path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUser;
  }

  try {
    if (*gen_cmd) {
      gen.distribution = leopard::parse_distribution(gen_dist);
      gen.target_avg_pruned_bits = gen_avg_bits;
      const auto t = leopard::generate_synthetic(gen);
      leopard::write_trace(gen_out, t);
      std::cout << "wrote " << gen_out << ": " << t.layers.size() << " layer(s), " << t.head_count()
                << " head(s), ideal pruning rate " << leopard::ideal_pruning_rate(t) << "\n";
      return 0;
    }

    if (*train_cmd) {
      if (train_seed) {
        recipe.task.seed = *train_seed;
        recipe.fine_tune.seed = *train_seed;
      }
      if (train_epochs) recipe.fine_tune.epochs = *train_epochs;
      if (recipe.pretrain_epochs < 0 || recipe.fine_tune.epochs < 0) {
        throw leopard::ParameterError("epochs must be non-negative");
      }
      const auto data = leopard::make_toy_dataset(recipe.task);
      const auto model = leopard::pretrained_toy_model(recipe, data);
      leopard::HyperParams hp;
      ojson out;
      ojson cfg = {{"seed", recipe.task.seed},
                   {"epochs", recipe.fine_tune.epochs},
                   {"pretrain_epochs", recipe.pretrain_epochs},
                   {"layers", recipe.layers},
                   {"lambda", train_lambda ? ojson(*train_lambda) : ojson("grid")}};
      out["provenance"] = provenance("train", cfg, recipe.task.seed, "n/a");
      out["config"] = cfg;
      leopard::TrainStats stats;
      if (train_lambda) {
        hp.lambda = *train_lambda;
        hp.validate();
        auto m = model;
        stats = leopard::fine_tune(m, data, hp, recipe.fine_tune);
        out["lambda"] = hp.lambda;
      } else {
        const auto search = leopard::lambda_grid_search(recipe, model, data, hp);
        ojson grid = ojson::array();
        for (const auto& r : search.runs) {
          grid.push_back({{"lambda", r.lambda},
                          {"final_sparsity", r.stats.epochs.back().sparsity},
                          {"final_task_loss", r.stats.epochs.back().task_loss},
                          {"admissible", r.admissible}});
        }
        out["grid"] = grid;
        out["baseline_final_task_loss"] = search.baseline.epochs.back().task_loss;
        if (search.chosen) {
          stats = search.runs[*search.chosen].stats;
          out["lambda"] = search.runs[*search.chosen].lambda;
        } else {
          stats = search.baseline;
          out["lambda"] = 0.0;
        }
      }
      out["epochs"] = leopard::to_json(stats);
      const fs::path dir(train_out);
      write_file(dir / "train_stats.json", out.dump(2) + "\n");
      write_file(dir / "thresholds.json", leopard::encode_thresholds(stats.epochs.back().thresholds));
      const auto& last = stats.epochs.back();
      std::cout << "lambda " << out["lambda"].get<double>() << ": sparsity " << stats.epochs.front().sparsity << " -> "
                << last.sparsity << ", task loss " << last.task_loss << "\n";
      return 0;
    }

    if (*sim_cmd) {
      std::string energy_source;
      const auto [tile, energy] = sim_hw.resolve(energy_source);
      const auto t = load_trace(sim_trace, sim_thresholds);
      const auto rep = leopard::simulate_tile(t, tile, energy);
      const auto base = leopard::simulate_baseline(t, tile, energy);
      ojson cfg = {{"tile", leopard::to_json(tile)}, {"energy", leopard::to_json(energy)}};
      ojson out;
      out["provenance"] = provenance("simulate", cfg, 0, energy_source);
      out["trace"] = {{"model", t.model}, {"task", t.task}, {"layers", t.layers.size()}, {"heads", t.head_count()}};
      out["config"] = cfg;
      out["tile"] = leopard::to_json(rep);
      out["baseline"] = leopard::to_json(base);
      out["cumulative_pruning_curve"] = leopard::to_json(leopard::cumulative_pruning_curve(t, tile));
      write_file(fs::path(sim_out) / "report.json", out.dump(2) + "\n");
      std::cout << "cycles " << rep.total_cycles << " (baseline " << rep.baseline_cycles << "), speedup "
                << rep.speedup << ", pruning rate " << rep.pruning_rate << ", energy reduction "
                << rep.baseline_energy.total() / rep.energy.total() << "\n";
      return 0;
    }

    if (*sw_cmd) {
      std::string energy_source;
      const auto [tile, energy] = sw_hw.resolve(energy_source);
      const auto t = load_trace(sw_trace, sw_thresholds);
      const unsigned threads = worker_threads();
      std::string csv;
      if (sw_kind == "nqk") {
        const auto dots = sw_range.find("..");
        int lo = 0, hi = 0;
        try {
          if (dots == std::string::npos) throw std::invalid_argument("no ..");
          lo = std::stoi(sw_range.substr(0, dots));
          hi = std::stoi(sw_range.substr(dots + 2));
        } catch (const std::exception&) {
          throw leopard::ParameterError("--range must look like lo..hi, got '" + sw_range + "'");
        }
        csv = leopard::nqk_csv(leopard::sweep_nqk(t, tile, lo, hi, energy, threads));
      } else {
        csv = leopard::bits_csv(leopard::sweep_bit_granularity(t, tile, sw_bits, energy, threads));
      }
      if (sw_out.empty()) {
        std::cout << csv;
      } else {
        write_file(sw_out, csv);
      }
      return 0;
    }

    if (*val_cmd) {
      const auto t = leopard::read_trace(val_trace);
      std::cout << val_trace << ": ok (" << t.layers.size() << " layer(s), " << t.head_count() << " head(s))\n";
      return 0;
    }
  } catch (const leopard::ValidationError& e) {
    std::cerr << "error: invalid " << e.what() << "\n";
    return kExitUser;
  } catch (const leopard::TrainingError& e) {
    std::cerr << "error: training diverged: " << e.what() << "\n";
    return kExitInternal;
  } catch (const leopard::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUser;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed configuration: " << e.what() << "\n";
    return kExitUser;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return 0;
}
