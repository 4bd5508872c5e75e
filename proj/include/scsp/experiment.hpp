#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "scsp/checkpoint.hpp"
#include "scsp/data.hpp"
#include "scsp/errors.hpp"
#include "scsp/metrics.hpp"
#include "scsp/nn.hpp"
#include "scsp/pruning.hpp"
#include "scsp/report.hpp"
#include "scsp/train.hpp"

namespace scsp {

enum class Mode { baseline, scsp };

struct DataPaths {
  std::filesystem::path dir = "data/mnist";
  std::filesystem::path train_images, train_labels, test_images, test_labels;  // empty: derived from dir
  std::size_t train_limit = 10000;  // 0 = all
  std::size_t test_limit = 0;
  bool full_mnist = false;
};

// Spectral settings as written in the config, keyed by layer name.
struct SpectralOptions {
  SpectralConfig defaults;
  std::map<std::string, SpectralConfig> layers;
};

struct PruneOptions {
  double rate = 0.2;
  std::map<std::string, double> layer_rates;
  std::size_t gap = 1;
  double p_norm = 2.0;
  std::vector<std::string> skip_layers{"fc2"};
  std::size_t recovery_tail_epochs = 2;
};

struct ExperimentConfig {
  Mode mode = Mode::scsp;
  DataPaths data;
  TrainConfig train;
  PruneOptions prune;
  SpectralOptions spectral;
  std::filesystem::path out_dir = "out";
  std::filesystem::path checkpoint;  // empty: <out_dir>/checkpoint.bin
  bool checkpoint_every_epoch = false;
  std::filesystem::path resume_from;

  std::filesystem::path checkpoint_path() const { return checkpoint.empty() ? out_dir / "checkpoint.bin" : checkpoint; }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ParameterError("config: " + where + " must be an object");
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (const char* n : known) ok = ok || k == n;
    if (!ok) throw ParameterError("config: unknown key '" + k + "' in " + where);
  }
}

inline SpectralConfig parse_spectral(const nlohmann::json& j, SpectralConfig c, const std::string& where) {
  reject_unknown(j, {"bandwidth", "n_clusters", "reduce_dimension", "embed_dim", "normalize_rows", "layers"}, where);
  c.bandwidth = j.value("bandwidth", c.bandwidth);
  c.n_clusters = j.value("n_clusters", c.n_clusters);
  c.reduce_dimension = j.value("reduce_dimension", c.reduce_dimension);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.normalize_rows = j.value("normalize_rows", c.normalize_rows);
  if (!(c.bandwidth > 0.0)) throw ParameterError("config: " + where + ".bandwidth must be positive");
  if (c.n_clusters == 1) throw ParameterError("config: " + where + ".n_clusters must be 0 (auto) or at least 2");
  return c;
}

}  // namespace detail

/// Builds a config from a JSON document; absent fields keep their defaults.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
  detail::reject_unknown(j, {"mode", "data", "train", "prune", "spectral", "out_dir", "checkpoint",
                             "checkpoint_every_epoch", "resume_from"}, "config");
  ExperimentConfig c;
  const std::string mode = j.value("mode", std::string("scsp"));
  if (mode == "scsp") c.mode = Mode::scsp;
  else if (mode == "baseline") c.mode = Mode::baseline;
  else throw ParameterError("config: mode must be 'baseline' or 'scsp', got '" + mode + "'");

  if (j.contains("data")) {
    const auto& d = j["data"];
    detail::reject_unknown(d, {"dir", "train_images", "train_labels", "test_images", "test_labels", "train_limit",
                               "test_limit", "full_mnist"}, "data");
    c.data.dir = d.value("dir", c.data.dir.string());
    c.data.train_images = d.value("train_images", std::string());
    c.data.train_labels = d.value("train_labels", std::string());
    c.data.test_images = d.value("test_images", std::string());
    c.data.test_labels = d.value("test_labels", std::string());
    c.data.train_limit = d.value("train_limit", c.data.train_limit);
    c.data.test_limit = d.value("test_limit", c.data.test_limit);
    c.data.full_mnist = d.value("full_mnist", c.data.full_mnist);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    detail::reject_unknown(t, {"learning_rate", "epochs", "batch_size", "seed"}, "train");
    c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.seed = t.value("seed", c.train.seed);
  }
  if (j.contains("prune")) {
    const auto& p = j["prune"];
    detail::reject_unknown(p, {"rate", "layer_rates", "gap", "p_norm", "skip_layers", "recovery_tail_epochs"}, "prune");
    c.prune.rate = p.value("rate", c.prune.rate);
    if (p.contains("layer_rates")) c.prune.layer_rates = p["layer_rates"].get<std::map<std::string, double>>();
    c.prune.gap = p.value("gap", c.prune.gap);
    c.prune.p_norm = p.value("p_norm", c.prune.p_norm);
    if (p.contains("skip_layers")) c.prune.skip_layers = p["skip_layers"].get<std::vector<std::string>>();
    c.prune.recovery_tail_epochs = p.value("recovery_tail_epochs", c.prune.recovery_tail_epochs);
  }
  if (j.contains("spectral")) {
    const auto& s = j["spectral"];
    c.spectral.defaults = detail::parse_spectral(s, c.spectral.defaults, "spectral");
    if (s.contains("layers"))
      for (const auto& [name, lj] : s["layers"].items())
        c.spectral.layers[name] = detail::parse_spectral(lj, c.spectral.defaults, "spectral.layers." + name);
  }
  c.out_dir = j.value("out_dir", c.out_dir.string());
  c.checkpoint = j.value("checkpoint", std::string());
  c.checkpoint_every_epoch = j.value("checkpoint_every_epoch", c.checkpoint_every_epoch);
  c.resume_from = j.value("resume_from", std::string());

  if (!(c.train.learning_rate > 0.0)) throw ParameterError("config: train.learning_rate must be positive");
  if (c.train.epochs == 0 || c.train.batch_size == 0) throw ParameterError("config: epochs and batch_size must be positive");
  if (c.prune.gap == 0) throw ParameterError("config: prune.gap must be at least 1");
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path.string());
  try {
    return parse_config(nlohmann::json::parse(f));
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError("config " + path.string() + ": " + e.what());
  }
}

/// Resolves layer names against the network and builds the pruning settings.
inline PruneConfig resolve_prune_config(const ExperimentConfig& c, const NetworkState& s) {
  PruneConfig p;
  p.prune_rate = c.mode == Mode::baseline ? 0.0 : c.prune.rate;
  for (const auto& [name, r] : c.prune.layer_rates) p.layer_rates[s.layer_index(name)] = c.mode == Mode::baseline ? 0.0 : r;
  p.pruning_gap = c.prune.gap;
  p.p_norm = c.prune.p_norm;
  for (const auto& name : c.prune.skip_layers) p.skip_layers.insert(s.layer_index(name));
  p.recovery_tail_epochs = c.prune.recovery_tail_epochs;
  p.validate();
  return p;
}

inline SpectralSettings resolve_spectral(const ExperimentConfig& c, const NetworkState& s) {
  SpectralSettings out{.defaults = c.spectral.defaults, .per_layer = {}};
  for (const auto& [name, cfg] : c.spectral.layers) out.per_layer[s.layer_index(name)] = cfg;
  return out;
}

/// True when a pruning step fires at the end of `epoch` (1-based): every
/// gap-th epoch from `gap` up to epochs - recovery_tail_epochs.
inline bool is_pruning_epoch(std::uint64_t epoch, std::size_t epochs, const PruneConfig& p) {
  if (epoch % p.pruning_gap != 0) return false;
  if (epochs < p.recovery_tail_epochs) return false;
  return epoch <= epochs - p.recovery_tail_epochs;
}

struct PruneStepLog {
  std::uint64_t epoch = 0;
  std::vector<PruneLogRecord> records;
};

struct ExperimentResult {
  std::vector<EpochReport> rows;
  std::vector<PruneStepLog> prune_log;
  NetworkState final_state;
  std::vector<std::string> layer_names;
};

inline std::vector<std::string> param_layer_names(const NetworkState& s) {
  std::vector<std::string> names;
  for (std::size_t i : s.param_layers()) names.push_back(s.specs[i].name);
  return names;
}

inline EpochReport make_report_row(const NetworkState& s, std::uint64_t epoch, double loss, double acc,
                                   const std::vector<PruneLogRecord>& pruned) {
  const NetworkBudget b = effective_network_flops(s);
  EpochReport r;
  r.epoch = epoch;
  r.train_loss = loss;
  r.test_accuracy = acc;
  for (const auto& lb : b.layers) r.layer_sparsity.emplace_back(lb.name, lb.sparsity());
  r.sparsity_total = b.sparsity();
  r.effective_flops = b.effective_flops;
  r.theoretical_flops = b.theoretical_flops;
  r.pruned_flops_pct = b.pruned_flops_pct();
  r.pruned_flops_pct_layerwise = b.pruned_flops_pct_layerwise();
  for (const auto& rec : pruned)
    if (!rec.skipped && !rec.pruned_groups.empty()) r.pruned_groups.emplace_back(rec.layer_name, rec.pruned_groups);
  return r;
}

// Called after each epoch's row is produced.
using EpochCallback = std::function<void(const EpochReport&, const NetworkState&)>;

/// The train / soft-prune loop on in-memory data.
///
/// Each epoch trains every batch, then (in scsp mode, on pruning epochs)
/// runs one pruning step; the last epoch re-applies the latest selection as
/// a hard prune. The network is evaluated and one row is appended per
/// epoch. Starts from `initial` when given (resume), else from a fresh
/// network seeded with train.seed.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset& train, const Dataset& test,
                                       std::optional<NetworkState> initial = std::nullopt,
                                       const EpochCallback& on_epoch = {}) {
  ExperimentResult res;
  NetworkState s = initial ? std::move(*initial) : init_network(cfg.train.seed);
  const PruneConfig prune = resolve_prune_config(cfg, s);
  const SpectralSettings spectral = resolve_spectral(cfg, s);
  res.layer_names = param_layer_names(s);
  const bool pruning = cfg.mode == Mode::scsp;

  for (std::uint64_t epoch = s.epoch + 1; epoch <= cfg.train.epochs; ++epoch) {
    const double loss = train_epoch(s, train, cfg.train, epoch);
    refresh_masks(s);

    std::vector<PruneLogRecord> step;
    if (pruning && is_pruning_epoch(epoch, cfg.train.epochs, prune)) {
      step = scsp_step(s, spectral, prune, derive_seed(cfg.train.seed, 0x5c5b0000ULL + epoch)).log;
      res.prune_log.push_back({epoch, step});
    }
    if (pruning && epoch == cfg.train.epochs) final_hard_prune(s);

    s.epoch = epoch;
    const double acc = evaluate(s, test);
    res.rows.push_back(make_report_row(s, epoch, loss, acc, step));
    if (on_epoch) on_epoch(res.rows.back(), s);
  }
  res.final_state = std::move(s);
  return res;
}

inline std::filesystem::path resolve_data_file(const DataPaths& d, const std::filesystem::path& given,
                                               const char* standard_name) {
  if (!given.empty()) return given;
  const auto plain = d.dir / standard_name;
  if (std::filesystem::exists(plain)) return plain;
  auto gz = plain;
  gz += ".gz";
  if (std::filesystem::exists(gz)) return gz;
  return plain;
}

inline nlohmann::ordered_json prune_log_json(const std::vector<PruneStepLog>& log) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& step : log)
    for (const auto& r : step.records) {
      nlohmann::ordered_json j;
      j["epoch"] = step.epoch;
      j["layer_id"] = r.layer_id;
      j["layer"] = r.layer_name;
      j["skipped"] = r.skipped;
      if (r.skipped) j["reason"] = r.skip_reason;
      j["group_sizes"] = r.group_sizes;
      auto eff = nlohmann::ordered_json::array();
      for (double e : r.effects) eff.push_back(round6(e));
      j["effects"] = eff;
      j["pruned_groups"] = r.pruned_groups;
      j["pruned_filters"] = r.pruned_filters;
      arr.push_back(std::move(j));
    }
  return arr;
}

inline std::vector<PruneStepLog> prune_log_from_json(const nlohmann::ordered_json& arr) {
  std::vector<PruneStepLog> log;
  for (const auto& j : arr) {
    const auto epoch = j.at("epoch").get<std::uint64_t>();
    if (log.empty() || log.back().epoch != epoch) log.push_back({epoch, {}});
    PruneLogRecord r;
    r.layer_id = j.at("layer_id").get<std::size_t>();
    r.layer_name = j.at("layer").get<std::string>();
    r.skipped = j.at("skipped").get<bool>();
    r.skip_reason = j.value("reason", std::string());
    r.group_sizes = j.at("group_sizes").get<std::vector<std::size_t>>();
    r.effects = j.at("effects").get<std::vector<double>>();
    r.pruned_groups = j.at("pruned_groups").get<std::vector<std::size_t>>();
    r.pruned_filters = j.at("pruned_filters").get<std::vector<std::size_t>>();
    log.back().records.push_back(std::move(r));
  }
  return log;
}

// Rows and pruning steps up to `epoch` from the reports stored next to a
// checkpoint, so a resumed run reports every epoch. Missing files give
// empty history.
inline void load_history(const std::filesystem::path& checkpoint, std::uint64_t epoch, ExperimentResult& res) {
  const auto dir = checkpoint.parent_path();
  auto read_json = [](const std::filesystem::path& p) {
    std::ifstream f(p);
    return nlohmann::ordered_json::parse(f);
  };
  if (std::filesystem::exists(dir / "report.json"))
    for (auto& r : rows_from_json(read_json(dir / "report.json")))
      if (r.epoch <= epoch) res.rows.push_back(std::move(r));
  if (std::filesystem::exists(dir / "prune_log.json"))
    for (auto& step : prune_log_from_json(read_json(dir / "prune_log.json")))
      if (step.epoch <= epoch) res.prune_log.push_back(std::move(step));
}

/// Loads the IDX data, runs the loop and writes report.csv, report.json,
/// prune_log.json and the final checkpoint under out_dir. A resumed run
/// prepends the history found beside the resume checkpoint.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  const auto ti = resolve_data_file(cfg.data, cfg.data.train_images, "train-images-idx3-ubyte");
  const auto tl = resolve_data_file(cfg.data, cfg.data.train_labels, "train-labels-idx1-ubyte");
  const auto vi = resolve_data_file(cfg.data, cfg.data.test_images, "t10k-images-idx3-ubyte");
  const auto vl = resolve_data_file(cfg.data, cfg.data.test_labels, "t10k-labels-idx1-ubyte");
  for (const auto& p : {ti, tl, vi, vl})
    if (!std::filesystem::exists(p)) throw IoError("data file not found: " + p.string());

  const Dataset train = load_idx_dataset(ti, tl, cfg.data.full_mnist ? 0 : cfg.data.train_limit);
  const Dataset test = load_idx_dataset(vi, vl, cfg.data.test_limit);

  std::filesystem::create_directories(cfg.out_dir);
  std::optional<NetworkState> initial;
  if (!cfg.resume_from.empty()) initial = load_checkpoint(cfg.resume_from, lenet4_specs());

  EpochCallback cb;
  if (cfg.checkpoint_every_epoch)
    cb = [&](const EpochReport& r, const NetworkState& s) {
      save_checkpoint(s, cfg.out_dir / ("checkpoint_epoch_" + std::to_string(r.epoch) + ".bin"));
    };
  ExperimentResult res;
  if (initial) load_history(cfg.resume_from, initial->epoch, res);
  ExperimentResult run = run_experiment(cfg, train, test, std::move(initial), cb);
  res.rows.insert(res.rows.end(), run.rows.begin(), run.rows.end());
  res.prune_log.insert(res.prune_log.end(), run.prune_log.begin(), run.prune_log.end());
  res.final_state = std::move(run.final_state);
  res.layer_names = std::move(run.layer_names);

  emit_report(res.rows, res.layer_names, cfg.out_dir / "report.csv", cfg.out_dir / "report.json");
  write_text(cfg.out_dir / "prune_log.json", prune_log_json(res.prune_log).dump(2) + "\n");
  save_checkpoint(res.final_state, cfg.checkpoint_path());
  return res;
}

}  // namespace scsp
