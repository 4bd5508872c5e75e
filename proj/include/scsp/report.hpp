#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "scsp/errors.hpp"

// CSV columns, in order:
//   epoch, train_loss, test_accuracy,
//   sparsity_<layer> for each parameterized layer, sparsity_total,
//   effective_flops, theoretical_flops, pruned_flops_pct,
//   pruned_flops_pct_layerwise, pruned_groups
// Reals are printed with 6 decimals. pruned_groups lists the groups zeroized
// in that epoch as "layer:id id;layer:id ..." (empty when nothing was pruned).
// The JSON report is an array with one object per row holding the same
// fields; per-layer sparsity and pruned groups are nested objects.

namespace scsp {

struct EpochReport {
  std::uint64_t epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  std::vector<std::pair<std::string, double>> layer_sparsity;
  double sparsity_total = 0.0;
  std::uint64_t effective_flops = 0;
  std::uint64_t theoretical_flops = 0;
  double pruned_flops_pct = 0.0;
  double pruned_flops_pct_layerwise = 0.0;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> pruned_groups;

  friend bool operator==(const EpochReport&, const EpochReport&) = default;
};

inline double round6(double x) { return std::round(x * 1e6) / 1e6; }

// Prints round6(x) so CSV and JSON agree on exact ties like 0.8515625.
inline std::string fixed6(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", round6(x));
  return buf;
}

inline std::string csv_header(const std::vector<std::string>& layer_names) {
  std::string h = "epoch,train_loss,test_accuracy";
  for (const auto& n : layer_names) h += ",sparsity_" + n;
  h += ",sparsity_total,effective_flops,theoretical_flops,pruned_flops_pct,pruned_flops_pct_layerwise,pruned_groups";
  return h;
}

inline std::string format_pruned_groups(const EpochReport& r) {
  std::string s;
  for (const auto& [name, ids] : r.pruned_groups) {
    if (!s.empty()) s += ';';
    s += name + ':';
    for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? " " : "") + std::to_string(ids[i]);
  }
  return s;
}

inline std::string to_csv(const std::vector<EpochReport>& rows, const std::vector<std::string>& layer_names) {
  std::ostringstream out;
  out << csv_header(layer_names) << '\n';
  for (const auto& r : rows) {
    out << r.epoch << ',' << fixed6(r.train_loss) << ',' << fixed6(r.test_accuracy);
    for (const auto& [_, v] : r.layer_sparsity) out << ',' << fixed6(v);
    out << ',' << fixed6(r.sparsity_total) << ',' << r.effective_flops << ',' << r.theoretical_flops << ','
        << fixed6(r.pruned_flops_pct) << ',' << fixed6(r.pruned_flops_pct_layerwise) << ','
        << format_pruned_groups(r) << '\n';
  }
  return out.str();
}

inline nlohmann::ordered_json to_json(const std::vector<EpochReport>& rows) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["train_loss"] = round6(r.train_loss);
    j["test_accuracy"] = round6(r.test_accuracy);
    nlohmann::ordered_json sp = nlohmann::ordered_json::object();
    for (const auto& [n, v] : r.layer_sparsity) sp[n] = round6(v);
    j["sparsity"] = sp;
    j["sparsity_total"] = round6(r.sparsity_total);
    j["effective_flops"] = r.effective_flops;
    j["theoretical_flops"] = r.theoretical_flops;
    j["pruned_flops_pct"] = round6(r.pruned_flops_pct);
    j["pruned_flops_pct_layerwise"] = round6(r.pruned_flops_pct_layerwise);
    nlohmann::ordered_json pg = nlohmann::ordered_json::object();
    for (const auto& [n, ids] : r.pruned_groups) pg[n] = ids;
    j["pruned_groups"] = pg;
    arr.push_back(std::move(j));
  }
  return arr;
}

inline std::vector<EpochReport> rows_from_json(const nlohmann::ordered_json& arr) {
  std::vector<EpochReport> rows;
  for (const auto& j : arr) {
    EpochReport r;
    r.epoch = j.at("epoch").get<std::uint64_t>();
    r.train_loss = j.at("train_loss").get<double>();
    r.test_accuracy = j.at("test_accuracy").get<double>();
    for (const auto& [n, v] : j.at("sparsity").items()) r.layer_sparsity.emplace_back(n, v.get<double>());
    r.sparsity_total = j.at("sparsity_total").get<double>();
    r.effective_flops = j.at("effective_flops").get<std::uint64_t>();
    r.theoretical_flops = j.at("theoretical_flops").get<std::uint64_t>();
    r.pruned_flops_pct = j.at("pruned_flops_pct").get<double>();
    r.pruned_flops_pct_layerwise = j.at("pruned_flops_pct_layerwise").get<double>();
    for (const auto& [n, v] : j.at("pruned_groups").items())
      r.pruned_groups.emplace_back(n, v.get<std::vector<std::size_t>>());
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Reals rounded to the 6 decimals the report files carry.
inline EpochReport rounded(EpochReport r) {
  r.train_loss = round6(r.train_loss);
  r.test_accuracy = round6(r.test_accuracy);
  for (auto& [_, v] : r.layer_sparsity) v = round6(v);
  r.sparsity_total = round6(r.sparsity_total);
  r.pruned_flops_pct = round6(r.pruned_flops_pct);
  r.pruned_flops_pct_layerwise = round6(r.pruned_flops_pct_layerwise);
  return r;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

/// Writes the CSV and JSON renderings of the same rows.
inline void emit_report(const std::vector<EpochReport>& rows, const std::vector<std::string>& layer_names,
                        const std::filesystem::path& csv_path, const std::filesystem::path& json_path) {
  write_text(csv_path, to_csv(rows, layer_names));
  write_text(json_path, to_json(rows).dump(2) + "\n");
}

}  // namespace scsp
