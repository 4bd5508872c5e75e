#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "scsp/errors.hpp"
#include "scsp/nn.hpp"
#include "scsp/rng.hpp"
#include "scsp/spectral.hpp"

namespace scsp {

struct PruneConfig {
  double prune_rate = 0.2;                    // default for every layer
  std::map<std::size_t, double> layer_rates;  // per-layer overrides
  std::size_t pruning_gap = 1;                // epochs between pruning steps
  double p_norm = 2.0;
  std::set<std::size_t> skip_layers;
  std::size_t recovery_tail_epochs = 2;

  double rate_for(std::size_t layer) const {
    auto it = layer_rates.find(layer);
    return it == layer_rates.end() ? prune_rate : it->second;
  }

  void validate() const {
    auto check = [](double r) {
      if (!(r >= 0.0 && r < 1.0)) throw ParameterError("prune rate must lie in [0, 1), got " + std::to_string(r));
    };
    check(prune_rate);
    for (const auto& [_, r] : layer_rates) check(r);
    if (pruning_gap < 1) throw ParameterError("pruning_gap must be at least 1");
    if (!(p_norm >= 1.0)) throw ParameterError("p_norm must be at least 1");
  }
};

struct GroupEffect {
  std::size_t layer_id = 0;
  std::size_t group_id = 0;
  double effect = 0.0;
  std::vector<std::size_t> member_filters;
};

// One record per layer per pruning step.
struct PruneLogRecord {
  std::size_t layer_id = 0;
  std::string layer_name;
  bool skipped = false;
  std::string skip_reason;
  std::vector<std::size_t> group_sizes;
  std::vector<double> effects;
  std::vector<std::size_t> pruned_groups;
  std::vector<std::size_t> pruned_filters;
};

inline double lp_norm(std::span<const double> v, double p) {
  if (p == 2.0) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  }
  if (p == 1.0) {
    double s = 0.0;
    for (double x : v) s += std::abs(x);
    return s;
  }
  double s = 0.0;
  for (double x : v) s += std::pow(std::abs(x), p);
  return std::pow(s, 1.0 / p);
}

/// Effect of each group: the sum over member filters of the filter's Lp norm.
inline std::vector<GroupEffect> group_effect(const FilterMatrix& m, const ClusterAssignment& a, double p = 2.0) {
  if (!(p >= 1.0)) throw ParameterError("group_effect: p must be at least 1");
  std::map<std::size_t, std::size_t> column_of;
  for (std::size_t j = 0; j < m.active_index_map.size(); ++j) column_of[m.active_index_map[j]] = j;

  std::vector<GroupEffect> out;
  std::set<std::size_t> seen;
  std::vector<double> col(m.filter_len);
  for (std::size_t g = 0; g < a.groups.size(); ++g) {
    if (a.groups[g].empty()) throw ContractError("group_effect: group " + std::to_string(g) + " is empty");
    GroupEffect e{.layer_id = a.layer_id, .group_id = g, .effect = 0.0, .member_filters = a.groups[g]};
    for (std::size_t f : a.groups[g]) {
      auto it = column_of.find(f);
      if (it == column_of.end())
        throw ContractError("group_effect: filter " + std::to_string(f) + " not present in the filter matrix");
      if (!seen.insert(f).second)
        throw ContractError("group_effect: filter " + std::to_string(f) + " belongs to two groups");
      for (std::size_t r = 0; r < m.filter_len; ++r) col[r] = m.weights(r, it->second);
      e.effect += lp_norm(col, p);
    }
    out.push_back(std::move(e));
  }
  return out;
}

/// Number of groups pruned at a rate: floor(n_groups * rate).
inline std::size_t groups_to_prune(std::size_t n_groups, double rate) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(n_groups) * rate + 1e-9));
}

/// Ids of the floor(N * rate) lowest-effect groups, ranked ascending by
/// effect with ties going to the lower group id.
inline std::vector<std::size_t> select_groups_to_prune(const std::vector<GroupEffect>& effects, double prune_rate) {
  if (!(prune_rate >= 0.0 && prune_rate < 1.0))
    throw ParameterError("select_groups_to_prune: rate must lie in [0, 1)");
  std::vector<const GroupEffect*> ranked;
  for (const auto& e : effects) ranked.push_back(&e);
  std::sort(ranked.begin(), ranked.end(), [](const GroupEffect* a, const GroupEffect* b) {
    return a->effect != b->effect ? a->effect < b->effect : a->group_id < b->group_id;
  });
  std::vector<std::size_t> out;
  const std::size_t n = groups_to_prune(effects.size(), prune_rate);
  for (std::size_t i = 0; i < n && i < ranked.size(); ++i) out.push_back(ranked[i]->group_id);
  return out;
}

/// Sets weights and bias of one filter to exactly zero.
inline void zeroize_filter(NetworkState& s, std::size_t layer, std::size_t o) {
  auto& w = s.weights[layer];
  const std::size_t n = s.specs[layer].n_filters();
  for (std::size_t r = o; r < w.numel(); r += n) w.data[r] = 0.0;
  s.biases[layer][o] = 0.0;
}

/// Zeroizes every member filter of the listed groups and records the
/// selection in the layer's mask. Other filters are left untouched.
inline PruneMask zeroize_groups(NetworkState& s, std::size_t layer_id, const std::vector<std::size_t>& groups,
                                const ClusterAssignment& a) {
  if (layer_id >= s.specs.size() || !s.specs[layer_id].has_params())
    throw ContractError("zeroize_groups: layer " + std::to_string(layer_id) + " has no parameters");
  const std::size_t n = s.specs[layer_id].n_filters();
  for (std::size_t g : groups) {
    if (g >= a.groups.size()) throw ContractError("zeroize_groups: unknown group id " + std::to_string(g));
    for (std::size_t f : a.groups[g])
      if (f >= n) throw ContractError("zeroize_groups: filter index out of range");
  }
  PruneMask& mask = s.mask_for(layer_id);
  mask.last_pruned_groups = groups;
  mask.last_pruned_filters.clear();
  for (std::size_t g : groups)
    for (std::size_t f : a.groups[g]) {
      zeroize_filter(s, layer_id, f);
      mask.active[f] = false;
      mask.last_pruned_filters.push_back(f);
    }
  std::sort(mask.last_pruned_filters.begin(), mask.last_pruned_filters.end());
  return mask;
}

struct ScspStepResult {
  std::vector<PruneLogRecord> log;
  std::vector<PruneMask> masks;
};

/// Per-layer clustering settings with a shared default.
struct SpectralSettings {
  SpectralConfig defaults;
  std::map<std::size_t, SpectralConfig> per_layer;

  const SpectralConfig& for_layer(std::size_t layer) const {
    auto it = per_layer.find(layer);
    return it == per_layer.end() ? defaults : it->second;
  }
};

/// One soft-pruning round over every prunable, non-skipped layer: cluster
/// the nonzero filters, rank groups by effect and zeroize the lowest
/// floor(N * rate) of them. Layers that cannot be clustered are logged as
/// skipped and left as they are.
inline ScspStepResult scsp_step(NetworkState& s, const SpectralSettings& spectral, const PruneConfig& cfg,
                                std::uint64_t seed) {
  cfg.validate();
  ScspStepResult res;
  for (std::size_t layer : s.param_layers()) {
    const auto& sp = s.specs[layer];
    if (!sp.prunable || cfg.skip_layers.contains(layer)) continue;

    PruneLogRecord rec{.layer_id = layer, .layer_name = sp.name};
    PruneMask& mask = s.mask_for(layer);
    for (std::size_t o = 0; o < mask.active.size(); ++o) mask.active[o] = !filter_is_zero(s, layer, o);
    mask.last_pruned_groups.clear();
    mask.last_pruned_filters.clear();

    const double rate = cfg.rate_for(layer);
    if (rate == 0.0) {
      rec.skipped = true;
      rec.skip_reason = "rate 0";
      res.log.push_back(std::move(rec));
      continue;
    }
    try {
      const FilterMatrix full = reshape_filters(s.weights[layer], layer);
      FilterMatrix kept;
      try {
        kept = drop_zero_filters(full);
      } catch (const EmptyLayerError& e) {
        throw LayerSkip(e.what());
      }
      const ClusterAssignment a = cluster_filter_matrix(kept, spectral.for_layer(layer), derive_seed(seed, layer));
      const auto effects = group_effect(full, a, cfg.p_norm);
      for (const auto& e : effects) {
        rec.group_sizes.push_back(e.member_filters.size());
        rec.effects.push_back(e.effect);
      }
      const auto chosen = select_groups_to_prune(effects, rate);
      zeroize_groups(s, layer, chosen, a);
      rec.pruned_groups = chosen;
      rec.pruned_filters = mask.last_pruned_filters;
    } catch (const LayerSkip& e) {
      rec.skipped = true;
      rec.skip_reason = e.what();
    }
    res.log.push_back(std::move(rec));
  }
  res.masks = s.masks;
  return res;
}

/// Re-applies each layer's most recent selection as a final hard prune.
inline void final_hard_prune(NetworkState& s) {
  for (auto& m : s.masks)
    for (std::size_t f : m.last_pruned_filters) {
      zeroize_filter(s, m.layer_id, f);
      m.active[f] = false;
    }
}

struct RecoveryReport {
  struct Filter {
    std::size_t filter = 0;
    double norm_after = 0.0;
    bool recovered = false;
  };
  std::size_t layer_id = 0;
  std::vector<Filter> filters;
  std::size_t pruned_weights = 0;
  std::size_t nonzero_after = 0;

  std::size_t recovered_count() const {
    return static_cast<std::size_t>(std::count_if(filters.begin(), filters.end(), [](const Filter& f) { return f.recovered; }));
  }
  double weight_recovery_fraction() const {
    return pruned_weights == 0 ? 1.0 : static_cast<double>(nonzero_after) / static_cast<double>(pruned_weights);
  }
};

/// For every filter the mask lists as pruned, reports whether training has
/// moved it away from zero. `before` must be the state right after pruning.
inline RecoveryReport soft_recovery_check(const NetworkState& before, const NetworkState& after, const PruneMask& mask) {
  const std::size_t layer = mask.layer_id;
  if (before.weights[layer].shape != after.weights[layer].shape)
    throw ContractError("soft_recovery_check: layer shape changed");
  RecoveryReport rep{.layer_id = layer};
  const auto& wb = before.weights[layer];
  const auto& wa = after.weights[layer];
  const std::size_t n = before.specs[layer].n_filters();
  for (std::size_t f : mask.last_pruned_filters) {
    for (std::size_t r = f; r < wa.numel(); r += n) {
      if (wb.data[r] != 0.0) continue;
      ++rep.pruned_weights;
      rep.nonzero_after += wa.data[r] != 0.0 ? 1 : 0;
    }
    const double norm = filter_norm(after, layer, f);
    rep.filters.push_back({f, norm, norm > 0.0});
  }
  return rep;
}

/// True when every parameter tensor of a and b has the same shape.
inline bool same_shapes(const NetworkState& a, const NetworkState& b) {
  if (a.specs != b.specs || a.weights.size() != b.weights.size()) return false;
  for (std::size_t i = 0; i < a.weights.size(); ++i) {
    if (a.weights[i].shape != b.weights[i].shape) return false;
    if (a.biases[i].size() != b.biases[i].size()) return false;
  }
  for (std::size_t i = 0; i < a.masks.size() && i < b.masks.size(); ++i)
    if (a.masks[i].active.size() != b.masks[i].active.size()) return false;
  return a.masks.size() == b.masks.size();
}

}  // namespace scsp
