#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "scsp/errors.hpp"
#include "scsp/nn.hpp"

namespace scsp {

namespace detail {

inline std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  unsigned __int128 r = static_cast<unsigned __int128>(a) * b;
  if (r > static_cast<unsigned __int128>(std::numeric_limits<std::int64_t>::max()))
    throw NumericError("FLOP count overflows 2^63");
  return static_cast<std::uint64_t>(r);
}

inline std::uint64_t checked_add(std::uint64_t a, std::uint64_t b) {
  if (b > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()) - a)
    throw NumericError("FLOP count overflows 2^63");
  return a + b;
}

}  // namespace detail

/// 2 * H * W * (C_in * K^2 + 1) * C_out, with H x W the output map size.
inline std::uint64_t conv_flops(std::uint64_t h, std::uint64_t w, std::uint64_t c_in, std::uint64_t k,
                                std::uint64_t c_out) {
  using detail::checked_add;
  using detail::checked_mul;
  const std::uint64_t per_out = checked_add(checked_mul(c_in, checked_mul(k, k)), 1);
  return checked_mul(checked_mul(checked_mul(2, checked_mul(h, w)), per_out), c_out);
}

/// (2 * C_in - 1) * C_out; zero when there are no inputs.
inline std::uint64_t fc_flops(std::uint64_t c_in, std::uint64_t c_out) {
  if (c_in == 0) return 0;
  return detail::checked_mul(detail::checked_mul(2, c_in) - 1, c_out);
}

/// Fraction of entries that are exactly nonzero.
inline double sparsity(std::span<const double> values) {
  if (values.empty()) throw DimensionError("sparsity: empty tensor");
  std::size_t nz = 0;
  for (double v : values) nz += v != 0.0 ? 1 : 0;
  return static_cast<double>(nz) / static_cast<double>(values.size());
}

inline double sparsity(const Tensor& t) { return sparsity(t.data); }

inline std::size_t count_nonzero(std::span<const double> values) {
  std::size_t nz = 0;
  for (double v : values) nz += v != 0.0 ? 1 : 0;
  return nz;
}

struct LayerBudget {
  std::size_t layer_id = 0;
  std::string name;
  std::uint64_t theoretical_flops = 0;
  std::uint64_t effective_flops = 0;
  // Only this layer's own output count reduced; no input-channel propagation.
  std::uint64_t layerwise_effective_flops = 0;
  std::size_t total_params = 0;
  std::size_t active_params = 0;
  std::size_t filters = 0;
  std::size_t active_filters = 0;

  double sparsity() const { return total_params ? static_cast<double>(active_params) / total_params : 0.0; }
};

struct NetworkBudget {
  std::vector<LayerBudget> layers;
  std::uint64_t theoretical_flops = 0;
  std::uint64_t effective_flops = 0;
  std::uint64_t layerwise_effective_flops = 0;
  std::size_t total_params = 0;
  std::size_t active_params = 0;

  double pruned_flops_pct() const {
    return theoretical_flops ? 100.0 * (1.0 - static_cast<double>(effective_flops) / theoretical_flops) : 0.0;
  }
  double pruned_flops_pct_layerwise() const {
    return theoretical_flops ? 100.0 * (1.0 - static_cast<double>(layerwise_effective_flops) / theoretical_flops)
                             : 0.0;
  }
  double sparsity() const { return total_params ? static_cast<double>(active_params) / total_params : 0.0; }
};

/// Per-layer theoretical and effective FLOPs plus weight sparsity.
///
/// Effective FLOPs substitute the layer's active-filter count for C_out and
/// the previous parameterized layer's active count for C_in (scaled by the
/// spatial positions each channel feeds when a conv output is flattened into
/// an FC layer). Pool, ReLU and softmax are not counted.
inline NetworkBudget effective_network_flops(const NetworkState& s) {
  const auto shapes = shape_chain(s.specs, s.input);
  NetworkBudget nb;
  std::size_t prev_filters = s.input.c;
  std::size_t prev_active = s.input.c;
  for (std::size_t i = 0; i < s.specs.size(); ++i) {
    const auto& sp = s.specs[i];
    if (!sp.has_params()) continue;
    const std::size_t active = s.mask_for(i).active_count();
    LayerBudget lb{.layer_id = i, .name = sp.name};
    lb.filters = sp.n_filters();
    lb.active_filters = active;
    lb.total_params = s.weights[i].numel();
    lb.active_params = count_nonzero(s.weights[i].data);

    if (sp.kind == LayerKind::conv) {
      const ActShape out = shapes[i + 1];
      const std::size_t c_in_eff = sp.c_in / prev_filters * prev_active;
      lb.theoretical_flops = conv_flops(out.h, out.w, sp.c_in, sp.kernel, sp.c_out);
      lb.effective_flops = conv_flops(out.h, out.w, c_in_eff, sp.kernel, active);
      lb.layerwise_effective_flops = conv_flops(out.h, out.w, sp.c_in, sp.kernel, active);
    } else {
      const std::size_t fan_in_eff = sp.fan_in / prev_filters * prev_active;
      lb.theoretical_flops = fc_flops(sp.fan_in, sp.fan_out);
      lb.effective_flops = fc_flops(fan_in_eff, active);
      lb.layerwise_effective_flops = fc_flops(sp.fan_in, active);
    }
    prev_filters = sp.n_filters();
    prev_active = active;

    nb.theoretical_flops += lb.theoretical_flops;
    nb.effective_flops += lb.effective_flops;
    nb.layerwise_effective_flops += lb.layerwise_effective_flops;
    nb.total_params += lb.total_params;
    nb.active_params += lb.active_params;
    nb.layers.push_back(std::move(lb));
  }
  return nb;
}

}  // namespace scsp
