// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit when any
// criterion fails. Criteria 4 to 7 need the MNIST IDX files.

#include <boost/multiprecision/cpp_int.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "scsp/scsp.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace scsp;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// ---- criterion 1 ---------------------------------------------------------

Outcome numeric_kernels() {
  Rng rng(0xc1);
  int eig_fail = 0;
  double worst_recon = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + static_cast<std::size_t>(t % 64);
    const auto a = testing::random_symmetric(n, rng, t % 4 == 0 ? 50.0 : 1.0);
    const auto r = eigh_symmetric(a);
    const auto& v = r.eigenvectors;
    const double amax = a.max_abs();
    double anorm = 0.0;
    for (double x : a.data()) anorm += x * x;
    anorm = std::sqrt(anorm);
    bool ok = std::is_sorted(r.eigenvalues.begin(), r.eigenvalues.end());
    double trace = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) trace += a(i, i), sum += r.eigenvalues[i];
    ok = ok && std::abs(trace - sum) <= 1e-8;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double vtv = 0.0, recon = 0.0, av = 0.0;
        for (std::size_t m = 0; m < n; ++m) {
          vtv += v(m, i) * v(m, j);
          recon += v(i, m) * r.eigenvalues[m] * v(j, m);
          av += a(i, m) * v(m, j);
        }
        ok = ok && std::abs(vtv - (i == j ? 1.0 : 0.0)) <= 1e-8;
        const double err = std::abs(recon - a(i, j));
        worst_recon = std::max(worst_recon, err / std::max(1.0, amax));
        ok = ok && err <= 1e-8 * std::max(1.0, amax);
        ok = ok && std::abs(av - r.eigenvalues[j] * v(i, j)) <= 1e-6 * std::max(1.0, anorm);
      }
    eig_fail += ok ? 0 : 1;
  }

  int km_total = 0, km_fail = 0;
  for (std::size_t n = 1; n <= 8; ++n)
    for (std::size_t k = 1; k <= std::min<std::size_t>(3, n); ++k)
      for (int t = 0; t < 100; ++t) {
        std::vector<double> x(n);
        DenseMatrix p(n, 1);
        for (std::size_t i = 0; i < n; ++i) {
          // Mix of spread, clumped and duplicated coordinates.
          x[i] = t % 3 == 0   ? uniform(rng, -5.0, 5.0)
                 : t % 3 == 1 ? static_cast<double>(uniform_index(rng, 3)) * 4.0 + 0.3 * normal01(rng)
                              : static_cast<double>(uniform_index(rng, 4));
          p(i, 0) = x[i];
        }
        const auto bf = testing::brute_force_kmeans_1d(x, static_cast<int>(k));
        const auto r = kmeans(p, k, static_cast<std::uint64_t>(1000 * n + 10 * k + t));
        ++km_total;
        if (r.objective > bf.objective + 1e-9 * std::max(1.0, bf.objective)) ++km_fail;
      }
  return {eig_fail == 0 && km_fail == 0,
          fmt("eigh %d/200 violations (worst reconstruction %.2e); kmeans %d/%d above brute-force optimum", eig_fail,
              worst_recon, km_fail, km_total)};
}

// ---- criterion 2 ---------------------------------------------------------

double max_diff(const DenseMatrix& a, const DenseMatrix& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) d = std::max(d, std::abs(a.data()[i] - b.data()[i]));
  return d;
}

struct Pipeline {
  DenseMatrix s, gamma, pi;
};

Pipeline pipeline(const Tensor& w) {
  Pipeline p;
  p.s = cosine_distance_matrix(reshape_filters(w, 0));
  p.gamma = rbf_adjacency(p.s, 1.0);
  p.pi = normalized_laplacian(p.gamma, degree_matrix(p.gamma));
  return p;
}

Outcome spectral_pipeline() {
  Rng rng(0xc2);
  SpectralConfig cfg;
  cfg.n_clusters = 2;
  int recovered = 0;
  double worst_perm = 0.0, worst_scale = 0.0;
  int scale_partition_changes = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 16 + uniform_index(rng, 113);
    const std::size_t len = 9 * (1 + uniform_index(rng, 4));
    const auto planted = testing::planted_two_prototypes(n, len, 0.05, rng);
    const auto a = cluster_filters(planted.weights, cfg, static_cast<std::uint64_t>(t));
    if (testing::adjusted_rand_index(a.labels, planted.truth) == 1.0) ++recovered;

    const Pipeline base = pipeline(planted.weights);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    shuffle(perm, rng);
    Tensor permuted({len, n}), scaled({len, n});
    std::vector<double> c(n);
    for (double& x : c) x = std::exp(uniform(rng, -4.0, 4.0));
    for (std::size_t r = 0; r < len; ++r)
      for (std::size_t j = 0; j < n; ++j) {
        permuted.data[r * n + j] = planted.weights.data[r * n + perm[j]];
        scaled.data[r * n + j] = planted.weights.data[r * n + j] * c[j];
      }
    const Pipeline pp = pipeline(permuted);
    const Pipeline ps = pipeline(scaled);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        worst_perm = std::max({worst_perm, std::abs(pp.s(i, j) - base.s(perm[i], perm[j])),
                               std::abs(pp.gamma(i, j) - base.gamma(perm[i], perm[j])),
                               std::abs(pp.pi(i, j) - base.pi(perm[i], perm[j]))});
      }
    worst_scale = std::max({worst_scale, max_diff(ps.s, base.s), max_diff(ps.gamma, base.gamma), max_diff(ps.pi, base.pi)});
    const auto as = cluster_filters(scaled, cfg, static_cast<std::uint64_t>(t));
    if (!testing::same_partition(as.labels, a.labels)) ++scale_partition_changes;
  }
  const bool pass = recovered >= 95 && worst_perm <= 1e-12 && worst_scale <= 1e-12 && scale_partition_changes == 0;
  return {pass, fmt("ARI=1 in %d/100; permutation max dev %.2e; scaling max dev %.2e; partition changes under scaling %d",
                    recovered, worst_perm, worst_scale, scale_partition_changes)};
}

// ---- criterion 3 ---------------------------------------------------------

Outcome flops_oracle() {
  using boost::multiprecision::cpp_int;
  Rng rng(0xc3);
  int mismatches = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::uint64_t h = 1 + uniform_index(rng, 512), w = 1 + uniform_index(rng, 512);
    const std::uint64_t c = 1 + uniform_index(rng, 2048), k = 1 + uniform_index(rng, 11);
    const std::uint64_t o = 1 + uniform_index(rng, 2048);
    const std::uint64_t fi = uniform_index(rng, 100000), fo = 1 + uniform_index(rng, 100000);
    const cpp_int conv = cpp_int(2) * h * w * (cpp_int(c) * k * k + 1) * o;
    const cpp_int fc = fi == 0 ? cpp_int(0) : (cpp_int(2) * fi - 1) * fo;
    if (cpp_int(conv_flops(h, w, c, k, o)) != conv) ++mismatches;
    if (cpp_int(fc_flops(fi, fo)) != fc) ++mismatches;
  }

  int sparsity_mismatches = 0;
  auto s = init_network(0xc3);
  for (std::size_t i : s.param_layers())
    for (double& x : s.weights[i].data)
      if (uniform01(rng) < 0.05) x = 0.0;
  for (int step = 0; step < 60; ++step) {
    const auto layers = s.param_layers();
    const std::size_t layer = layers[uniform_index(rng, layers.size())];
    const std::size_t nf = s.specs[layer].n_filters();
    const std::size_t f = uniform_index(rng, nf);
    const auto& w = s.weights[layer];
    std::size_t nnz_before = 0, nnz_filter = 0;
    for (std::size_t r = 0; r < w.numel(); ++r) {
      nnz_before += w.data[r] != 0.0;
      if (r % nf == f) nnz_filter += w.data[r] != 0.0;
    }
    zeroize_filter(s, layer, f);
    const double expected = static_cast<double>(nnz_before - nnz_filter) / static_cast<double>(w.numel());
    if (sparsity(s.weights[layer]) != expected) ++sparsity_mismatches;
  }

  const auto budget = effective_network_flops(init_network(1));
  const auto& fc1 = budget.layers[2];
  const auto gap = static_cast<long long>(fc1.theoretical_flops) - 2 * static_cast<long long>(fc1.total_params);
  const bool anchor = std::llabs(gap) <= 128;
  return {mismatches == 0 && sparsity_mismatches == 0 && anchor,
          fmt("big-integer mismatches %d/2000; sparsity delta mismatches %d/60; fc1 FLOPs %llu vs 2x%zu weights (gap %lld, "
              "bound 128)",
              mismatches, sparsity_mismatches, static_cast<unsigned long long>(fc1.theoretical_flops), fc1.total_params,
              gap)};
}

// ---- criterion 4 ---------------------------------------------------------

Outcome soft_recovery(const Dataset& train) {
  TrainConfig tc;
  auto s = init_network(0xc4);
  const auto first = train.head(4000);
  Dataset second;
  second.pixels.assign(train.pixels.begin() + 4000 * 784, train.pixels.begin() + 8000 * 784);
  second.labels.assign(train.labels.begin() + 4000, train.labels.begin() + 8000);
  train_epoch(s, first, tc, 1);
  const auto shape0 = s;

  PruneConfig pc;
  pc.skip_layers = {s.layer_index("fc2")};
  scsp_step(s, {}, pc, 0xc4);
  const auto pruned = s;
  train_epoch(s, second, tc, 2);

  std::size_t zeroized = 0, nonzero = 0;
  for (std::size_t layer : {s.layer_index("conv1"), s.layer_index("conv2")}) {
    const auto rep = soft_recovery_check(pruned, s, pruned.mask_for(layer));
    zeroized += rep.pruned_weights;
    nonzero += rep.nonzero_after;
  }
  const bool shapes = same_shapes(shape0, pruned) && same_shapes(pruned, s);
  const double frac = zeroized ? static_cast<double>(nonzero) / static_cast<double>(zeroized) : 0.0;

  // Where the weights that stayed at zero sit: a conv2 filter pruned in the
  // same step reading from a conv1 channel pruned in that step.
  const std::size_t c2 = s.layer_index("conv2");
  const auto& c1_pruned = pruned.mask_for(s.layer_index("conv1")).last_pruned_filters;
  std::size_t stuck = 0, stuck_on_pruned_pair = 0;
  const std::size_t nf = s.specs[c2].n_filters(), cin = s.specs[c2].c_in;
  for (std::size_t f : pruned.mask_for(c2).last_pruned_filters)
    for (std::size_t r = f; r < s.weights[c2].numel(); r += nf)
      if (s.weights[c2].data[r] == 0.0) {
        ++stuck;
        const std::size_t channel = (r / nf) % cin;
        stuck_on_pruned_pair += std::count(c1_pruned.begin(), c1_pruned.end(), channel) ? 1 : 0;
      }
  return {zeroized > 0 && frac >= 0.99 && shapes,
          fmt("%zu/%zu zeroized conv weights nonzero after one epoch (%.4f, need >= 0.99); shapes unchanged: %s; "
              "%zu of %zu conv2 weights still zero read a conv1 channel pruned in the same step",
              nonzero, zeroized, frac, shapes ? "yes" : "no", stuck_on_pruned_pair, stuck)};
}

// ---- criteria 5-7 --------------------------------------------------------

struct Runs {
  fs::path data_dir, work;
  std::map<std::string, ExperimentResult> done;

  const ExperimentResult& get(const std::string& tag, Mode mode, double rate) {
    auto it = done.find(tag);
    if (it != done.end()) return it->second;
    ExperimentConfig c;
    c.mode = mode;
    c.data.dir = data_dir;
    c.train.epochs = 5;
    c.train.learning_rate = 0.07;
    c.train.batch_size = 64;
    c.prune.rate = rate;
    c.prune.gap = 1;
    c.prune.recovery_tail_epochs = 2;
    c.out_dir = work / tag;
    const auto t0 = std::chrono::steady_clock::now();
    auto res = run_experiment(c);
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto& last = res.rows.back();
    std::printf("   run %-10s %6.1f s  acc %.4f  pruned FLOPs %.3f%%  sparsity %.6f\n", tag.c_str(), sec,
                last.test_accuracy, last.pruned_flops_pct, last.sparsity_total);
    std::fflush(stdout);
    return done.emplace(tag, std::move(res)).first->second;
  }
};

Outcome desk_replay(Runs& runs) {
  const auto& base = runs.get("baseline", Mode::baseline, 0.0).rows.back();
  const auto& scsp = runs.get("scsp_0.2", Mode::scsp, 0.2).rows.back();
  const double gap_points = 100.0 * (base.test_accuracy - scsp.test_accuracy);
  const bool pass = base.test_accuracy >= 0.95 && gap_points <= 1.5 && scsp.pruned_flops_pct > 5.0 &&
                    scsp.sparsity_total < 1.0;
  return {pass, fmt("baseline acc %.4f (need >= 0.95); scsp acc %.4f (gap %.2f points, need <= 1.5); pruned FLOPs "
                    "%.3f%% (need > 5); final sparsity %.6f (need < 1)",
                    base.test_accuracy, scsp.test_accuracy, gap_points, scsp.pruned_flops_pct, scsp.sparsity_total)};
}

Outcome determinism(Runs& runs) {
  runs.get("scsp_0.2", Mode::scsp, 0.2);
  runs.get("scsp_0.2_b", Mode::scsp, 0.2);
  const fs::path a = runs.work / "scsp_0.2", b = runs.work / "scsp_0.2_b";
  const bool csv = slurp(a / "report.csv") == slurp(b / "report.csv") && !slurp(a / "report.csv").empty();
  const bool ckpt = slurp(a / "checkpoint.bin") == slurp(b / "checkpoint.bin") && !slurp(a / "checkpoint.bin").empty();
  return {csv && ckpt, fmt("report.csv identical: %s; checkpoint.bin identical: %s", csv ? "yes" : "no", ckpt ? "yes" : "no")};
}

Outcome rate_trend(Runs& runs) {
  std::vector<std::pair<double, const EpochReport*>> pts;
  for (double r : {0.1, 0.2, 0.4}) pts.emplace_back(r, &runs.get(fmt("scsp_%.1f", r), Mode::scsp, r).rows.back());
  bool pass = true;
  std::string detail;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    detail += fmt("%srate %.1f: pruned FLOPs %.3f%%, 1-sparsity %.6f", i ? "; " : "", pts[i].first,
                  pts[i].second->pruned_flops_pct, 1.0 - pts[i].second->sparsity_total);
    if (i > 0) {
      pass = pass && pts[i].second->pruned_flops_pct >= pts[i - 1].second->pruned_flops_pct;
      pass = pass && pts[i].second->sparsity_total <= pts[i - 1].second->sparsity_total;
    }
  }
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SCSP acceptance suite"};
  std::string data_dir = "data/mnist", work_dir = "acceptance_work";
  std::vector<int> only;
  app.add_option("--data-dir", data_dir, "Directory with the MNIST IDX files");
  app.add_option("--work-dir", work_dir, "Scratch directory for run outputs");
  app.add_option("--only", only, "Run only these criteria (1-7)");
  CLI11_PARSE(app, argc, argv);

  fs::create_directories(work_dir);
  Runs runs{data_dir, work_dir, {}};
  std::optional<Dataset> train;
  auto need_train = [&]() -> const Dataset& {
    if (!train) {
      DataPaths d;
      d.dir = data_dir;
      train = load_idx_dataset(resolve_data_file(d, {}, "train-images-idx3-ubyte"),
                               resolve_data_file(d, {}, "train-labels-idx1-ubyte"), 10000);
    }
    return *train;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"numeric kernels", numeric_kernels},
      {"spectral pipeline", spectral_pipeline},
      {"FLOPs/sparsity oracle", flops_oracle},
      {"soft recovery", [&] { return soft_recovery(need_train()); }},
      {"desk-scale MNIST replay", [&] { return desk_replay(runs); }},
      {"determinism", [&] { return determinism(runs); }},
      {"prune-rate trend", [&] { return rate_trend(runs); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] criterion %d %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), sec,
                o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
