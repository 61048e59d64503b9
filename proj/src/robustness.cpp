#include "hnt/robustness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "hnt/error.hpp"
#include "hnt/parallel.hpp"
#include "hnt/rng.hpp"

namespace hnt {

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw NumericalError("percentile of an empty sample");
  if (!(q >= 0.0 && q <= 100.0)) throw UsageError("percentile q must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

BootstrapResample bootstrap_resample(std::span<const int> labels, std::uint64_t seed,
                                     std::size_t iteration) {
  const std::size_t n = labels.size();
  Rng rng = make_rng(seed, "bootstrap", iteration);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  BootstrapResample out;
  std::vector<std::size_t> idx(n);
  for (std::size_t attempt = 0; attempt <= kMaxBootstrapRedraws; ++attempt) {
    std::size_t n_pos = 0;
    for (auto& i : idx) {
      i = pick(rng);
      n_pos += labels[i] == 1;
    }
    if (n_pos > 0 && n_pos < n) {
      out.indices = std::move(idx);
      out.redraws = attempt;
      return out;
    }
  }
  out.redraws = kMaxBootstrapRedraws;
  return out;
}

BootstrapCI bootstrap_auroc_ci(std::span<const double> scores, std::span<const int> labels,
                               std::size_t n_boot, std::uint64_t seed) {
  if (n_boot == 0) throw UsageError("n_boot must be >= 1");
  BootstrapCI ci;
  ci.point = auroc(scores, labels);  // also rejects single-class input
  ci.n_boot = n_boot;

  std::vector<std::optional<double>> values(n_boot);
  std::vector<std::size_t> redraws(n_boot);
  parallel_for(n_boot, [&](std::size_t b) {
    auto rs = bootstrap_resample(labels, seed, b);
    redraws[b] = rs.redraws;
    if (rs.skipped()) return;
    std::vector<double> s(rs.indices.size());
    std::vector<int> y(rs.indices.size());
    for (std::size_t k = 0; k < rs.indices.size(); ++k) {
      s[k] = scores[rs.indices[k]];
      y[k] = labels[rs.indices[k]];
    }
    values[b] = auroc(s, y);
  });

  std::vector<double> kept;
  kept.reserve(n_boot);
  for (std::size_t b = 0; b < n_boot; ++b) {
    ci.n_redrawn += redraws[b] > 0;
    if (values[b]) {
      kept.push_back(*values[b]);
    } else {
      ++ci.n_skipped;
    }
  }
  if (kept.empty()) {
    throw NumericalError("bootstrap: every resample drew a single class");
  }
  ci.n_used = kept.size();
  ci.boot_mean = std::accumulate(kept.begin(), kept.end(), 0.0) / static_cast<double>(kept.size());
  ci.ci_low = percentile(kept, 2.5);
  ci.ci_high = percentile(kept, 97.5);
  return ci;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"grid", c.grid},
                     {"folds", c.n_folds},
                     {"test_fraction", c.test_fraction},
                     {"tol", c.solver.tol},
                     {"max_iter", c.solver.max_iter},
                     {"seed", c.seed}};
}

namespace {

std::vector<float> gather_rows(MatrixView X, std::span<const std::size_t> rows) {
  std::vector<float> out(rows.size() * X.cols);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto r = X.row(rows[k]);
    std::copy(r.begin(), r.end(), out.begin() + static_cast<std::ptrdiff_t>(k * X.cols));
  }
  return out;
}

}  // namespace

ExperimentResult run_experiment(MatrixView X, std::span<const int> y, const TrainConfig& config) {
  if (X.rows != y.size()) throw InvariantError("run_experiment: X rows and labels differ");
  ExperimentResult res;
  const auto in_test = stratified_test_mask(y, config.test_fraction, config.seed);
  for (std::size_t i = 0; i < y.size(); ++i) {
    (in_test[i] ? res.test_rows : res.train_rows).push_back(i);
  }
  const auto train_x = gather_rows(X, res.train_rows);
  const auto test_x = gather_rows(X, res.test_rows);
  std::vector<int> train_y;
  for (auto i : res.train_rows) train_y.push_back(y[i]);
  for (auto i : res.test_rows) res.test_labels.push_back(y[i]);

  const MatrixView train_view{train_x, res.train_rows.size(), X.cols};
  res.cv = cross_validate_select(train_view, train_y, config.grid, config.n_folds, config.seed,
                                 config.solver);
  res.probe = fit_l1_logreg(train_view, train_y, res.cv.chosen_C, config.solver, config.seed);
  res.test_scores = predict_scores(res.probe, MatrixView{test_x, res.test_rows.size(), X.cols});
  res.test_auroc = auroc(res.test_scores, res.test_labels);
  return res;
}

double permutation_p(std::size_t n_at_least, std::size_t n_perm, bool add_one) {
  if (add_one) {
    return static_cast<double>(n_at_least + 1) / static_cast<double>(n_perm + 1);
  }
  return static_cast<double>(n_at_least) / static_cast<double>(n_perm);
}

PermutationResult permutation_test_experiment(MatrixView X, std::span<const int> y,
                                              const TrainConfig& config, std::size_t n_perm,
                                              std::uint64_t seed, bool add_one) {
  const double observed = run_experiment(X, y, config).test_auroc;
  return permutation_test_experiment(X, y, config, observed, n_perm, seed, add_one);
}

PermutationResult permutation_test_experiment(MatrixView X, std::span<const int> y,
                                              const TrainConfig& config, double observed,
                                              std::size_t n_perm, std::uint64_t seed,
                                              bool add_one) {
  if (n_perm == 0) throw UsageError("n_perm must be >= 1");
  PermutationResult res;
  res.observed = observed;
  res.n_perm = n_perm;
  res.add_one = add_one;
  res.null_values.resize(n_perm);
  parallel_for(n_perm, [&](std::size_t k) {
    std::vector<int> yp(y.begin(), y.end());
    Rng rng = make_rng(seed, "perm-labels", k);
    std::shuffle(yp.begin(), yp.end(), rng);
    res.null_values[k] = run_experiment(X, yp, config).test_auroc;
  });
  for (double v : res.null_values) res.n_at_least += v >= observed;
  res.p = permutation_p(res.n_at_least, n_perm, add_one);
  return res;
}

std::string_view to_string(GapPermScheme s) {
  return s == GapPermScheme::kCells ? "cells" : "rows_columns";
}

GapPermScheme parse_gap_scheme(std::string_view text) {
  if (text == "cells") return GapPermScheme::kCells;
  if (text == "rows_columns") return GapPermScheme::kRowsColumns;
  throw UsageError("unknown gap permutation scheme '" + std::string(text) +
                   "' (expected cells or rows_columns)");
}

GapPermutationResult permutation_test_gap(const TransferMatrix& matrix, std::size_t n_perm,
                                          std::uint64_t seed, GapPermScheme scheme,
                                          bool add_one) {
  const std::size_t D = matrix.size();
  if (D < 2) throw InvariantError("gap permutation test needs D >= 2");
  if (n_perm == 0) throw UsageError("n_perm must be >= 1");
  std::vector<double> v(D * D);
  for (std::size_t t = 0; t < D * D; ++t) {
    if (!matrix.cells[t].auroc) {
      throw DataError("gap permutation test needs every transfer cell valid");
    }
    v[t] = *matrix.cells[t].auroc;
  }
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  const double Dd = static_cast<double>(D);
  auto delta_from_diag = [&](double diag_sum) {
    return diag_sum / Dd - (total - diag_sum) / (Dd * (Dd - 1.0));
  };
  double obs_diag = 0.0;
  for (std::size_t i = 0; i < D; ++i) obs_diag += v[i * D + i];

  GapPermutationResult res;
  res.observed_delta = transfer_gap(matrix).delta;
  res.n_perm = n_perm;
  res.scheme = scheme;
  res.add_one = add_one;
  const double threshold = delta_from_diag(obs_diag) - 1e-12;

  std::vector<char> hit(n_perm, 0);
  parallel_for(n_perm, [&](std::size_t k) {
    Rng rng = make_rng(seed, "perm-gap", k);
    double diag = 0.0;
    if (scheme == GapPermScheme::kCells) {
      // Partial Fisher-Yates: only the D cells landing on the diagonal matter.
      std::vector<std::size_t> pos(D * D);
      std::iota(pos.begin(), pos.end(), 0);
      for (std::size_t i = 0; i < D; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, D * D - 1);
        std::swap(pos[i], pos[pick(rng)]);
        diag += v[pos[i]];
      }
    } else {
      std::vector<std::size_t> rows(D), cols(D);
      std::iota(rows.begin(), rows.end(), 0);
      std::iota(cols.begin(), cols.end(), 0);
      std::shuffle(rows.begin(), rows.end(), rng);
      std::shuffle(cols.begin(), cols.end(), rng);
      for (std::size_t i = 0; i < D; ++i) diag += v[rows[i] * D + cols[i]];
    }
    hit[k] = delta_from_diag(diag) >= threshold;
  });
  res.n_at_least = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1));
  res.p = permutation_p(res.n_at_least, n_perm, add_one);
  return res;
}

void to_json(nlohmann::json& j, const GapPermutationResult& r) {
  j = nlohmann::json{{"p", r.p},
                     {"observed_delta", r.observed_delta},
                     {"n_perm", r.n_perm},
                     {"n_at_least", r.n_at_least},
                     {"scheme", to_string(r.scheme)},
                     {"add_one", r.add_one}};
}

BhResult bh_fdr(std::span<const double> pvalues, double alpha) {
  if (pvalues.empty()) throw UsageError("bh_fdr: empty p-value list");
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("bh_fdr: alpha must lie in (0, 1)");
  for (double p : pvalues) {
    if (!(p >= 0.0 && p <= 1.0)) throw DataError("bh_fdr: p-value outside [0, 1]");
  }
  const std::size_t m = pvalues.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pvalues[a] < pvalues[b]; });
  BhResult res;
  res.rejected.assign(m, false);
  res.adjusted.assign(m, 1.0);
  const double md = static_cast<double>(m);
  for (std::size_t r = 0; r < m; ++r) {
    if (pvalues[order[r]] <= static_cast<double>(r + 1) * alpha / md) res.k = r + 1;
  }
  for (std::size_t r = 0; r < res.k; ++r) res.rejected[order[r]] = true;
  res.threshold = static_cast<double>(res.k) * alpha / md;
  double running = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    running = std::min(running, pvalues[order[r]] * md / static_cast<double>(r + 1));
    res.adjusted[order[r]] = running;
  }
  return res;
}

double cohens_d(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw UndefinedMetricError("Cohen's d needs at least two values per group");
  }
  auto moments = [](std::span<const double> g) {
    const double mean = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size());
    double ss = 0.0;
    for (double x : g) ss += (x - mean) * (x - mean);
    return std::pair{mean, ss};
  };
  const auto [ma, ssa] = moments(a);
  const auto [mb, ssb] = moments(b);
  const double pooled = (ssa + ssb) / static_cast<double>(a.size() + b.size() - 2);
  if (!(pooled > 0.0)) throw UndefinedMetricError("Cohen's d undefined: zero pooled variance");
  return (ma - mb) / std::sqrt(pooled);
}

double jaccard(const HNeuronSet& a, const HNeuronSet& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::set<std::pair<std::size_t, std::size_t>> sa, sb;
  for (const auto& e : a.entries) sa.emplace(e.layer, e.neuron);
  for (const auto& e : b.entries) sb.emplace(e.layer, e.neuron);
  std::size_t inter = 0;
  for (const auto& k : sa) inter += sb.count(k);
  return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

StabilityReport jaccard_stability(std::span<const HNeuronSet> sets) {
  if (sets.size() < 2) throw UsageError("Jaccard stability needs at least two neuron sets");
  StabilityReport r;
  r.n_seeds = sets.size();
  for (std::size_t i = 0; i < sets.size(); ++i) {
    for (std::size_t k = i + 1; k < sets.size(); ++k) {
      r.n_empty_pairs += sets[i].empty() && sets[k].empty();
      r.pairwise_jaccard.push_back(jaccard(sets[i], sets[k]));
    }
  }
  const auto& v = r.pairwise_jaccard;
  const double n = static_cast<double>(v.size());
  r.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / n);
  r.min = *std::min_element(v.begin(), v.end());
  r.max = *std::max_element(v.begin(), v.end());
  return r;
}

void to_json(nlohmann::json& j, const StabilityReport& r) {
  j = nlohmann::json{{"pairwise_jaccard", r.pairwise_jaccard},
                     {"mean", r.mean},
                     {"std", r.std},
                     {"min", r.min},
                     {"max", r.max},
                     {"n_seeds", r.n_seeds},
                     {"n_empty_pairs", r.n_empty_pairs}};
}

std::string_view to_string(Verdict v) { return v == Verdict::kRobust ? "ROBUST" : "WEAK"; }

Verdict parse_verdict(std::string_view text) {
  if (text == "ROBUST") return Verdict::kRobust;
  if (text == "WEAK") return Verdict::kWeak;
  throw FormatError("unknown verdict '" + std::string(text) + "'");
}

Verdict classify_verdict(double ci_low, double ci_high, double perm_p) {
  if (!(ci_low <= ci_high)) throw InvariantError("verdict: ci_low exceeds ci_high");
  if (!(perm_p >= 0.0 && perm_p <= 1.0)) throw InvariantError("verdict: p outside [0, 1]");
  return (ci_low > 0.5 && perm_p < kVerdictAlpha) ? Verdict::kRobust : Verdict::kWeak;
}

void to_json(nlohmann::json& j, const RobustnessReport& r) {
  j = nlohmann::json{{"model", r.model},
                     {"domain", r.domain},
                     {"strategy", to_string(r.strategy)},
                     {"auroc", r.auroc_point},
                     {"ci", {r.ci_low, r.ci_high}},
                     {"cv_mean", r.cv_mean},
                     {"cv_std", r.cv_std},
                     {"perm_p", r.perm_p},
                     {"verdict", to_string(r.verdict)},
                     {"n_boot", r.n_boot},
                     {"n_perm", r.n_perm},
                     {"n_boot_skipped", r.n_boot_skipped}};
}

void from_json(const nlohmann::json& j, RobustnessReport& r) {
  r = RobustnessReport{};
  r.model = j.at("model").get<std::string>();
  r.domain = j.at("domain").get<std::string>();
  r.strategy = parse_strategy(j.value("strategy", "direct"));
  r.auroc_point = j.at("auroc").get<double>();
  const auto& ci = j.at("ci");
  if (!ci.is_array() || ci.size() != 2) throw FormatError("robustness row: ci must be [lo, hi]");
  r.ci_low = ci[0].get<double>();
  r.ci_high = ci[1].get<double>();
  r.cv_mean = j.value("cv_mean", 0.0);
  r.cv_std = j.value("cv_std", 0.0);
  r.perm_p = j.at("perm_p").get<double>();
  r.verdict = parse_verdict(j.at("verdict").get<std::string>());
  r.n_boot = j.value("n_boot", std::size_t{0});
  r.n_perm = j.value("n_perm", std::size_t{0});
  r.n_boot_skipped = j.value("n_boot_skipped", std::size_t{0});
}

RobustnessReport assess_experiment(const ExperimentResult& experiment, MatrixView X,
                                   std::span<const int> y, const TrainConfig& config,
                                   const RobustnessOptions& options, std::uint64_t seed) {
  RobustnessReport r;
  const auto ci = bootstrap_auroc_ci(experiment.test_scores, experiment.test_labels,
                                     options.n_boot, derive_seed(seed, "bootstrap-ci"));
  const auto perm = permutation_test_experiment(X, y, config, experiment.test_auroc,
                                                options.n_perm,
                                                derive_seed(seed, "perm-experiment"),
                                                options.add_one);
  const auto& chosen = experiment.cv.chosen();
  r.auroc_point = experiment.test_auroc;
  r.ci_low = ci.ci_low;
  r.ci_high = ci.ci_high;
  r.cv_mean = chosen.mean_auroc;
  r.cv_std = chosen.std_auroc;
  r.perm_p = perm.p;
  r.n_boot = options.n_boot;
  r.n_perm = options.n_perm;
  r.n_boot_skipped = ci.n_skipped;
  r.verdict = classify_verdict(r.ci_low, r.ci_high, r.perm_p);
  return r;
}

}  // namespace hnt
