#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "hnt/feature_store.hpp"
#include "hnt/sparse_logreg.hpp"
#include "hnt/transfer_eval.hpp"

namespace hnt {

inline constexpr std::size_t kDefaultBootstrap = 1000;
inline constexpr std::size_t kDefaultExperimentPerms = 20;
inline constexpr std::size_t kDefaultGapPerms = 10000;
inline constexpr std::size_t kMaxBootstrapRedraws = 100;

/// Linear-interpolation percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);

struct BootstrapResample {
  std::vector<std::size_t> indices;  // empty when every redraw was single-class
  std::size_t redraws = 0;
  bool skipped() const { return indices.empty(); }
};

/// Resample `iteration` of a bootstrap with root `seed`. Single-class draws
/// are redrawn from the same stream up to kMaxBootstrapRedraws times.
BootstrapResample bootstrap_resample(std::span<const int> labels, std::uint64_t seed,
                                     std::size_t iteration);

struct BootstrapCI {
  double point = 0.0;  // AUROC on the full sample
  double ci_low = 0.0;
  double ci_high = 0.0;
  double boot_mean = 0.0;
  std::size_t n_boot = 0;
  std::size_t n_used = 0;
  std::size_t n_redrawn = 0;
  std::size_t n_skipped = 0;
};

/// 95% percentile interval over resample AUROCs.
BootstrapCI bootstrap_auroc_ci(std::span<const double> scores, std::span<const int> labels,
                               std::size_t n_boot = kDefaultBootstrap, std::uint64_t seed = 0);

/// Everything one split -> CV-select -> fit -> test-AUROC run needs.
struct TrainConfig {
  std::vector<double> grid = kDefaultGrid;
  std::size_t n_folds = kDefaultFolds;
  double test_fraction = kDefaultTestFraction;
  SolverOptions solver;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const TrainConfig& c);

struct ExperimentResult {
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
  CvSelection cv;
  ProbeModel probe;
  std::vector<double> test_scores;
  std::vector<int> test_labels;
  double test_auroc = 0.0;
};

ExperimentResult run_experiment(MatrixView X, std::span<const int> y, const TrainConfig& config);

struct PermutationResult {
  double p = 1.0;
  double observed = 0.0;
  std::size_t n_perm = 0;
  std::size_t n_at_least = 0;  // permuted statistic >= observed
  bool add_one = false;
  std::vector<double> null_values;
};

/// Permutation p from a count; plain count/n, or (count+1)/(n+1) when add_one.
double permutation_p(std::size_t n_at_least, std::size_t n_perm, bool add_one);

/// Labels permuted and run_experiment repeated per permutation. The observed
/// statistic is run_experiment on the true labels.
PermutationResult permutation_test_experiment(MatrixView X, std::span<const int> y,
                                              const TrainConfig& config,
                                              std::size_t n_perm = kDefaultExperimentPerms,
                                              std::uint64_t seed = 0, bool add_one = false);

/// Same, with the observed statistic supplied (avoids refitting it).
PermutationResult permutation_test_experiment(MatrixView X, std::span<const int> y,
                                              const TrainConfig& config, double observed,
                                              std::size_t n_perm, std::uint64_t seed,
                                              bool add_one = false);

/// kCells: all D^2 AUROCs shuffled over positions. kRowsColumns: independent
/// permutations of row and column domain labels (p cannot fall below 1/D!).
enum class GapPermScheme { kCells, kRowsColumns };
std::string_view to_string(GapPermScheme s);
GapPermScheme parse_gap_scheme(std::string_view text);

struct GapPermutationResult {
  double p = 1.0;
  double observed_delta = 0.0;
  std::size_t n_perm = 0;
  std::size_t n_at_least = 0;
  GapPermScheme scheme = GapPermScheme::kCells;
  bool add_one = false;
};

/// Requires every cell valid. A permutation counts when its delta is within
/// 1e-12 of, or above, the observed delta.
GapPermutationResult permutation_test_gap(const TransferMatrix& matrix,
                                          std::size_t n_perm = kDefaultGapPerms,
                                          std::uint64_t seed = 0,
                                          GapPermScheme scheme = GapPermScheme::kCells,
                                          bool add_one = false);

void to_json(nlohmann::json& j, const GapPermutationResult& r);

struct BhResult {
  std::vector<bool> rejected;   // input order
  std::vector<double> adjusted; // step-up adjusted p-values, input order
  std::size_t k = 0;            // number rejected = largest rank passing
  double threshold = 0.0;       // k * alpha / m (0 when k = 0)
};

BhResult bh_fdr(std::span<const double> pvalues, double alpha = 0.05);

/// (mean_a - mean_b) / pooled SD with (n - 1) weights. Throws
/// UndefinedMetricError on zero pooled variance or groups of size < 2.
double cohens_d(std::span<const double> a, std::span<const double> b);

struct StabilityReport {
  std::vector<double> pairwise_jaccard;
  double mean = 0.0;
  double std = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t n_seeds = 0;
  std::size_t n_empty_pairs = 0;  // both sets empty, scored 1.0
};

double jaccard(const HNeuronSet& a, const HNeuronSet& b);
StabilityReport jaccard_stability(std::span<const HNeuronSet> sets);

void to_json(nlohmann::json& j, const StabilityReport& r);

enum class Verdict { kRobust, kWeak };
std::string_view to_string(Verdict v);
Verdict parse_verdict(std::string_view text);

inline constexpr double kVerdictAlpha = 0.05;

/// ROBUST iff ci_low > 0.5 and perm_p < 0.05.
Verdict classify_verdict(double ci_low, double ci_high, double perm_p);

struct RobustnessReport {
  std::string model;
  std::string domain;
  Strategy strategy = Strategy::kDirect;
  double auroc_point = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double cv_mean = 0.0;
  double cv_std = 0.0;
  double perm_p = 1.0;
  std::size_t n_boot = 0;
  std::size_t n_perm = 0;
  std::size_t n_boot_skipped = 0;
  Verdict verdict = Verdict::kWeak;
};

void to_json(nlohmann::json& j, const RobustnessReport& r);
void from_json(const nlohmann::json& j, RobustnessReport& r);

struct RobustnessOptions {
  std::size_t n_boot = kDefaultBootstrap;
  std::size_t n_perm = kDefaultExperimentPerms;
  bool add_one = false;
};

/// Bootstrap and label permutation around an already-run experiment.
RobustnessReport assess_experiment(const ExperimentResult& experiment, MatrixView X,
                                   std::span<const int> y, const TrainConfig& config,
                                   const RobustnessOptions& options, std::uint64_t seed);

}  // namespace hnt
