#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hnt/feature_store.hpp"
#include "hnt/robustness.hpp"
#include "hnt/sparse_logreg.hpp"
#include "hnt/transfer_eval.hpp"

namespace hnt {

struct RunConfig {
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> stability_seeds;  // >= 2 entries enables Jaccard refits
  std::vector<double> grid = kDefaultGrid;
  std::size_t folds = kDefaultFolds;
  double tol = 1e-5;
  std::size_t max_iter = 2000;
  std::size_t n_boot = kDefaultBootstrap;
  std::size_t n_perm = kDefaultExperimentPerms;
  std::size_t n_gap_perm = kDefaultGapPerms;
  bool add_one = false;
  GapPermScheme gap_scheme = GapPermScheme::kCells;
  double test_fraction = kDefaultTestFraction;
  double chance_band = kDefaultChanceBand;
  double bh_alpha = 0.05;
  Strategy strategy = Strategy::kDirect;
  std::vector<std::string> domains;  // matrix order; empty = sorted discovered domains
  std::optional<double> model_size_b;

  /// Throws UsageError naming the first out-of-range parameter.
  void validate() const;
  /// Per-domain training parameters; the seed is derived from (seed, domain).
  TrainConfig train_config(const std::string& domain) const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Re-raises errors from `stage` with a "[stage] " prefix, keeping the
/// category (usage / data / numerical) so exit codes survive.
[[noreturn]] void rethrow_with_stage(const std::string& stage);

/// Loads every *.cett file in `dir` whose strategy matches, keyed by domain.
/// All sets must share model_id; duplicate domains are a DataError.
std::map<std::string, FeatureSet> load_feature_dir(const std::filesystem::path& dir,
                                                   Strategy strategy);

struct DomainRun {
  std::string domain;
  ExperimentResult experiment;
  RobustnessReport robustness;
  HNeuronSet neurons;
  std::optional<StabilityReport> stability;
};

struct ModelGap {
  std::string model;
  double within = 0.0;
  double cross = 0.0;
  double delta = 0.0;
  std::optional<double> size_b;
};

struct CotTriplet {
  std::string model;
  std::string domain;
  double direct = 0.0;
  double cot = 0.0;
  bool cached = false;
};

struct PlotData {
  std::optional<TransferMatrix> heatmap;
  std::vector<ModelGap> bars;
  std::vector<CotTriplet> cot;
};

struct PlotFiles {
  std::map<std::string, std::string> files;  // name -> TSV text
  std::vector<std::string> notices;
};

/// heatmap.tsv, bars.tsv, direct_vs_cot.tsv and gap_vs_size.tsv; inputs that
/// are empty produce a notice instead of a file.
PlotFiles emit_plot_data(const PlotData& data);

struct Bundle {
  nlohmann::json run;
  std::vector<TransferMatrix> matrices;
  nlohmann::json gap;
  nlohmann::json robustness;
  std::map<std::string, ProbeModel> probes;
  nlohmann::json diagnostics;
  PlotData plot;
  std::map<std::string, std::string> extra_files;  // relative path -> content
};

struct PipelineResult {
  Bundle bundle;
  std::vector<DomainRun> runs;
  TransferMatrix matrix;
  GapResult gap;
  std::optional<GapPermutationResult> gap_perm;
};

/// split -> CV-select -> fit -> transfer matrix -> gap -> robustness -> verdicts.
PipelineResult run_pipeline(const RunConfig& config, const std::filesystem::path& feature_dir);

/// Writes into a sibling temporary directory, then renames over `out_dir`.
/// An existing `out_dir` is only replaced when it holds a run.json.
void write_bundle(const Bundle& bundle, const std::filesystem::path& out_dir);

/// op "approx": |actual - expected| <= tolerance. op "below": actual < expected.
struct ReplayCheck {
  std::string name;
  std::string op = "approx";
  double expected = 0.0;
  double actual = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

void to_json(nlohmann::json& j, const ReplayCheck& c);

struct ReplayReport {
  std::vector<ReplayCheck> checks;
  std::vector<TransferMatrix> matrices;
  TransferMatrix mean;
  Bundle bundle;

  bool all_pass() const;
  std::size_t n_failed() const;
};

/// Recomputes the published aggregates from fixture_dir and checks each.
/// Optional fixtures (probe scores, bootstrap scores, probes, intervention
/// records, robustness rows, direct/CoT table) add checks when present.
ReplayReport replay_fixtures(const std::filesystem::path& fixture_dir);

/// Shortest round-trip decimal text.
std::string format_double(double v);

}  // namespace hnt
