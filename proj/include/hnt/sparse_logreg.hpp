#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hnt/feature_store.hpp"

namespace hnt {

struct FeatureWeight {
  std::size_t index = 0;
  double value = 0.0;

  bool operator==(const FeatureWeight&) const = default;
};

struct FeatureScaling {
  std::size_t index = 0;
  double mean = 0.0;
  double std = 1.0;

  bool operator==(const FeatureScaling&) const = default;
};

/// Sparse linear probe. `weights` holds exactly the nonzero coefficients on
/// standardized inputs and `standardization` the fit-time mean/std of the
/// same features; both ascend by index.
struct ProbeModel {
  std::vector<FeatureWeight> weights;
  std::vector<FeatureScaling> standardization;
  double intercept = 0.0;
  double reg_strength = 1.0;
  std::uint64_t seed = 0;
  std::string source_domain;
  std::size_t n_features = 0;
  bool converged = true;
  std::size_t n_iter = 0;

  bool operator==(const ProbeModel&) const = default;
};

void to_json(nlohmann::json& j, const ProbeModel& m);
void from_json(const nlohmann::json& j, ProbeModel& m);

struct HNeuron {
  std::size_t layer = 0;
  std::size_t neuron = 0;
  double coefficient = 0.0;

  auto operator<=>(const HNeuron& o) const {
    if (auto c = layer <=> o.layer; c != 0) return c;
    return neuron <=> o.neuron;
  }
  bool operator==(const HNeuron& o) const {
    return layer == o.layer && neuron == o.neuron;
  }
};

/// Neurons behind a probe's nonzero weights, sorted by (layer, neuron).
struct HNeuronSet {
  std::vector<HNeuron> entries;
  std::size_t n_layers = 0;
  std::size_t d_ff = 0;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

struct SolverOptions {
  double tol = 1e-5;
  std::size_t max_iter = 2000;
};

inline const std::vector<double> kDefaultGrid = {0.001, 0.01, 0.1, 1.0, 10.0};
inline constexpr std::size_t kDefaultFolds = 5;

/// Minimizes mean logistic loss + (1/C) * ||w||_1 over standardized features
/// with cyclic coordinate descent (intercept unpenalized). Zero-variance
/// columns are excluded and can never be selected. Throws DataError when y
/// has a single class; hitting max_iter sets `converged = false`.
ProbeModel fit_l1_logreg(MatrixView X, std::span<const int> y, double C,
                         const SolverOptions& options = {},
                         std::uint64_t seed = 0);

/// Objective value of `model` on (X, y), evaluated with the model's own
/// standardization. Used by tests and convergence diagnostics.
double l1_logreg_objective(const ProbeModel& model, MatrixView X,
                           std::span<const int> y);

struct CvGridPoint {
  double C = 0.0;
  double mean_auroc = 0.0;
  double std_auroc = 0.0;
  std::vector<double> fold_aurocs;
};

struct CvSelection {
  double chosen_C = 0.0;
  std::vector<CvGridPoint> per_C;  // ascending C
  std::size_t n_folds = 0;
  std::vector<std::size_t> skipped_folds;
  std::vector<std::string> warnings;

  const CvGridPoint& chosen() const;
};

/// Stratified k-fold selection of C by mean out-of-fold AUROC; ties go to
/// the smaller C.
CvSelection cross_validate_select(MatrixView X, std::span<const int> y,
                                  std::span<const double> grid = kDefaultGrid,
                                  std::size_t n_folds = kDefaultFolds,
                                  std::uint64_t seed = 0,
                                  const SolverOptions& options = {});

/// Assigns rows to stratified folds; exposed for oracles that refit folds.
std::vector<std::size_t> stratified_folds(std::span<const int> y,
                                          std::size_t n_folds,
                                          std::uint64_t seed);

/// logistic(intercept + sum_j w_j * (x_j - mean_j) / std_j), touching only
/// the stored features.
std::vector<double> predict_scores(const ProbeModel& model, MatrixView X);

/// Flat index i -> (i / d_ff, i % d_ff).
HNeuronSet selected_neurons(const ProbeModel& model, std::size_t d_ff);

}  // namespace hnt
