#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hnt/feature_store.hpp"
#include "hnt/sparse_logreg.hpp"

namespace hnt {

/// Probability that a random positive outranks a random negative, ties
/// counted 1/2 (midranks). O(n log n). Throws UndefinedMetricError when a
/// class is missing.
double auroc(std::span<const double> scores, std::span<const int> labels);

struct TransferCell {
  std::optional<double> auroc;  // empty when the target test set is single-class
  std::size_t n_test = 0;

  bool valid() const { return auroc.has_value(); }
  bool operator==(const TransferCell&) const = default;
};

/// D x D grid; row = source (probe) domain, column = target domain.
struct TransferMatrix {
  std::vector<std::string> domains;
  std::vector<TransferCell> cells;  // row-major
  std::string model_id;
  Strategy strategy = Strategy::kDirect;
  std::vector<std::string> warnings;

  std::size_t size() const { return domains.size(); }
  const TransferCell& at(std::size_t i, std::size_t j) const { return cells[i * size() + j]; }
  TransferCell& at(std::size_t i, std::size_t j) { return cells[i * size() + j]; }
  double value(std::size_t i, std::size_t j) const;
  static bool is_within(std::size_t i, std::size_t j) { return i == j; }
  std::size_t index_of(const std::string& domain) const;

  void validate() const;

  /// Convenience constructor from a dense grid of AUROCs (n_test = 0).
  static TransferMatrix from_values(std::vector<std::string> domains,
                                    const std::vector<std::vector<double>>& values,
                                    std::string model_id = {},
                                    Strategy strategy = Strategy::kDirect);
};

struct GapResult {
  double mean_within = 0.0;
  double mean_cross = 0.0;
  double delta = 0.0;
  std::vector<double> within_values;
  std::vector<double> cross_values;
  std::size_t n_excluded = 0;
};

/// Every probe scored on every domain's test set, in `domains` order.
TransferMatrix build_transfer_matrix(const std::vector<std::string>& domains,
                                     const std::map<std::string, ProbeModel>& probes,
                                     const std::map<std::string, FeatureSet>& test_sets);

/// Mean diagonal minus mean off-diagonal AUROC; invalid cells excluded with
/// renormalized denominators.
GapResult transfer_gap(const TransferMatrix& matrix);

/// Cellwise mean of valid AUROCs, n_test summed. Domain lists must agree.
TransferMatrix aggregate_matrices(std::span<const TransferMatrix> matrices);

enum class PairKind { kOrdinary, kBelowChance, kPartialTransfer };
std::string_view to_string(PairKind k);

struct PairFlag {
  std::string source;
  std::string target;
  double auroc = 0.0;
  PairKind kind = PairKind::kOrdinary;
};

struct PairDiagnostics {
  double chance_band = 0.05;
  double mean_cross = 0.0;
  std::vector<PairFlag> pairs;   // off-diagonal cells, row-major
  std::vector<PairFlag> ranked;  // same cells, best to worst
};

inline constexpr double kDefaultChanceBand = 0.05;

PairDiagnostics pair_diagnostics(const TransferMatrix& matrix,
                                 double chance_band = kDefaultChanceBand);

/// Header "source,<targets...>", one row per source, 3-decimal AUROCs,
/// "NA" for invalid cells.
std::string to_csv(const TransferMatrix& matrix);
TransferMatrix transfer_matrix_from_csv(const std::string& text, std::string model_id = {},
                                        Strategy strategy = Strategy::kDirect);

void to_json(nlohmann::json& j, const TransferMatrix& m);
void from_json(const nlohmann::json& j, TransferMatrix& m);
void to_json(nlohmann::json& j, const GapResult& g);

}  // namespace hnt
