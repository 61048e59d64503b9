#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace hnt {

enum class Condition { kHNeuron, kRandomControl };
enum class Relation { kWithin, kCross };

std::string_view to_string(Condition c);
std::string_view to_string(Relation r);
Condition parse_condition(std::string_view text);
Relation parse_relation(std::string_view text);

inline const std::vector<double> kDefaultScales = {0.0, 0.5, 1.5, 2.0, 3.0};

/// One question answered with and without activation scaling.
/// *_halluc: 1 = hallucinated.
struct InterventionRecord {
  std::string sample_id;
  std::string domain;
  Condition condition = Condition::kHNeuron;
  double scale = 0.0;
  int baseline_halluc = 0;
  int intervened_halluc = 0;
  Relation target_relation = Relation::kWithin;

  bool operator==(const InterventionRecord&) const = default;
};

void to_json(nlohmann::json& j, const InterventionRecord& r);
void from_json(const nlohmann::json& j, InterventionRecord& r);

/// JSON lines. Reader errors name the offending line; scales outside
/// `allowed_scales` are rejected.
std::vector<InterventionRecord> read_intervention_records(
    const std::filesystem::path& path, std::span<const double> allowed_scales = kDefaultScales);
void write_intervention_records(std::span<const InterventionRecord> records,
                                const std::filesystem::path& path);

struct PairedT {
  double mean = 0.0;
  double sd = 0.0;  // sample SD of differences
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;   // two-sided
  bool degenerate = false;
};

/// One-sample t on the differences; zero variance gives p = 1, degenerate.
PairedT paired_t_test(std::span<const double> differences);

/// Continuity-corrected McNemar chi-square (1 df) from the discordant
/// counts. p = 1 when there are none.
double mcnemar_p(std::size_t n_up, std::size_t n_down);

struct EffectReport {
  double scale = 0.0;
  Condition condition = Condition::kHNeuron;
  Relation relation = Relation::kWithin;
  std::size_t n = 0;
  double baseline_rate = 0.0;
  double intervened_rate = 0.0;
  double delta_rate = 0.0;
  double t_stat = 0.0;
  double p_value = 1.0;
  bool degenerate = false;
  std::size_t n_up = 0;    // 0 -> 1
  std::size_t n_down = 0;  // 1 -> 0
  double mcnemar_p = 1.0;
};

void to_json(nlohmann::json& j, const EffectReport& r);

inline constexpr double kScaleMatchTol = 1e-9;

/// Throws DataError when fewer than two records match the cell.
EffectReport intervention_effect(std::span<const InterventionRecord> records, double scale,
                                 Condition condition, Relation relation);

/// One report per (scale, condition, relation) cell that has records,
/// ordered by scale, then condition, then relation.
std::vector<EffectReport> analyze_interventions(std::span<const InterventionRecord> records);

struct ControlRow {
  double scale = 0.0;
  std::optional<double> hneuron_within;
  std::optional<double> hneuron_cross;
  std::optional<double> random_within;
  std::optional<double> random_cross;
};

struct ControlSummary {
  std::vector<ControlRow> rows;  // ascending scale
  double max_abs_hneuron = 0.0;
  double max_abs_random = 0.0;
  double max_abs_delta = 0.0;
  bool any_significant = false;  // any paired p < 0.05
};

/// Throws DataError when either condition is absent.
ControlSummary control_comparison(std::span<const EffectReport> reports);

void to_json(nlohmann::json& j, const ControlSummary& s);

}  // namespace hnt
