#include "hnt/intervention_stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <tuple>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "hnt/error.hpp"
#include "hnt/parallel.hpp"

namespace hnt {

std::string_view to_string(Condition c) {
  return c == Condition::kHNeuron ? "hneuron" : "random_control";
}

std::string_view to_string(Relation r) { return r == Relation::kWithin ? "within" : "cross"; }

Condition parse_condition(std::string_view text) {
  if (text == "hneuron") return Condition::kHNeuron;
  if (text == "random_control") return Condition::kRandomControl;
  throw FormatError("unknown condition '" + std::string(text) + "'");
}

Relation parse_relation(std::string_view text) {
  if (text == "within") return Relation::kWithin;
  if (text == "cross") return Relation::kCross;
  throw FormatError("unknown target_relation '" + std::string(text) + "'");
}

void to_json(nlohmann::json& j, const InterventionRecord& r) {
  j = nlohmann::json{{"sample_id", r.sample_id},
                     {"domain", r.domain},
                     {"condition", to_string(r.condition)},
                     {"scale", r.scale},
                     {"baseline_halluc", r.baseline_halluc},
                     {"intervened_halluc", r.intervened_halluc},
                     {"target_relation", to_string(r.target_relation)}};
}

void from_json(const nlohmann::json& j, InterventionRecord& r) {
  r.sample_id = j.at("sample_id").get<std::string>();
  r.domain = j.at("domain").get<std::string>();
  r.condition = parse_condition(j.at("condition").get<std::string>());
  r.scale = j.at("scale").get<double>();
  if (!j.contains("baseline_halluc") || j["baseline_halluc"].is_null()) {
    throw FormatError("record '" + r.sample_id + "' has no baseline outcome");
  }
  r.baseline_halluc = j["baseline_halluc"].get<int>();
  r.intervened_halluc = j.at("intervened_halluc").get<int>();
  r.target_relation = parse_relation(j.at("target_relation").get<std::string>());
  for (int v : {r.baseline_halluc, r.intervened_halluc}) {
    if (v != 0 && v != 1) throw FormatError("record '" + r.sample_id + "': outcome not 0/1");
  }
}

std::vector<InterventionRecord> read_intervention_records(const std::filesystem::path& path,
                                                          std::span<const double> allowed_scales) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open intervention records " + path.string());
  std::vector<InterventionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    InterventionRecord r;
    try {
      r = nlohmann::json::parse(line).get<InterventionRecord>();
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    const bool allowed = std::any_of(allowed_scales.begin(), allowed_scales.end(), [&](double s) {
      return std::abs(s - r.scale) <= kScaleMatchTol;
    });
    if (!allowed) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": scale " +
                        std::to_string(r.scale) + " not in the configured scale set");
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_intervention_records(std::span<const InterventionRecord> records,
                                const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : records) out << nlohmann::json(r).dump() << '\n';
}

PairedT paired_t_test(std::span<const double> d) {
  if (d.size() < 2) throw DataError("paired t-test needs at least two pairs");
  PairedT r;
  const double n = static_cast<double>(d.size());
  r.mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : d) ss += (x - r.mean) * (x - r.mean);
  r.sd = std::sqrt(ss / (n - 1.0));
  r.df = n - 1.0;
  if (!(r.sd > 0.0)) {
    r.degenerate = true;
    r.p = 1.0;
    return r;
  }
  r.t = r.mean / (r.sd / std::sqrt(n));
  boost::math::students_t dist(r.df);
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  r.p = std::min(1.0, r.p);
  return r;
}

double mcnemar_p(std::size_t n_up, std::size_t n_down) {
  const double b = static_cast<double>(n_up), c = static_cast<double>(n_down);
  if (b + c == 0.0) return 1.0;
  const double num = std::max(0.0, std::abs(b - c) - 1.0);
  const double chi2 = num * num / (b + c);
  boost::math::chi_squared dist(1.0);
  return boost::math::cdf(boost::math::complement(dist, chi2));
}

void to_json(nlohmann::json& j, const EffectReport& r) {
  j = nlohmann::json{{"scale", r.scale},
                     {"condition", to_string(r.condition)},
                     {"relation", to_string(r.relation)},
                     {"n", r.n},
                     {"baseline_rate", r.baseline_rate},
                     {"intervened_rate", r.intervened_rate},
                     {"delta_rate", r.delta_rate},
                     {"t_stat", r.t_stat},
                     {"p_value", r.p_value},
                     {"degenerate", r.degenerate},
                     {"n_up", r.n_up},
                     {"n_down", r.n_down},
                     {"mcnemar_p", r.mcnemar_p}};
}

EffectReport intervention_effect(std::span<const InterventionRecord> records, double scale,
                                 Condition condition, Relation relation) {
  EffectReport r;
  r.scale = scale;
  r.condition = condition;
  r.relation = relation;
  std::vector<double> diffs;
  std::size_t base = 0, inter = 0;
  for (const auto& rec : records) {
    if (rec.condition != condition || rec.target_relation != relation ||
        std::abs(rec.scale - scale) > kScaleMatchTol) {
      continue;
    }
    diffs.push_back(static_cast<double>(rec.intervened_halluc - rec.baseline_halluc));
    base += static_cast<std::size_t>(rec.baseline_halluc);
    inter += static_cast<std::size_t>(rec.intervened_halluc);
    r.n_up += rec.baseline_halluc == 0 && rec.intervened_halluc == 1;
    r.n_down += rec.baseline_halluc == 1 && rec.intervened_halluc == 0;
  }
  const std::string cell = "scale " + std::to_string(scale) + ", " +
                           std::string(to_string(condition)) + ", " +
                           std::string(to_string(relation));
  if (diffs.empty()) throw DataError("no intervention records match " + cell);
  if (diffs.size() < 2) throw DataError("fewer than two paired records for " + cell);
  r.n = diffs.size();
  const double n = static_cast<double>(r.n);
  r.baseline_rate = static_cast<double>(base) / n;
  r.intervened_rate = static_cast<double>(inter) / n;
  const auto t = paired_t_test(diffs);
  r.delta_rate = t.mean;
  r.t_stat = t.t;
  r.p_value = t.p;
  r.degenerate = t.degenerate;
  r.mcnemar_p = mcnemar_p(r.n_up, r.n_down);
  return r;
}

std::vector<EffectReport> analyze_interventions(std::span<const InterventionRecord> records) {
  std::vector<std::tuple<double, Condition, Relation>> cells;
  for (const auto& rec : records) {
    const auto key = std::tuple{rec.scale, rec.condition, rec.target_relation};
    const bool seen = std::any_of(cells.begin(), cells.end(), [&](const auto& c) {
      return std::get<1>(c) == rec.condition && std::get<2>(c) == rec.target_relation &&
             std::abs(std::get<0>(c) - rec.scale) <= kScaleMatchTol;
    });
    if (!seen) cells.push_back(key);
  }
  std::sort(cells.begin(), cells.end());
  std::vector<EffectReport> out(cells.size());
  parallel_for(cells.size(), [&](std::size_t k) {
    const auto& [s, c, r] = cells[k];
    out[k] = intervention_effect(records, s, c, r);
  });
  return out;
}

ControlSummary control_comparison(std::span<const EffectReport> reports) {
  const bool has_h = std::any_of(reports.begin(), reports.end(),
                                 [](const auto& r) { return r.condition == Condition::kHNeuron; });
  const bool has_r = std::any_of(reports.begin(), reports.end(), [](const auto& r) {
    return r.condition == Condition::kRandomControl;
  });
  if (!has_h) throw DataError("control comparison: no hneuron reports");
  if (!has_r) throw DataError("control comparison: no random_control reports");

  ControlSummary s;
  for (const auto& rep : reports) {
    auto it = std::find_if(s.rows.begin(), s.rows.end(), [&](const ControlRow& row) {
      return std::abs(row.scale - rep.scale) <= kScaleMatchTol;
    });
    if (it == s.rows.end()) {
      s.rows.push_back(ControlRow{rep.scale, {}, {}, {}, {}});
      it = s.rows.end() - 1;
    }
    const bool h = rep.condition == Condition::kHNeuron;
    const bool w = rep.relation == Relation::kWithin;
    auto& slot = h ? (w ? it->hneuron_within : it->hneuron_cross)
                   : (w ? it->random_within : it->random_cross);
    slot = rep.delta_rate;
    const double a = std::abs(rep.delta_rate);
    (h ? s.max_abs_hneuron : s.max_abs_random) =
        std::max(h ? s.max_abs_hneuron : s.max_abs_random, a);
    s.max_abs_delta = std::max(s.max_abs_delta, a);
    s.any_significant = s.any_significant || rep.p_value < 0.05;
  }
  std::sort(s.rows.begin(), s.rows.end(),
            [](const ControlRow& a, const ControlRow& b) { return a.scale < b.scale; });
  return s;
}

void to_json(nlohmann::json& j, const ControlSummary& s) {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  j = nlohmann::json::object();
  auto& rows = j["rows"] = nlohmann::json::array();
  for (const auto& r : s.rows) {
    rows.push_back({{"scale", r.scale},
                    {"hneuron_within", opt(r.hneuron_within)},
                    {"hneuron_cross", opt(r.hneuron_cross)},
                    {"random_within", opt(r.random_within)},
                    {"random_cross", opt(r.random_cross)}});
  }
  j["max_abs_hneuron"] = s.max_abs_hneuron;
  j["max_abs_random"] = s.max_abs_random;
  j["max_abs_delta"] = s.max_abs_delta;
  j["any_significant"] = s.any_significant;
}

}  // namespace hnt
