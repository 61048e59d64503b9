#include "hnt/transfer_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "hnt/error.hpp"
#include "hnt/parallel.hpp"

namespace hnt {

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw InvariantError("auroc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of midranks (1-based) of the positives.
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw UndefinedMetricError("AUROC is undefined: labels contain a single class");
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * nn);
}

double TransferMatrix::value(std::size_t i, std::size_t j) const {
  const auto& c = at(i, j);
  if (!c.auroc) {
    throw InvariantError("cell " + domains[i] + "->" + domains[j] + " is invalid");
  }
  return *c.auroc;
}

std::size_t TransferMatrix::index_of(const std::string& domain) const {
  auto it = std::find(domains.begin(), domains.end(), domain);
  if (it == domains.end()) throw DataError("domain '" + domain + "' not in matrix");
  return static_cast<std::size_t>(it - domains.begin());
}

void TransferMatrix::validate() const {
  if (domains.size() < 2) throw InvariantError("transfer matrix needs D >= 2 domains");
  if (cells.size() != domains.size() * domains.size()) {
    throw InvariantError("transfer matrix is not square");
  }
  for (const auto& c : cells) {
    if (c.auroc && !(std::isfinite(*c.auroc) && *c.auroc >= 0.0 && *c.auroc <= 1.0)) {
      throw InvariantError("transfer matrix AUROC outside [0, 1]");
    }
  }
}

TransferMatrix TransferMatrix::from_values(std::vector<std::string> domains,
                                           const std::vector<std::vector<double>>& values,
                                           std::string model_id, Strategy strategy) {
  TransferMatrix m;
  m.domains = std::move(domains);
  m.model_id = std::move(model_id);
  m.strategy = strategy;
  if (values.size() != m.domains.size()) throw InvariantError("value grid row count mismatch");
  for (const auto& row : values) {
    if (row.size() != m.domains.size()) throw InvariantError("value grid is not square");
    for (double v : row) m.cells.push_back({v, 0});
  }
  m.validate();
  return m;
}

TransferMatrix build_transfer_matrix(const std::vector<std::string>& domains,
                                     const std::map<std::string, ProbeModel>& probes,
                                     const std::map<std::string, FeatureSet>& test_sets) {
  if (probes.size() != domains.size() || test_sets.size() != domains.size()) {
    throw DataError("probe and test-set domain keys must match the domain list");
  }
  for (const auto& d : domains) {
    if (!probes.count(d)) throw DataError("missing probe for domain '" + d + "'");
    if (!test_sets.count(d)) throw DataError("missing test set for domain '" + d + "'");
  }
  const std::size_t D = domains.size();
  TransferMatrix m;
  m.domains = domains;
  m.cells.resize(D * D);
  const auto& first = test_sets.at(domains.front());
  m.model_id = first.model_id;
  m.strategy = first.strategy;

  std::vector<std::vector<int>> labels(D);
  std::vector<char> two_class(D);
  for (std::size_t j = 0; j < D; ++j) {
    const auto& t = test_sets.at(domains[j]);
    labels[j] = t.labels();
    two_class[j] = t.count_label(0) > 0 && t.count_label(1) > 0;
    if (!two_class[j]) {
      m.warnings.push_back("test set '" + domains[j] +
                           "' has a single class; its column is invalid and excluded");
    }
  }
  parallel_for(D * D, [&](std::size_t t) {
    const std::size_t i = t / D, j = t % D;
    const auto& test = test_sets.at(domains[j]);
    auto& cell = m.cells[t];
    cell.n_test = test.n_samples();
    if (!two_class[j]) return;
    cell.auroc = auroc(predict_scores(probes.at(domains[i]), test.matrix()), labels[j]);
  });
  return m;
}

GapResult transfer_gap(const TransferMatrix& matrix) {
  const std::size_t D = matrix.size();
  if (D < 2) throw InvariantError("transfer gap needs D >= 2");
  GapResult g;
  for (std::size_t i = 0; i < D; ++i) {
    for (std::size_t j = 0; j < D; ++j) {
      const auto& c = matrix.at(i, j);
      if (!c.auroc) {
        ++g.n_excluded;
        continue;
      }
      (i == j ? g.within_values : g.cross_values).push_back(*c.auroc);
    }
  }
  if (g.within_values.empty() || g.cross_values.empty()) {
    throw DataError("transfer gap undefined: no valid within or cross cells");
  }
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  g.mean_within = mean(g.within_values);
  g.mean_cross = mean(g.cross_values);
  g.delta = g.mean_within - g.mean_cross;
  return g;
}

TransferMatrix aggregate_matrices(std::span<const TransferMatrix> matrices) {
  if (matrices.empty()) throw UsageError("nothing to aggregate");
  const auto& ref = matrices.front();
  const std::size_t D = ref.size();
  for (const auto& m : matrices) {
    if (m.domains != ref.domains) {
      throw DataError("cannot aggregate: domain order of '" + m.model_id +
                      "' differs from '" + ref.model_id + "'");
    }
  }
  TransferMatrix out;
  out.domains = ref.domains;
  out.strategy = ref.strategy;
  out.model_id = "mean";
  out.cells.resize(D * D);
  for (std::size_t t = 0; t < D * D; ++t) {
    double sum = 0.0;
    std::size_t k = 0;
    for (const auto& m : matrices) {
      out.cells[t].n_test += m.cells[t].n_test;
      if (m.cells[t].auroc) {
        sum += *m.cells[t].auroc;
        ++k;
      }
    }
    if (k > 0) out.cells[t].auroc = sum / static_cast<double>(k);
  }
  return out;
}

std::string_view to_string(PairKind k) {
  switch (k) {
    case PairKind::kBelowChance: return "below_chance";
    case PairKind::kPartialTransfer: return "partial_transfer";
    default: return "ordinary";
  }
}

PairDiagnostics pair_diagnostics(const TransferMatrix& matrix, double chance_band) {
  matrix.validate();
  PairDiagnostics diag;
  diag.chance_band = chance_band;
  diag.mean_cross = transfer_gap(matrix).mean_cross;
  const std::size_t D = matrix.size();
  for (std::size_t i = 0; i < D; ++i) {
    for (std::size_t j = 0; j < D; ++j) {
      if (i == j || !matrix.at(i, j).valid()) continue;
      PairFlag f{matrix.domains[i], matrix.domains[j], matrix.value(i, j), PairKind::kOrdinary};
      if (f.auroc < 0.5 - chance_band) {
        f.kind = PairKind::kBelowChance;
      } else if (f.auroc > diag.mean_cross + chance_band) {
        f.kind = PairKind::kPartialTransfer;
      }
      diag.pairs.push_back(std::move(f));
    }
  }
  diag.ranked = diag.pairs;
  std::stable_sort(diag.ranked.begin(), diag.ranked.end(),
                   [](const PairFlag& a, const PairFlag& b) { return a.auroc > b.auroc; });
  return diag;
}

std::string to_csv(const TransferMatrix& matrix) {
  std::ostringstream out;
  out << "source";
  for (const auto& d : matrix.domains) out << ',' << d;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    out << matrix.domains[i];
    for (std::size_t j = 0; j < matrix.size(); ++j) {
      const auto& c = matrix.at(i, j);
      if (c.auroc) {
        std::snprintf(buf, sizeof(buf), "%.3f", *c.auroc);
        out << ',' << buf;
      } else {
        out << ",NA";
      }
    }
    out << '\n';
  }
  return out.str();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    out.push_back(field);
  }
  return out;
}

}  // namespace

TransferMatrix transfer_matrix_from_csv(const std::string& text, std::string model_id,
                                        Strategy strategy) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    rows.push_back(split_csv_line(line));
  }
  if (rows.size() < 3) throw FormatError("transfer CSV needs a header and >= 2 rows");
  TransferMatrix m;
  m.model_id = std::move(model_id);
  m.strategy = strategy;
  m.domains.assign(rows[0].begin() + 1, rows[0].end());
  const std::size_t D = m.domains.size();
  if (rows.size() != D + 1) {
    throw FormatError("transfer CSV has " + std::to_string(rows.size() - 1) +
                      " source rows for " + std::to_string(D) + " targets");
  }
  for (std::size_t i = 0; i < D; ++i) {
    const auto& r = rows[i + 1];
    if (r.size() != D + 1) throw FormatError("transfer CSV row " + std::to_string(i + 1) +
                                             " has the wrong number of fields");
    if (r[0] != m.domains[i]) {
      throw FormatError("transfer CSV row '" + r[0] + "' out of order (expected '" +
                        m.domains[i] + "')");
    }
    for (std::size_t j = 0; j < D; ++j) {
      TransferCell c;
      if (r[j + 1] != "NA") {
        try {
          c.auroc = std::stod(r[j + 1]);
        } catch (const std::exception&) {
          throw FormatError("transfer CSV: bad number '" + r[j + 1] + "'");
        }
      }
      m.cells.push_back(c);
    }
  }
  try {
    m.validate();
  } catch (const InvariantError& e) {
    throw FormatError(std::string("transfer CSV: ") + e.what());
  }
  return m;
}

void to_json(nlohmann::json& j, const TransferMatrix& m) {
  j = nlohmann::json::object();
  j["model_id"] = m.model_id;
  j["strategy"] = to_string(m.strategy);
  j["domains"] = m.domains;
  auto& cells = j["cells"] = nlohmann::json::array();
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t k = 0; k < m.size(); ++k) {
      const auto& c = m.at(i, k);
      cells.push_back({{"source", m.domains[i]},
                       {"target", m.domains[k]},
                       {"within", i == k},
                       {"auroc", c.auroc ? nlohmann::json(*c.auroc) : nlohmann::json(nullptr)},
                       {"n_test", c.n_test}});
    }
  }
  j["warnings"] = m.warnings;
}

void from_json(const nlohmann::json& j, TransferMatrix& m) {
  m = TransferMatrix{};
  m.model_id = j.value("model_id", "");
  m.strategy = parse_strategy(j.value("strategy", "direct"));
  m.domains = j.at("domains").get<std::vector<std::string>>();
  const std::size_t D = m.domains.size();
  m.cells.resize(D * D);
  for (const auto& c : j.at("cells")) {
    const std::size_t i = m.index_of(c.at("source").get<std::string>());
    const std::size_t k = m.index_of(c.at("target").get<std::string>());
    auto& cell = m.at(i, k);
    if (!c.at("auroc").is_null()) cell.auroc = c["auroc"].get<double>();
    cell.n_test = c.value("n_test", std::size_t{0});
  }
  m.warnings = j.value("warnings", std::vector<std::string>{});
  m.validate();
}

void to_json(nlohmann::json& j, const GapResult& g) {
  j = nlohmann::json{{"mean_within", g.mean_within},
                     {"mean_cross", g.mean_cross},
                     {"delta", g.delta},
                     {"within_values", g.within_values},
                     {"cross_values", g.cross_values},
                     {"n_excluded", g.n_excluded}};
}

}  // namespace hnt
