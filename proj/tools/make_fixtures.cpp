// Regenerates the per-sample fixtures under fixtures/ from the aggregate
// numbers they must reproduce. Output is deterministic; the files are
// committed, so this only needs rerunning when a target changes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <boost/math/distributions/normal.hpp>
#include <json.hpp>

#include "hnt/intervention_stats.hpp"
#include "hnt/rng.hpp"
#include "hnt/sparse_logreg.hpp"
#include "hnt/transfer_eval.hpp"

namespace fs = std::filesystem;
using hnt::Rng;

namespace {

struct Scored {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Binormal scores whose Mann-Whitney count is nudged to exactly target_u.
Scored exact_auroc_scores(std::size_t n_pos, std::size_t n_neg, long target_u, Rng& rng) {
  const double auc = static_cast<double>(target_u) / static_cast<double>(n_pos * n_neg);
  const double sep =
      std::sqrt(2.0) * boost::math::quantile(boost::math::normal(), std::clamp(auc, 0.01, 0.99));
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> neg(n_neg), pos(n_pos);
  for (auto& v : neg) v = z(rng);
  for (auto& v : pos) v = sep + z(rng);
  std::sort(neg.begin(), neg.end());

  std::vector<long> below(n_pos);
  long u = 0;
  for (std::size_t i = 0; i < n_pos; ++i) {
    below[i] = std::lower_bound(neg.begin(), neg.end(), pos[i]) - neg.begin();
    u += below[i];
  }
  std::uniform_int_distribution<std::size_t> pick(0, n_pos - 1);
  const long max_below = static_cast<long>(n_neg);
  while (u != target_u) {
    const std::size_t i = pick(rng);
    if (u < target_u && below[i] < max_below) {
      ++below[i];
      ++u;
    } else if (u > target_u && below[i] > 0) {
      --below[i];
      --u;
    }
  }
  std::uniform_real_distribution<double> frac(0.25, 0.75);
  Scored out;
  for (std::size_t i = 0; i < n_pos; ++i) {
    const long k = below[i];
    double s;
    if (k == 0) {
      s = neg.front() - 0.5 * frac(rng);
    } else if (k == max_below) {
      s = neg.back() + 0.5 * frac(rng);
    } else {
      s = neg[k - 1] + frac(rng) * (neg[k] - neg[k - 1]);
    }
    out.scores.push_back(s);
    out.labels.push_back(1);
  }
  for (double s : neg) {
    out.scores.push_back(s);
    out.labels.push_back(0);
  }
  // Interleave so label order carries no information.
  std::vector<std::size_t> order(out.scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Scored shuffled;
  for (auto i : order) {
    shuffled.scores.push_back(out.scores[i]);
    shuffled.labels.push_back(out.labels[i]);
  }
  return shuffled;
}

void check_auroc(const Scored& s, long target_u, std::size_t n_pos, std::size_t n_neg) {
  const double got = hnt::auroc(s.scores, s.labels);
  const double want = static_cast<double>(target_u) / static_cast<double>(n_pos * n_neg);
  if (std::abs(got - want) > 1e-12) {
    throw std::runtime_error("generated scores miss their AUROC target");
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

void write_probe_scores(const fs::path& fixtures, Rng& rng) {
  const auto text = [&] {
    std::ifstream in(fixtures / "matrices/llama-3.1-8b.csv");
    return std::string(std::istreambuf_iterator<char>(in), {});
  }();
  const auto m = hnt::transfer_matrix_from_csv(text, "llama-3.1-8b");
  constexpr std::size_t n_pos = 100, n_neg = 100;
  fs::create_directories(fixtures / "probescores");
  std::ofstream out(fixtures / "probescores/llama-3.1-8b.csv");
  out << "source,target,sample_id,label,score\n";
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m.size(); ++j) {
      const long u = std::lround(m.value(i, j) * static_cast<double>(n_pos * n_neg));
      const auto s = exact_auroc_scores(n_pos, n_neg, u, rng);
      check_auroc(s, u, n_pos, n_neg);
      for (std::size_t k = 0; k < s.scores.size(); ++k) {
        out << m.domains[i] << ',' << m.domains[j] << ',' << m.domains[j] << '-' << k << ','
            << s.labels[k] << ',' << fmt(s.scores[k]) << '\n';
      }
    }
  }
}

void write_bootstrap_scores(const fs::path& fixtures, Rng& rng) {
  constexpr std::size_t n_pos = 91, n_neg = 91;
  const long u = std::lround(0.537 * static_cast<double>(n_pos * n_neg));
  const auto s = exact_auroc_scores(n_pos, n_neg, u, rng);
  check_auroc(s, u, n_pos, n_neg);
  fs::create_directories(fixtures / "bootstrap");
  std::ofstream out(fixtures / "bootstrap/llama-3.1-8b_code_scores.csv");
  out << "sample_id,label,score\n";
  for (std::size_t k = 0; k < s.scores.size(); ++k) {
    out << "code-" << k << ',' << s.labels[k] << ',' << fmt(s.scores[k]) << '\n';
  }
}

void write_probe(const fs::path& path, std::size_t n_weights, std::uint64_t seed, Rng& rng) {
  constexpr std::size_t n_layers = 32, d_ff = 9216;
  hnt::ProbeModel p;
  p.source_domain = "general";
  p.n_features = n_layers * d_ff;
  p.reg_strength = 10.0;
  p.seed = seed;
  p.intercept = -0.4;
  std::uniform_int_distribution<std::size_t> idx(0, p.n_features - 1);
  std::set<std::size_t> chosen;
  while (chosen.size() < n_weights) chosen.insert(idx(rng));
  std::normal_distribution<double> w(0.0, 0.3);
  std::uniform_real_distribution<double> mean(-0.05, 0.05), sd(0.01, 0.2);
  for (auto j : chosen) {
    double v = 0.0;
    while (std::abs(v) < 1e-3) v = w(rng);
    p.weights.push_back({j, v});
    p.standardization.push_back({j, mean(rng), sd(rng)});
  }
  std::ofstream out(path);
  out << nlohmann::json(p).dump(2) << '\n';
}

struct Cell {
  double scale;
  hnt::Condition condition;
  hnt::Relation relation;
  std::size_t n, up, down;
};

void write_interventions(const fs::path& fixtures, Rng& rng) {
  using hnt::Condition;
  using hnt::Relation;
  std::vector<Cell> cells = {
      {0.0, Condition::kHNeuron, Relation::kWithin, 9000, 152, 135},
      {0.0, Condition::kHNeuron, Relation::kCross, 7200, 40, 39},
      {3.0, Condition::kHNeuron, Relation::kWithin, 9000, 30, 35},
      {3.0, Condition::kHNeuron, Relation::kCross, 7200, 150, 180},
  };
  for (double s : hnt::kDefaultScales) {
    cells.push_back({s, Condition::kRandomControl, Relation::kWithin, 600, 3, 3});
    cells.push_back({s, Condition::kRandomControl, Relation::kCross, 600, 2, 2});
  }
  const std::vector<std::string> domains = {"general", "legal",  "financial",
                                            "science", "moral", "code"};
  std::vector<hnt::InterventionRecord> records;
  std::bernoulli_distribution base(0.35);
  for (const auto& c : cells) {
    std::vector<std::pair<int, int>> outcomes;
    for (std::size_t k = 0; k < c.up; ++k) outcomes.emplace_back(0, 1);
    for (std::size_t k = 0; k < c.down; ++k) outcomes.emplace_back(1, 0);
    while (outcomes.size() < c.n) {
      const int b = base(rng) ? 1 : 0;
      outcomes.emplace_back(b, b);
    }
    std::shuffle(outcomes.begin(), outcomes.end(), rng);
    char scale_tag[16];
    std::snprintf(scale_tag, sizeof(scale_tag), "a%.1f", c.scale);
    for (std::size_t k = 0; k < c.n; ++k) {
      hnt::InterventionRecord r;
      r.domain = domains[k % domains.size()];
      r.sample_id = std::string(to_string(c.condition)) + "-" + scale_tag + "-" +
                    std::string(to_string(c.relation)) + "-" + std::to_string(k);
      r.condition = c.condition;
      r.scale = c.scale;
      r.baseline_halluc = outcomes[k].first;
      r.intervened_halluc = outcomes[k].second;
      r.target_relation = c.relation;
      records.push_back(std::move(r));
    }
  }
  hnt::write_intervention_records(records, fixtures / "interventions.jsonl");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regenerate per-sample fixtures"};
  std::string dir = "fixtures";
  std::uint64_t seed = 20240601;
  app.add_option("--fixtures", dir, "fixture directory (must hold matrices/)");
  app.add_option("--seed", seed, "root seed");
  CLI11_PARSE(app, argc, argv);
  try {
    const fs::path root(dir);
    Rng probe_rng = hnt::make_rng(seed, "fixture-probescores");
    write_probe_scores(root, probe_rng);
    Rng boot_rng = hnt::make_rng(seed, "fixture-bootstrap");
    write_bootstrap_scores(root, boot_rng);
    fs::create_directories(root / "probes");
    Rng probe_model_rng = hnt::make_rng(seed, "fixture-probes");
    write_probe(root / "probes/nemotron-mini-4b_general_direct.json", 131, seed, probe_model_rng);
    write_probe(root / "probes/nemotron-mini-4b_general_cot.json", 55, seed, probe_model_rng);
    Rng int_rng = hnt::make_rng(seed, "fixture-interventions");
    write_interventions(root, int_rng);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
