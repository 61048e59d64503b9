#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "hnt/error.hpp"
#include "hnt/rng.hpp"
#include "hnt/synth_oracle.hpp"
#include "hnt/transfer_eval.hpp"
#include "oracles.hpp"

using namespace hnt;

namespace {

TransferMatrix fixture(const std::string& model) {
  const auto text = oracle::slurp(std::filesystem::path(HNT_FIXTURE_DIR) / "matrices" / (model + ".csv"));
  return transfer_matrix_from_csv(text, model);
}

void random_instance(std::uint64_t seed, std::vector<double>& s, std::vector<int>& y) {
  Rng rng = make_rng(seed, "auroc-instance");
  std::uniform_int_distribution<int> n_dist(2, 80), level(0, 6);
  std::normal_distribution<double> z(0.0, 1.0);
  const int n = n_dist(rng);
  s.clear();
  y.clear();
  for (int i = 0; i < n; ++i) {
    // Half the instances draw from a small set of values to force ties.
    s.push_back(seed % 2 ? static_cast<double>(level(rng)) : z(rng));
    y.push_back(static_cast<int>(rng() % 2));
  }
  y[0] = 0;
  y[1] = 1;
}

}  // namespace

TEST_CASE("auroc basics") {
  const std::vector<double> s = {0.9, 0.8, 0.2, 0.1};
  const std::vector<int> y = {1, 1, 0, 0};
  CHECK(auroc(s, y) == 1.0);
  const std::vector<double> flat(6, 0.3);
  const std::vector<int> y6 = {1, 0, 1, 0, 0, 1};
  CHECK(auroc(flat, y6) == 0.5);
  const std::vector<int> ones(4, 1);
  CHECK_THROWS_AS(auroc(s, ones), UndefinedMetricError);
  const std::vector<int> shorter = {1, 0};
  CHECK_THROWS_AS(auroc(s, shorter), InvariantError);
}

TEST_CASE("auroc matches O(n^2) pair counting, ties included") {
  std::vector<double> s;
  std::vector<int> y;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    random_instance(seed, s, y);
    CHECK(auroc(s, y) == doctest::Approx(oracle::auroc_pairs(s, y)).epsilon(1e-15));
  }
}

TEST_CASE("auroc is invariant to increasing transforms and complements exactly") {
  std::vector<double> s;
  std::vector<int> y;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    random_instance(seed + 1000, s, y);
    std::vector<double> t;
    for (double v : s) t.push_back(std::exp(3.0 * v) - 7.0);
    CHECK(auroc(t, y) == auroc(s, y));
    std::vector<int> flipped;
    for (int v : y) flipped.push_back(1 - v);
    CHECK(auroc(s, y) + auroc(s, flipped) == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("transfer gap arithmetic") {
  const auto m = TransferMatrix::from_values({"a", "b"}, {{0.9, 0.5}, {0.6, 0.8}});
  const auto g = transfer_gap(m);
  CHECK(g.mean_within == doctest::Approx(0.85));
  CHECK(g.mean_cross == doctest::Approx(0.55));
  CHECK(g.delta == doctest::Approx(0.30));
  CHECK(g.delta == g.mean_within - g.mean_cross);
  CHECK(g.within_values.size() == 2);
  CHECK(g.cross_values.size() == 2);

  const auto c = TransferMatrix::from_values({"a", "b", "c"}, {{.7, .7, .7}, {.7, .7, .7}, {.7, .7, .7}});
  CHECK(transfer_gap(c).delta == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(pair_diagnostics(c).pairs.size() == 6);
  for (const auto& p : pair_diagnostics(c).pairs) CHECK(p.kind == PairKind::kOrdinary);
}

TEST_CASE("per-model fixture gaps") {
  const std::vector<std::pair<std::string, double>> want = {
      {"llama-3.1-8b", 0.160}, {"mistral-7b", 0.247}, {"nemotron-mini-4b", 0.198},
      {"phi-3.5-mini", 0.294}, {"qwen2.5-3b", 0.201}};
  for (const auto& [model, delta] : want) {
    CHECK(std::abs(transfer_gap(fixture(model)).delta - delta) <= 0.001);
  }
}

TEST_CASE("invalid cells are excluded with renormalized means") {
  auto m = TransferMatrix::from_values({"a", "b", "c"}, {{.9, .5, .6}, {.4, .8, .7}, {.3, .2, .7}});
  m.at(0, 2).auroc.reset();
  const auto g = transfer_gap(m);
  CHECK(g.n_excluded == 1);
  CHECK(g.cross_values.size() == 5);
  CHECK(g.mean_cross == doctest::Approx((.5 + .4 + .7 + .3 + .2) / 5));
  CHECK(g.mean_within == doctest::Approx(0.8));
  CHECK_THROWS_AS(m.value(0, 2), InvariantError);
}

TEST_CASE("aggregate: identity, hand-computed means, gap commutes") {
  const auto a = fixture("llama-3.1-8b");
  const std::vector<TransferMatrix> one = {a};
  const auto same = aggregate_matrices(one);
  for (std::size_t t = 0; t < a.cells.size(); ++t) CHECK(same.cells[t].auroc == a.cells[t].auroc);

  const auto b = fixture("mistral-7b");
  const std::vector<TransferMatrix> two = {a, b};
  const auto mean = aggregate_matrices(two);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(mean.value(i, j) == doctest::Approx((a.value(i, j) + b.value(i, j)) / 2).epsilon(1e-15));
    }
  }
  std::vector<TransferMatrix> all;
  double mean_delta = 0.0;
  for (const auto* m : {"llama-3.1-8b", "mistral-7b", "nemotron-mini-4b", "phi-3.5-mini", "qwen2.5-3b"}) {
    all.push_back(fixture(m));
    mean_delta += transfer_gap(all.back()).delta / 5.0;
  }
  const auto grand = aggregate_matrices(all);
  CHECK(std::abs(transfer_gap(grand).delta - mean_delta) <= 1e-12);
  CHECK(std::abs(grand.value(0, 1) - 0.582) <= 0.001);

  auto reordered = b;
  std::swap(reordered.domains[0], reordered.domains[1]);
  const std::vector<TransferMatrix> bad = {a, reordered};
  CHECK_THROWS_AS(aggregate_matrices(bad), DataError);
}

TEST_CASE("pair diagnostics on fixtures") {
  const auto nem = pair_diagnostics(fixture("nemotron-mini-4b"));
  const auto mis = pair_diagnostics(fixture("mistral-7b"));
  auto find = [](const PairDiagnostics& d, const std::string& s, const std::string& t) {
    for (const auto& p : d.pairs) {
      if (p.source == s && p.target == t) return p;
    }
    FAIL("pair not found");
    return PairFlag{};
  };
  const auto cm = find(nem, "code", "moral");
  CHECK(cm.auroc == doctest::Approx(0.210));
  CHECK(cm.kind == PairKind::kBelowChance);
  const auto ls = find(mis, "legal", "science");
  CHECK(ls.auroc == doctest::Approx(0.873));
  CHECK(ls.kind == PairKind::kPartialTransfer);
  CHECK(mis.ranked.front().source == "legal");
  CHECK(mis.ranked.front().target == "science");
  CHECK(nem.pairs.size() == 30);
  for (std::size_t k = 1; k < nem.ranked.size(); ++k) CHECK(nem.ranked[k - 1].auroc >= nem.ranked[k].auroc);
}

TEST_CASE("CSV and JSON round trips") {
  const auto m = fixture("phi-3.5-mini");
  const auto csv = to_csv(m);
  CHECK(csv.rfind("source,general,legal,financial,science,moral,code\n", 0) == 0);
  const auto back = transfer_matrix_from_csv(csv, "phi-3.5-mini");
  CHECK(back.domains == m.domains);
  for (std::size_t t = 0; t < m.cells.size(); ++t) CHECK(*back.cells[t].auroc == *m.cells[t].auroc);

  auto with_na = m;
  with_na.at(2, 3).auroc.reset();
  with_na.at(2, 3).n_test = 17;
  const auto j = nlohmann::json(with_na);
  const auto from = j.get<TransferMatrix>();
  CHECK(from.cells == with_na.cells);
  CHECK(from.domains == with_na.domains);
  CHECK(to_csv(with_na).find("NA") != std::string::npos);
  CHECK_FALSE(transfer_matrix_from_csv(to_csv(with_na)).at(2, 3).valid());

  CHECK_THROWS_AS(transfer_matrix_from_csv("source,a,b\na,0.5\nb,0.5,0.5\n"), FormatError);
  CHECK_THROWS_AS(transfer_matrix_from_csv("source,a,b\na,0.5,x\nb,0.5,0.5\n"), FormatError);
}

TEST_CASE("matrix validation") {
  CHECK_THROWS_AS(TransferMatrix::from_values({"a"}, {{0.5}}), InvariantError);
  CHECK_THROWS_AS(TransferMatrix::from_values({"a", "b"}, {{0.5, 1.2}, {0.5, 0.5}}), InvariantError);
  CHECK_THROWS_AS(TransferMatrix::from_values({"a", "b"}, {{0.5}, {0.5, 0.5}}), InvariantError);
}

TEST_CASE("two disjoint synthetic domains: strong diagonal, chance off-diagonal") {
  SynthConfig c;
  c.n_domains = 2;
  c.n_features = 200;
  c.signal_size = 20;
  c.n_samples = 500;
  c.seed = 3;
  const auto data = generate_domains(c);
  // Bayes-direction probes built from the ground truth, evaluated on fresh data.
  std::map<std::string, ProbeModel> probes;
  for (std::size_t d = 0; d < 2; ++d) {
    ProbeModel p;
    p.n_features = c.n_features;
    for (auto j : data.layout.sets[d]) {
      p.weights.push_back({j, 1.0});
      p.standardization.push_back({j, 0.0, 1.0});
    }
    probes.emplace(data.domains[d], p);
  }
  auto fresh = c;
  fresh.seed = 4;
  const auto test = generate_domains(fresh);
  const auto m = build_transfer_matrix(data.domains, probes, test.sets);
  CHECK(m.value(0, 0) >= 0.9);
  CHECK(m.value(1, 1) >= 0.9);
  CHECK(std::abs(m.value(0, 1) - 0.5) <= 0.1);
  CHECK(std::abs(m.value(1, 0) - 0.5) <= 0.1);
  CHECK(m.at(0, 1).n_test == 500);

  // A single-class target column is marked invalid with a warning.
  auto sets = test.sets;
  auto& t1 = sets.at(data.domains[1]);
  for (auto& s : t1.samples) s.label = 0;
  const auto bad = build_transfer_matrix(data.domains, probes, sets);
  CHECK_FALSE(bad.at(0, 1).valid());
  CHECK_FALSE(bad.at(1, 1).valid());
  CHECK(bad.at(0, 0).valid());
  CHECK(bad.warnings.size() == 1);

  probes.erase(data.domains[1]);
  CHECK_THROWS_AS(build_transfer_matrix(data.domains, probes, test.sets), DataError);
}

TEST_CASE("probe-score fixture reproduces the Llama matrix to 3 decimals") {
  const auto path = std::filesystem::path(HNT_FIXTURE_DIR) / "probescores" / "llama-3.1-8b.csv";
  std::ifstream in(path);
  REQUIRE(in);
  std::string line;
  std::getline(in, line);
  std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<int>>> cells;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::string x;
    std::istringstream ls(line);
    while (std::getline(ls, x, ',')) f.push_back(x);
    auto& c = cells[{f[0], f[1]}];
    c.second.push_back(std::stoi(f[3]));
    c.first.push_back(std::stod(f[4]));
  }
  const auto m = fixture("llama-3.1-8b");
  REQUIRE(cells.size() == 36);
  for (const auto& [key, v] : cells) {
    const double a = auroc(v.first, v.second);
    CHECK(std::round(a * 1000) == std::round(m.value(m.index_of(key.first), m.index_of(key.second)) * 1000));
  }
}
