#include <doctest.h>

#include <cmath>
#include <set>

#include "hnt/error.hpp"
#include "hnt/rng.hpp"
#include "hnt/sparse_logreg.hpp"
#include "hnt/transfer_eval.hpp"
#include "oracles.hpp"

using namespace hnt;

namespace {

struct Problem {
  std::vector<float> X;
  std::vector<double> Xd;
  std::vector<int> y;
  std::size_t n = 0, p = 0;
  MatrixView view() const { return {X, n, p}; }
};

// Logistic data with a few informative columns and one constant column.
Problem random_problem(std::size_t n, std::size_t p, std::uint64_t seed, double signal = 1.0) {
  Problem pr;
  pr.n = n;
  pr.p = p;
  Rng rng = make_rng(seed, "logreg-problem");
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> beta(p, 0.0);
  for (std::size_t j = 0; j < std::min<std::size_t>(3, p); ++j) beta[j] = signal * (j % 2 ? -1 : 1);
  for (std::size_t i = 0; i < n; ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      const double x = (p > 4 && j == p - 1) ? 2.5 : z(rng) * (1.0 + j);
      pr.X.push_back(static_cast<float>(x));
      m += beta[j] * x / (1.0 + j);
    }
    pr.y.push_back(u(rng) < 1.0 / (1.0 + std::exp(-m)) ? 1 : 0);
  }
  pr.y[0] = 0;
  pr.y[1] = 1;
  for (float v : pr.X) pr.Xd.push_back(v);
  return pr;
}

// Largest subgradient violation of a fitted model, recomputed from scratch.
double kkt_violation(const ProbeModel& m, const Problem& pr) {
  const auto sc = oracle::column_scaling(pr.Xd, pr.n, pr.p);
  const double lambda = 1.0 / m.reg_strength;
  std::vector<double> w(pr.p, 0.0);
  for (const auto& fw : m.weights) w[fw.index] = fw.value;
  std::vector<double> r(pr.n);
  for (std::size_t i = 0; i < pr.n; ++i) {
    double mm = m.intercept;
    for (std::size_t j = 0; j < pr.p; ++j) {
      if (sc.sd[j] > 0) mm += w[j] * (pr.Xd[i * pr.p + j] - sc.mean[j]) / sc.sd[j];
    }
    r[i] = 1.0 / (1.0 + std::exp(-mm)) - pr.y[i];
  }
  double gb = 0.0;
  for (double v : r) gb += v;
  double worst = std::abs(gb / pr.n);
  for (std::size_t j = 0; j < pr.p; ++j) {
    if (sc.sd[j] == 0) continue;
    double g = 0.0;
    for (std::size_t i = 0; i < pr.n; ++i) g += r[i] * (pr.Xd[i * pr.p + j] - sc.mean[j]) / sc.sd[j];
    g /= pr.n;
    worst = std::max(worst, w[j] == 0.0 ? std::max(0.0, std::abs(g) - lambda)
                                        : std::abs(g + std::copysign(lambda, w[j])));
  }
  return worst;
}

double model_objective_via_oracle(const ProbeModel& m, const Problem& pr) {
  std::vector<double> w(pr.p, 0.0);
  for (const auto& fw : m.weights) w[fw.index] = fw.value;
  return oracle::logreg_objective(pr.Xd, pr.y, pr.n, pr.p, w, m.intercept, 1.0 / m.reg_strength);
}

}  // namespace

TEST_CASE("overwhelming penalty: all weights zero, intercept = logit(base rate)") {
  const auto pr = random_problem(60, 8, 1);
  const auto m = fit_l1_logreg(pr.view(), pr.y, 1e-6);
  CHECK(m.weights.empty());
  double pos = 0;
  for (int v : pr.y) pos += v;
  const double rate = pos / pr.n;
  CHECK(m.intercept == doctest::Approx(std::log(rate / (1 - rate))).epsilon(1e-6));
}

TEST_CASE("a single informative feature gets a positive weight at large C") {
  Problem pr;
  pr.n = 50;
  pr.p = 1;
  for (std::size_t i = 0; i < pr.n; ++i) {
    pr.y.push_back(static_cast<int>(i % 2));
    pr.X.push_back(static_cast<float>(pr.y.back() * 1.0 + 0.3 * std::sin(static_cast<double>(i))));
  }
  const auto m = fit_l1_logreg(pr.view(), pr.y, 100.0);
  REQUIRE(m.weights.size() == 1);
  CHECK(m.weights[0].value > 0.0);
}

TEST_CASE("40x12 at C = 1 matches the proximal-gradient reference") {
  const auto pr = random_problem(40, 12, 2);
  const auto m = fit_l1_logreg(pr.view(), pr.y, 1.0, {1e-10, 100000});
  const auto ref = oracle::prox_gradient_logreg(pr.Xd, pr.y, pr.n, pr.p, 1.0, 1e-13);
  CHECK(m.converged);
  CHECK(std::abs(model_objective_via_oracle(m, pr) - ref.objective) <= 1e-6);
  CHECK(l1_logreg_objective(m, pr.view(), pr.y) ==
        doctest::Approx(model_objective_via_oracle(m, pr)).epsilon(1e-9));
}

TEST_CASE("optimality conditions hold at tol on assorted problems") {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const auto pr = random_problem(30 + 5 * seed, 6 + seed, 100 + seed);
    for (double C : {0.05, 0.5, 5.0}) {
      const double tol = 1e-6;
      const auto m = fit_l1_logreg(pr.view(), pr.y, C, {tol, 5000});
      CHECK(m.converged);
      CHECK(kkt_violation(m, pr) <= tol * 1.0001);
    }
  }
}

TEST_CASE("constant columns are never selected") {
  const auto pr = random_problem(50, 8, 3);
  const auto m = fit_l1_logreg(pr.view(), pr.y, 1000.0);
  for (const auto& w : m.weights) CHECK(w.index != pr.p - 1);
  CHECK(m.weights.size() == m.standardization.size());
  for (std::size_t k = 0; k < m.weights.size(); ++k) {
    CHECK(m.weights[k].value != 0.0);
    CHECK(m.weights[k].index == m.standardization[k].index);
    if (k > 0) CHECK(m.weights[k - 1].index < m.weights[k].index);
  }
}

TEST_CASE("nonzero count never grows as C shrinks over the default grid") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto pr = random_problem(80, 15, 40 + seed, 1.5);
    std::size_t prev = std::numeric_limits<std::size_t>::max();
    for (auto it = kDefaultGrid.rbegin(); it != kDefaultGrid.rend(); ++it) {
      const auto m = fit_l1_logreg(pr.view(), pr.y, *it, {1e-8, 20000});
      CHECK(m.weights.size() <= prev);
      prev = m.weights.size();
    }
  }
}

TEST_CASE("identical inputs give a bit-identical model") {
  const auto pr = random_problem(70, 10, 5);
  const auto a = fit_l1_logreg(pr.view(), pr.y, 0.7, {}, 9);
  const auto b = fit_l1_logreg(pr.view(), pr.y, 0.7, {}, 9);
  CHECK(a == b);
}

TEST_CASE("hitting max_iter is flagged, not silent") {
  const auto pr = random_problem(60, 10, 6);
  const auto m = fit_l1_logreg(pr.view(), pr.y, 10.0, {1e-14, 1});
  CHECK_FALSE(m.converged);
  CHECK(m.n_iter == 1);
}

TEST_CASE("bad inputs") {
  auto pr = random_problem(20, 3, 7);
  std::vector<int> ones(pr.n, 1);
  CHECK_THROWS_AS(fit_l1_logreg(pr.view(), ones, 1.0), DataError);
  CHECK_THROWS_AS(fit_l1_logreg(pr.view(), pr.y, 0.0), UsageError);
  pr.X[4] = std::nanf("");
  CHECK_THROWS_AS(fit_l1_logreg(pr.view(), pr.y, 1.0), InvariantError);
}

TEST_CASE("predict_scores") {
  ProbeModel zero;
  zero.intercept = 0.3;
  std::vector<float> X(5 * 4, 1.0f);
  const auto s = predict_scores(zero, {X, 5, 4});
  for (double v : s) CHECK(v == doctest::Approx(1.0 / (1.0 + std::exp(-0.3))));

  ProbeModel one;
  one.weights = {{2, 1.7}};
  one.standardization = {{2, 1.0, 0.5}};
  const auto half = predict_scores(one, {X, 5, 4});
  CHECK(half[0] == 0.5);

  // Five samples against the formula evaluated by hand.
  ProbeModel m;
  m.intercept = -0.2;
  m.weights = {{0, 0.5}, {3, -1.25}};
  m.standardization = {{0, 0.1, 2.0}, {3, -0.4, 0.8}};
  const std::vector<float> Y = {0.0f, 9.f, 9.f, 1.0f, 2.0f, 9.f, 9.f, -1.0f, -3.0f, 9.f,
                                9.f, 0.5f, 0.1f, 9.f, 9.f, -0.4f, 4.0f, 9.f, 9.f, 2.5f};
  const auto got = predict_scores(m, {Y, 5, 4});
  for (std::size_t i = 0; i < 5; ++i) {
    const double x0 = Y[i * 4], x3 = Y[i * 4 + 3];
    const double mm = -0.2 + 0.5 * (x0 - 0.1) / 2.0 - 1.25 * (x3 + 0.4) / 0.8;
    CHECK(got[i] == doctest::Approx(1.0 / (1.0 + std::exp(-mm))).epsilon(1e-14));
  }
  CHECK_THROWS_AS(predict_scores(m, {X, 5, 3}), InvariantError);
}

TEST_CASE("selected_neurons maps flat indices with div/mod") {
  ProbeModel m;
  m.n_features = 4;
  m.weights = {{1, 0.2}, {3, -0.4}};
  const auto s = selected_neurons(m, 2);
  REQUIRE(s.size() == 2);
  CHECK(s.entries[0].layer == 0);
  CHECK(s.entries[0].neuron == 1);
  CHECK(s.entries[1].layer == 1);
  CHECK(s.entries[1].neuron == 1);
  CHECK(s.entries[1].coefficient == -0.4);

  CHECK(selected_neurons(ProbeModel{}, 8).empty());
  m.weights.push_back({4, 1.0});
  CHECK_THROWS_AS(selected_neurons(m, 2), InvariantError);
}

TEST_CASE("probe JSON round trip") {
  ProbeModel m;
  m.source_domain = "legal";
  m.reg_strength = 0.1;
  m.intercept = -0.123456789012345;
  m.seed = 42;
  m.n_features = 10;
  m.weights = {{2, 0.3}, {7, -1e-7}};
  m.standardization = {{2, 0.01, 1.5}, {7, -3.0, 0.25}};
  const auto j = nlohmann::json(m);
  CHECK(j.at("weights").size() == 2);
  CHECK(j.at("standardization")[1].at("index") == 7);
  CHECK(j.get<ProbeModel>() == m);
}

TEST_CASE("CV picks the C a per-fold refit oracle says is best") {
  // Strong signal in 2 of 30 columns: heavy penalties zero everything out.
  const auto pr = random_problem(120, 30, 11, 2.5);
  const std::vector<double> grid = {0.001, 0.01, 0.1, 1.0, 10.0};
  const auto sel = cross_validate_select(pr.view(), pr.y, grid, 5, 4);
  REQUIRE(sel.per_C.size() == 5);

  const auto folds = stratified_folds(pr.y, 5, 4);
  std::vector<double> means;
  for (double C : grid) {
    double sum = 0.0;
    for (std::size_t f = 0; f < 5; ++f) {
      std::vector<float> tx, vx;
      std::vector<int> ty, vy;
      for (std::size_t i = 0; i < pr.n; ++i) {
        auto& X = folds[i] == f ? vx : tx;
        (folds[i] == f ? vy : ty).push_back(pr.y[i]);
        X.insert(X.end(), pr.X.begin() + i * pr.p, pr.X.begin() + (i + 1) * pr.p);
      }
      const auto m = fit_l1_logreg({tx, ty.size(), pr.p}, ty, C, {}, derive_seed(4, "cv-fit", f));
      sum += oracle::auroc_pairs(predict_scores(m, {vx, vy.size(), pr.p}), vy);
    }
    means.push_back(sum / 5.0);
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < means.size(); ++k) {
    if (means[k] > means[best] + 1e-12) best = k;
  }
  for (std::size_t k = 0; k < grid.size(); ++k) {
    CHECK(sel.per_C[k].mean_auroc == doctest::Approx(means[k]).epsilon(1e-12));
    CHECK(sel.per_C[k].fold_aurocs.size() == 5);
  }
  CHECK(sel.chosen_C == grid[best]);
  CHECK(sel.chosen_C > 0.01);
}

TEST_CASE("CV ties go to the smallest C; singleton grid") {
  const auto pr = random_problem(60, 5, 12);
  // Every C this small zeroes all weights, so every fold AUROC is 0.5.
  const std::vector<double> tiny = {1e-6, 1e-5, 1e-4};
  const auto sel = cross_validate_select(pr.view(), pr.y, tiny, 3, 1);
  CHECK(sel.chosen_C == 1e-6);
  for (const auto& p : sel.per_C) CHECK(p.mean_auroc == 0.5);

  const std::vector<double> one = {0.3};
  const auto single = cross_validate_select(pr.view(), pr.y, one, 3, 1);
  CHECK(single.chosen_C == 0.3);
  CHECK(single.per_C.size() == 1);
}

TEST_CASE("degenerate folds are skipped with a warning") {
  // Two positives among 30 rows: with 5 folds, three validation folds hold none.
  Problem pr = random_problem(30, 4, 13);
  for (auto& v : pr.y) v = 0;
  pr.y[3] = 1;
  pr.y[17] = 1;
  const auto sel = cross_validate_select(pr.view(), pr.y, kDefaultGrid, 5, 2);
  CHECK(sel.skipped_folds.size() == 3);
  CHECK(sel.warnings.size() == 3);
  CHECK(sel.per_C.front().fold_aurocs.size() == 2);
}

TEST_CASE("every fold degenerate is an error") {
  Problem pr = random_problem(30, 4, 14);
  for (auto& v : pr.y) v = 0;
  pr.y[5] = 1;
  CHECK_THROWS_AS(cross_validate_select(pr.view(), pr.y, kDefaultGrid, 5, 2), DataError);
}

TEST_CASE("tight tolerance is reachable at weak regularization") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto pr = random_problem(40, 9, 100 + seed, 2.0);
    for (double C : {10.0, 100.0}) {
      const auto m = fit_l1_logreg(pr.view(), pr.y, C, {1e-10, 2000});
      CAPTURE(seed);
      CAPTURE(C);
      CHECK(m.converged);
      CHECK(kkt_violation(m, pr) <= 1e-8);
    }
  }
}
