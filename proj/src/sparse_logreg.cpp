#include "hnt/sparse_logreg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hnt/error.hpp"
#include "hnt/parallel.hpp"
#include "hnt/rng.hpp"
#include "hnt/transfer_eval.hpp"

namespace hnt {
namespace {

// log(1 + exp(t)) without overflow.
double log1pexp(double t) {
  return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// Logistic loss for a {0,1} label at margin m.
double logistic_loss(double m, int y) { return log1pexp(m) - (y ? m : 0.0); }

void check_labels(std::span<const int> y, std::size_t rows) {
  if (y.size() != rows) {
    throw InvariantError("label count " + std::to_string(y.size()) +
                         " does not match row count " + std::to_string(rows));
  }
  std::size_t pos = 0;
  for (int v : y) {
    if (v != 0 && v != 1) throw InvariantError("labels must be 0 or 1");
    pos += static_cast<std::size_t>(v);
  }
  if (pos == 0 || pos == y.size()) {
    throw DataError("training labels contain a single class");
  }
}

/// Standardized copy of the non-constant columns, stored column-major.
struct Standardized {
  std::size_t n = 0;
  std::vector<std::size_t> column_of;
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<double> z;

  const double* col(std::size_t k) const { return z.data() + k * n; }
};

// TODO: standardize lazily per column; the dense n x p double copy is the
// memory ceiling at full-model widths (~1e3 x 9e5).
Standardized standardize(MatrixView X) {
  const std::size_t n = X.rows, p = X.cols;
  std::vector<double> mean(p, 0.0), ss(p, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = X.row(i);
    for (std::size_t j = 0; j < p; ++j) mean[j] += r[j];
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = X.row(i);
    for (std::size_t j = 0; j < p; ++j) {
      const double d = r[j] - mean[j];
      ss[j] += d * d;
    }
  }
  Standardized s;
  s.n = n;
  for (std::size_t j = 0; j < p; ++j) {
    const double sd = std::sqrt(ss[j] / static_cast<double>(n));
    if (sd <= 1e-10 * std::max(1.0, std::abs(mean[j]))) continue;
    s.column_of.push_back(j);
    s.mean.push_back(mean[j]);
    s.std.push_back(sd);
  }
  s.z.resize(n * s.column_of.size());
  for (std::size_t k = 0; k < s.column_of.size(); ++k) {
    const std::size_t j = s.column_of[k];
    double* dst = s.z.data() + k * n;
    for (std::size_t i = 0; i < n; ++i) dst[i] = (X(i, j) - s.mean[k]) / s.std[k];
  }
  return s;
}

class CoordinateDescent {
 public:
  CoordinateDescent(const Standardized& data, std::span<const int> y, double lambda,
                    const SolverOptions& options, std::uint64_t seed)
      : data_(data),
        y_(y),
        lambda_(lambda),
        options_(options),
        rng_(make_rng(seed, "coordinate-order")),
        w_(data.column_of.size(), 0.0),
        margin_(data.n, 0.0),
        prob_(data.n, 0.0) {
    const double base = static_cast<double>(std::accumulate(y.begin(), y.end(), 0)) /
                        static_cast<double>(y.size());
    intercept_ = std::log(base / (1.0 - base));
    std::fill(margin_.begin(), margin_.end(), intercept_);
    std::fill(prob_.begin(), prob_.end(), sigmoid(intercept_));
  }

  void run() {
    const std::size_t p = w_.size();
    std::vector<std::size_t> all(p);
    std::iota(all.begin(), all.end(), 0);
    std::vector<std::size_t> active;
    bool full = true;

    for (iter_ = 0; iter_ < options_.max_iter;) {
      std::vector<std::size_t> order = full ? all : active;
      std::shuffle(order.begin(), order.end(), rng_);
      double max_change = 0.0, max_violation = 0.0;
      step_intercept(max_change, max_violation);
      for (std::size_t k : order) step_coordinate(k, max_change, max_violation);
      ++iter_;

      if (full) {
        if (max_change < options_.tol && max_violation <= options_.tol &&
            kkt_violation() <= options_.tol) {
          converged_ = true;
          return;
        }
        active.clear();
        for (std::size_t k = 0; k < p; ++k) {
          if (w_[k] != 0.0) active.push_back(k);
        }
        full = active.empty();
      } else if (max_change < options_.tol) {
        full = true;
      }
    }
    converged_ = kkt_violation() <= options_.tol;
  }

  /// Largest subgradient optimality violation over all coordinates.
  double kkt_violation() const {
    double worst = std::abs(gradient_intercept());
    for (std::size_t k = 0; k < w_.size(); ++k) {
      worst = std::max(worst, violation(w_[k], gradient(k)));
    }
    return worst;
  }

  const std::vector<double>& weights() const { return w_; }
  double intercept() const { return intercept_; }
  bool converged() const { return converged_; }
  std::size_t iterations() const { return iter_; }

 private:
  double gradient(std::size_t k) const {
    const double* z = data_.col(k);
    double g = 0.0;
    for (std::size_t i = 0; i < data_.n; ++i) g += z[i] * (prob_[i] - y_[i]);
    return g / static_cast<double>(data_.n);
  }

  double gradient_intercept() const {
    double g = 0.0;
    for (std::size_t i = 0; i < data_.n; ++i) g += prob_[i] - y_[i];
    return g / static_cast<double>(data_.n);
  }

  double violation(double w, double g) const {
    if (w == 0.0) return std::max(0.0, std::abs(g) - lambda_);
    return std::abs(g + (w > 0.0 ? lambda_ : -lambda_));
  }

  // One proximal Newton step on a single coordinate with Armijo backtracking.
  // `z == nullptr` denotes the unpenalized intercept column of ones.
  void newton_step(const double* z, double& w, double lambda, double& max_change) {
    const std::size_t n = data_.n;
    const double inv_n = 1.0 / static_cast<double>(n);
    double g = 0.0, h = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double zi = z ? z[i] : 1.0;
      g += zi * (prob_[i] - y_[i]);
      h += zi * zi * prob_[i] * (1.0 - prob_[i]);
    }
    g *= inv_n;
    h = h * inv_n + 1e-12;

    double d;
    if (g + lambda <= h * w) {
      d = -(g + lambda) / h;
    } else if (g - lambda >= h * w) {
      d = -(g - lambda) / h;
    } else {
      d = -w;
    }
    if (std::abs(d) < 1e-15) return;

    constexpr double kSigma = 0.01;
    const double predicted = g * d + lambda * (std::abs(w + d) - std::abs(w));
    double step = 1.0;
    for (int trial = 0; trial < 40; ++trial, step *= 0.5) {
      const double w_new = (step == 1.0) ? w + d : w + step * d;
      double dloss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double delta = step * d * (z ? z[i] : 1.0);
        // softplus(m + delta) - softplus(m) = log1p(p * expm1(delta)), no cancellation.
        dloss += delta < 700.0
                     ? std::log1p(prob_[i] * std::expm1(delta)) - y_[i] * delta
                     : logistic_loss(margin_[i] + delta, y_[i]) - logistic_loss(margin_[i], y_[i]);
      }
      const double dobj = dloss * inv_n + lambda * (std::abs(w_new) - std::abs(w));
      if (dobj <= kSigma * step * predicted) {
        const double applied = w_new - w;
        for (std::size_t i = 0; i < n; ++i) {
          margin_[i] += applied * (z ? z[i] : 1.0);
          prob_[i] = sigmoid(margin_[i]);
        }
        w = w_new;
        max_change = std::max(max_change, std::abs(applied));
        return;
      }
    }
  }

  void step_intercept(double& max_change, double& max_violation) {
    max_violation = std::max(max_violation, std::abs(gradient_intercept()));
    newton_step(nullptr, intercept_, 0.0, max_change);
  }

  void step_coordinate(std::size_t k, double& max_change, double& max_violation) {
    const double g = gradient(k);
    const double v = violation(w_[k], g);
    max_violation = std::max(max_violation, v);
    if (w_[k] == 0.0 && v == 0.0) return;
    newton_step(data_.col(k), w_[k], lambda_, max_change);
  }

  const Standardized& data_;
  std::span<const int> y_;
  double lambda_;
  SolverOptions options_;
  Rng rng_;
  std::vector<double> w_;
  double intercept_ = 0.0;
  std::vector<double> margin_;
  std::vector<double> prob_;
  std::size_t iter_ = 0;
  bool converged_ = false;
};

std::vector<float> gather_rows(MatrixView X, std::span<const std::size_t> rows) {
  std::vector<float> out;
  out.reserve(rows.size() * X.cols);
  for (std::size_t r : rows) {
    auto src = X.row(r);
    out.insert(out.end(), src.begin(), src.end());
  }
  return out;
}

}  // namespace

ProbeModel fit_l1_logreg(MatrixView X, std::span<const int> y, double C,
                         const SolverOptions& options, std::uint64_t seed) {
  if (!(C > 0.0) || !std::isfinite(C)) {
    throw UsageError("regularization strength C must be a positive finite number");
  }
  if (!(options.tol > 0.0)) throw UsageError("solver tol must be positive");
  check_labels(y, X.rows);
  for (float v : X.data) {
    if (!std::isfinite(v)) throw InvariantError("feature matrix contains non-finite values");
  }

  const Standardized data = standardize(X);
  CoordinateDescent solver(data, y, 1.0 / C, options, seed);
  solver.run();

  ProbeModel model;
  model.intercept = solver.intercept();
  model.reg_strength = C;
  model.seed = seed;
  model.n_features = X.cols;
  model.converged = solver.converged();
  model.n_iter = solver.iterations();
  const auto& w = solver.weights();
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (w[k] == 0.0) continue;
    model.weights.push_back({data.column_of[k], w[k]});
    model.standardization.push_back({data.column_of[k], data.mean[k], data.std[k]});
  }
  return model;
}

double l1_logreg_objective(const ProbeModel& model, MatrixView X, std::span<const int> y) {
  const auto scores_margin = [&](std::size_t i) {
    double m = model.intercept;
    for (std::size_t k = 0; k < model.weights.size(); ++k) {
      const auto& s = model.standardization[k];
      m += model.weights[k].value * (X(i, s.index) - s.mean) / s.std;
    }
    return m;
  };
  double loss = 0.0;
  for (std::size_t i = 0; i < X.rows; ++i) loss += logistic_loss(scores_margin(i), y[i]);
  double l1 = 0.0;
  for (const auto& w : model.weights) l1 += std::abs(w.value);
  return loss / static_cast<double>(X.rows) + l1 / model.reg_strength;
}

std::vector<double> predict_scores(const ProbeModel& model, MatrixView X) {
  if (!model.weights.empty() && model.weights.back().index >= X.cols) {
    throw InvariantError("probe uses feature " + std::to_string(model.weights.back().index) +
                         " but input has only " + std::to_string(X.cols) + " features");
  }
  if (model.standardization.size() != model.weights.size()) {
    throw InvariantError("probe standardization does not match its weights");
  }
  std::vector<double> scores(X.rows);
  for (std::size_t i = 0; i < X.rows; ++i) {
    double m = model.intercept;
    for (std::size_t k = 0; k < model.weights.size(); ++k) {
      const auto& s = model.standardization[k];
      m += model.weights[k].value * (X(i, s.index) - s.mean) / s.std;
    }
    scores[i] = sigmoid(m);
  }
  return scores;
}

HNeuronSet selected_neurons(const ProbeModel& model, std::size_t d_ff) {
  if (d_ff == 0) throw UsageError("d_ff must be positive");
  HNeuronSet set;
  set.d_ff = d_ff;
  if (model.n_features > 0) {
    set.n_layers = model.n_features / d_ff;
  } else if (!model.weights.empty()) {
    set.n_layers = model.weights.back().index / d_ff + 1;
  }
  const std::size_t limit = set.n_layers * d_ff;
  for (const auto& w : model.weights) {
    if (w.index >= limit) {
      throw InvariantError("feature index " + std::to_string(w.index) +
                           " exceeds n_layers * d_ff = " + std::to_string(limit));
    }
    set.entries.push_back({w.index / d_ff, w.index % d_ff, w.value});
  }
  std::sort(set.entries.begin(), set.entries.end());
  return set;
}

const CvGridPoint& CvSelection::chosen() const {
  for (const auto& p : per_C) {
    if (p.C == chosen_C) return p;
  }
  throw InvariantError("chosen C missing from the CV grid");
}

std::vector<std::size_t> stratified_folds(std::span<const int> y, std::size_t n_folds,
                                          std::uint64_t seed) {
  std::vector<std::size_t> fold(y.size(), 0);
  Rng rng = make_rng(seed, "cv-folds");
  for (int label : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] == label) idx.push_back(i);
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < idx.size(); ++k) fold[idx[k]] = k % n_folds;
  }
  return fold;
}

CvSelection cross_validate_select(MatrixView X, std::span<const int> y,
                                  std::span<const double> grid, std::size_t n_folds,
                                  std::uint64_t seed, const SolverOptions& options) {
  if (grid.empty()) throw UsageError("regularization grid is empty");
  if (n_folds < 2) throw UsageError("cross-validation needs at least 2 folds");
  std::vector<double> cs(grid.begin(), grid.end());
  for (double c : cs) {
    if (!(c > 0.0)) throw UsageError("grid values must be positive");
  }
  std::sort(cs.begin(), cs.end());
  cs.erase(std::unique(cs.begin(), cs.end()), cs.end());
  check_labels(y, X.rows);

  const auto fold_of = stratified_folds(y, n_folds, seed);

  struct FoldData {
    std::vector<float> train_x, val_x;
    std::vector<int> train_y, val_y;
    bool valid = false;
  };
  std::vector<FoldData> folds(n_folds);
  CvSelection sel;
  sel.n_folds = n_folds;
  for (std::size_t f = 0; f < n_folds; ++f) {
    std::vector<std::size_t> tr, va;
    for (std::size_t i = 0; i < y.size(); ++i) (fold_of[i] == f ? va : tr).push_back(i);
    auto& fd = folds[f];
    for (auto i : tr) fd.train_y.push_back(y[i]);
    for (auto i : va) fd.val_y.push_back(y[i]);
    auto both = [](const std::vector<int>& v) {
      auto pos = std::count(v.begin(), v.end(), 1);
      return pos > 0 && pos < static_cast<long>(v.size());
    };
    fd.valid = both(fd.train_y) && both(fd.val_y);
    if (!fd.valid) {
      sel.skipped_folds.push_back(f);
      sel.warnings.push_back("fold " + std::to_string(f) +
                             " skipped: a partition has a single class");
      continue;
    }
    fd.train_x = gather_rows(X, tr);
    fd.val_x = gather_rows(X, va);
  }
  if (sel.skipped_folds.size() == n_folds) {
    throw DataError("every cross-validation fold degenerates to a single class");
  }

  const std::size_t n_tasks = n_folds * cs.size();
  std::vector<double> task_auroc(n_tasks, 0.0);
  parallel_for(n_tasks, [&](std::size_t t) {
    const std::size_t f = t / cs.size(), c = t % cs.size();
    const auto& fd = folds[f];
    if (!fd.valid) return;
    MatrixView train{fd.train_x, fd.train_y.size(), X.cols};
    MatrixView val{fd.val_x, fd.val_y.size(), X.cols};
    auto model = fit_l1_logreg(train, fd.train_y, cs[c], options,
                               derive_seed(seed, "cv-fit", f));
    task_auroc[t] = auroc(predict_scores(model, val), fd.val_y);
  });

  double best = -1.0;
  for (std::size_t c = 0; c < cs.size(); ++c) {
    CvGridPoint point;
    point.C = cs[c];
    for (std::size_t f = 0; f < n_folds; ++f) {
      if (folds[f].valid) point.fold_aurocs.push_back(task_auroc[f * cs.size() + c]);
    }
    const double k = static_cast<double>(point.fold_aurocs.size());
    point.mean_auroc =
        std::accumulate(point.fold_aurocs.begin(), point.fold_aurocs.end(), 0.0) / k;
    double var = 0.0;
    for (double a : point.fold_aurocs) var += (a - point.mean_auroc) * (a - point.mean_auroc);
    point.std_auroc = std::sqrt(var / k);
    if (point.mean_auroc > best + 1e-12) {
      best = point.mean_auroc;
      sel.chosen_C = point.C;
    }
    sel.per_C.push_back(std::move(point));
  }
  return sel;
}

void to_json(nlohmann::json& j, const ProbeModel& m) {
  j = nlohmann::json::object();
  j["source_domain"] = m.source_domain;
  j["reg_strength"] = m.reg_strength;
  j["intercept"] = m.intercept;
  j["seed"] = m.seed;
  j["n_features"] = m.n_features;
  j["converged"] = m.converged;
  j["n_iter"] = m.n_iter;
  auto& st = j["standardization"] = nlohmann::json::array();
  for (const auto& s : m.standardization) {
    st.push_back({{"index", s.index}, {"mean", s.mean}, {"std", s.std}});
  }
  auto& ws = j["weights"] = nlohmann::json::array();
  for (const auto& w : m.weights) ws.push_back({{"index", w.index}, {"value", w.value}});
}

void from_json(const nlohmann::json& j, ProbeModel& m) {
  m = ProbeModel{};
  m.source_domain = j.at("source_domain").get<std::string>();
  m.reg_strength = j.at("reg_strength").get<double>();
  m.intercept = j.at("intercept").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.n_features = j.value("n_features", std::size_t{0});
  m.converged = j.value("converged", true);
  m.n_iter = j.value("n_iter", std::size_t{0});
  for (const auto& s : j.at("standardization")) {
    m.standardization.push_back(
        {s.at("index").get<std::size_t>(), s.at("mean").get<double>(), s.at("std").get<double>()});
  }
  for (const auto& w : j.at("weights")) {
    m.weights.push_back({w.at("index").get<std::size_t>(), w.at("value").get<double>()});
  }
  auto by_index = [](const auto& a, const auto& b) { return a.index < b.index; };
  std::sort(m.weights.begin(), m.weights.end(), by_index);
  std::sort(m.standardization.begin(), m.standardization.end(), by_index);
  if (m.weights.size() != m.standardization.size()) {
    throw FormatError("probe JSON: weights and standardization lists differ in length");
  }
  for (std::size_t k = 0; k < m.weights.size(); ++k) {
    if (m.weights[k].index != m.standardization[k].index) {
      throw FormatError("probe JSON: weights and standardization index sets differ");
    }
    if (m.weights[k].value == 0.0) {
      throw FormatError("probe JSON: stored weights must be nonzero");
    }
  }
}

}  // namespace hnt
