#include "oracles.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <unistd.h>

namespace oracle {

double auroc_pairs(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        wins += 0.5;
      }
    }
  }
  return wins / pairs;
}

Scaling column_scaling(const std::vector<double>& X, std::size_t n, std::size_t p) {
  Scaling s{std::vector<double>(p, 0.0), std::vector<double>(p, 0.0)};
  for (std::size_t j = 0; j < p; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += X[i * p + j];
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += (X[i * p + j] - m) * (X[i * p + j] - m);
    s.mean[j] = m;
    s.sd[j] = std::sqrt(v / static_cast<double>(n));
    if (s.sd[j] <= 1e-10 * std::max(1.0, std::abs(m))) s.sd[j] = 0.0;
  }
  return s;
}

namespace {

std::vector<double> standardized(const std::vector<double>& X, std::size_t n, std::size_t p) {
  const auto s = column_scaling(X, n, p);
  std::vector<double> Z(n * p, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      if (s.sd[j] > 0.0) Z[i * p + j] = (X[i * p + j] - s.mean[j]) / s.sd[j];
    }
  }
  return Z;
}

double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

double smooth_loss(const std::vector<double>& Z, const std::vector<int>& y, std::size_t n,
                   std::size_t p, const std::vector<double>& w, double b) {
  double L = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double m = b;
    for (std::size_t j = 0; j < p; ++j) m += Z[i * p + j] * w[j];
    L += softplus(m) - (y[i] == 1 ? m : 0.0);
  }
  return L / static_cast<double>(n);
}

void smooth_grad(const std::vector<double>& Z, const std::vector<int>& y, std::size_t n,
                 std::size_t p, const std::vector<double>& w, double b, std::vector<double>& gw,
                 double& gb) {
  std::fill(gw.begin(), gw.end(), 0.0);
  gb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double m = b;
    for (std::size_t j = 0; j < p; ++j) m += Z[i * p + j] * w[j];
    const double r = 1.0 / (1.0 + std::exp(-m)) - y[i];
    for (std::size_t j = 0; j < p; ++j) gw[j] += r * Z[i * p + j];
    gb += r;
  }
  for (auto& g : gw) g /= static_cast<double>(n);
  gb /= static_cast<double>(n);
}

}  // namespace

double logreg_objective(const std::vector<double>& X, const std::vector<int>& y, std::size_t n,
                        std::size_t p, const std::vector<double>& w, double b, double lambda) {
  const auto Z = standardized(X, n, p);
  double l1 = 0.0;
  for (double v : w) l1 += std::abs(v);
  return smooth_loss(Z, y, n, p, w, b) + lambda * l1;
}

LogregSolution prox_gradient_logreg(const std::vector<double>& X, const std::vector<int>& y,
                                    std::size_t n, std::size_t p, double lambda, double tol,
                                    std::size_t max_iter) {
  const auto Z = standardized(X, n, p);
  const auto sc = column_scaling(X, n, p);
  // Lipschitz bound of the logistic gradient: (1/4) * ||[Z 1]||_F^2 / n.
  double fro = 1.0;
  for (double z : Z) fro += z * z / static_cast<double>(n);
  const double step = 1.0 / (0.25 * fro);

  std::vector<double> w(p, 0.0), w_prev(p, 0.0), v(p, 0.0), gw(p);
  double b = 0.0, b_prev = 0.0, vb = 0.0, gb = 0.0;
  double t = 1.0;
  double prev_obj = smooth_loss(Z, y, n, p, w, b);
  LogregSolution sol;
  for (sol.iterations = 0; sol.iterations < max_iter; ++sol.iterations) {
    smooth_grad(Z, y, n, p, v, vb, gw, gb);
    w_prev = w;
    b_prev = b;
    double move = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      if (sc.sd[j] == 0.0) {
        w[j] = 0.0;
        continue;
      }
      const double u = v[j] - step * gw[j];
      w[j] = std::copysign(std::max(0.0, std::abs(u) - step * lambda), u);
      move = std::max(move, std::abs(w[j] - w_prev[j]));
    }
    b = vb - step * gb;
    move = std::max(move, std::abs(b - b_prev));

    double l1 = 0.0;
    for (double x : w) l1 += std::abs(x);
    const double obj = smooth_loss(Z, y, n, p, w, b) + lambda * l1;
    // Adaptive restart keeps the accelerated iterates monotone.
    double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    if (obj > prev_obj) {
      t_next = 1.0;
      t = 1.0;
    }
    const double beta = (t - 1.0) / t_next;
    for (std::size_t j = 0; j < p; ++j) v[j] = w[j] + beta * (w[j] - w_prev[j]);
    vb = b + beta * (b - b_prev);
    t = t_next;
    prev_obj = std::min(prev_obj, obj);
    if (move < tol) break;
  }
  sol.w = w;
  sol.b = b;
  double l1 = 0.0;
  for (double x : w) l1 += std::abs(x);
  sol.objective = smooth_loss(Z, y, n, p, w, b) + lambda * l1;
  return sol;
}

std::vector<bool> bh_by_hand(const std::vector<double>& p, double alpha) {
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
  std::size_t k = 0;
  for (std::size_t r = m; r >= 1; --r) {
    if (p[order[r - 1]] <= static_cast<double>(r) * alpha / static_cast<double>(m)) {
      k = r;
      break;
    }
  }
  std::vector<bool> out(m, false);
  for (std::size_t r = 0; r < k; ++r) out[order[r]] = true;
  return out;
}

namespace {

template <class F>
double simpson(F f, double a, double b, std::size_t intervals) {
  if (intervals % 2) ++intervals;
  const double h = (b - a) / static_cast<double>(intervals);
  double s = f(a) + f(b);
  for (std::size_t k = 1; k < intervals; ++k) {
    s += f(a + h * static_cast<double>(k)) * (k % 2 ? 4.0 : 2.0);
  }
  return s * h / 3.0;
}

}  // namespace

double t_two_sided_p(double t, double df) {
  const double logc = std::lgamma((df + 1.0) / 2.0) - std::lgamma(df / 2.0) -
                      0.5 * std::log(df * M_PI);
  auto density = [&](double x) {
    return std::exp(logc - (df + 1.0) / 2.0 * std::log1p(x * x / df));
  };
  const double mass = simpson(density, 0.0, std::abs(t), 200000);
  return std::max(0.0, 1.0 - 2.0 * mass);
}

double normal_cdf(double x) {
  auto phi = [](double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); };
  const double half = simpson(phi, 0.0, std::abs(x), 200000);
  return x >= 0 ? 0.5 + half : 0.5 - half;
}

double gap_delta(const std::vector<double>& m, std::size_t D) {
  double within = 0.0, cross = 0.0;
  for (std::size_t i = 0; i < D; ++i) {
    for (std::size_t j = 0; j < D; ++j) (i == j ? within : cross) += m[i * D + j];
  }
  const double d = static_cast<double>(D);
  return within / d - cross / (d * (d - 1.0));
}

double exact_gap_p_rows_columns(const std::vector<double>& m, std::size_t D) {
  const double obs = gap_delta(m, D);
  std::vector<std::size_t> r(D), c(D);
  std::iota(r.begin(), r.end(), 0);
  std::size_t total = 0, hits = 0;
  do {
    std::iota(c.begin(), c.end(), 0);
    do {
      std::vector<double> q(D * D);
      for (std::size_t i = 0; i < D; ++i) {
        for (std::size_t j = 0; j < D; ++j) q[i * D + j] = m[r[i] * D + c[j]];
      }
      ++total;
      hits += gap_delta(q, D) >= obs - 1e-12;
    } while (std::next_permutation(c.begin(), c.end()));
  } while (std::next_permutation(r.begin(), r.end()));
  return static_cast<double>(hits) / static_cast<double>(total);
}

double exact_gap_p_cells(const std::vector<double>& m, std::size_t D) {
  const double obs = gap_delta(m, D);
  std::vector<std::size_t> pos(D * D);
  std::iota(pos.begin(), pos.end(), 0);
  std::size_t total = 0, hits = 0;
  do {
    std::vector<double> q(D * D);
    for (std::size_t k = 0; k < D * D; ++k) q[k] = m[pos[k]];
    ++total;
    hits += gap_delta(q, D) >= obs - 1e-12;
  } while (std::next_permutation(pos.begin(), pos.end()));
  return static_cast<double>(hits) / static_cast<double>(total);
}

double ks_uniform(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double k = static_cast<double>(i);
    d = std::max({d, (k + 1.0) / n - x[i], x[i] - k / n});
  }
  return d;
}

namespace {

std::vector<double> midranks(const std::vector<double>& v) {
  std::vector<std::size_t> o(v.size());
  std::iota(o.begin(), o.end(), 0);
  std::sort(o.begin(), o.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < o.size();) {
    std::size_t j = i;
    while (j + 1 < o.size() && v[o[j + 1]] == v[o[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[o[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = midranks(a), rb = midranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::filesystem::path scratch_dir(const std::string& name) {
  static std::atomic<int> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("hnt_test_" + name + "_" + std::to_string(::getpid()) + "_" +
              std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::pair<std::string, std::string>> tree(const std::filesystem::path& dir) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) {
      out.emplace_back(std::filesystem::relative(e.path(), dir).string(), slurp(e.path()));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace oracle
