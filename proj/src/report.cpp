#include "hnt/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hnt/error.hpp"
#include "hnt/intervention_stats.hpp"
#include "hnt/parallel.hpp"
#include "hnt/rng.hpp"

namespace fs = std::filesystem;

namespace hnt {

std::string format_double(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw NumericalError("cannot format double");
  return std::string(buf, end);
}

// ---------------------------------------------------------------- config

void RunConfig::validate() const {
  if (grid.empty()) throw UsageError("grid must list at least one C");
  for (double c : grid) {
    if (!(c > 0.0 && std::isfinite(c))) throw UsageError("grid values must be positive");
  }
  if (folds < 2) throw UsageError("folds must be >= 2");
  if (!(tol > 0.0)) throw UsageError("tol must be positive");
  if (max_iter == 0) throw UsageError("max_iter must be >= 1");
  if (n_boot == 0) throw UsageError("n_boot must be >= 1");
  if (n_perm == 0) throw UsageError("n_perm must be >= 1");
  if (n_gap_perm == 0) throw UsageError("n_gap_perm must be >= 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw UsageError("test_fraction must lie in (0, 1)");
  }
  if (!(chance_band >= 0.0 && chance_band < 0.5)) {
    throw UsageError("chance_band must lie in [0, 0.5)");
  }
  if (!(bh_alpha > 0.0 && bh_alpha < 1.0)) throw UsageError("bh_alpha must lie in (0, 1)");
  if (stability_seeds.size() == 1) {
    throw UsageError("stability_seeds needs at least two seeds (or none)");
  }
  auto sorted = domains;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw UsageError("domains lists a domain twice");
  }
}

TrainConfig RunConfig::train_config(const std::string& domain) const {
  TrainConfig t;
  t.grid = grid;
  t.n_folds = folds;
  t.test_fraction = test_fraction;
  t.solver = SolverOptions{tol, max_iter};
  t.seed = derive_seed(seed, "domain", fnv1a64(domain));
  return t;
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"seed", c.seed},
                     {"stability_seeds", c.stability_seeds},
                     {"grid", c.grid},
                     {"folds", c.folds},
                     {"tol", c.tol},
                     {"max_iter", c.max_iter},
                     {"n_boot", c.n_boot},
                     {"n_perm", c.n_perm},
                     {"n_gap_perm", c.n_gap_perm},
                     {"add_one", c.add_one},
                     {"gap_scheme", to_string(c.gap_scheme)},
                     {"test_fraction", c.test_fraction},
                     {"chance_band", c.chance_band},
                     {"bh_alpha", c.bh_alpha},
                     {"strategy", to_string(c.strategy)},
                     {"domains", c.domains},
                     {"model_size_b", c.model_size_b ? nlohmann::json(*c.model_size_b)
                                                     : nlohmann::json(nullptr)}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  c = RunConfig{};
  c.seed = j.value("seed", c.seed);
  c.stability_seeds = j.value("stability_seeds", c.stability_seeds);
  c.grid = j.value("grid", c.grid);
  c.folds = j.value("folds", c.folds);
  c.tol = j.value("tol", c.tol);
  c.max_iter = j.value("max_iter", c.max_iter);
  c.n_boot = j.value("n_boot", c.n_boot);
  c.n_perm = j.value("n_perm", c.n_perm);
  c.n_gap_perm = j.value("n_gap_perm", c.n_gap_perm);
  c.add_one = j.value("add_one", c.add_one);
  c.gap_scheme = parse_gap_scheme(j.value("gap_scheme", std::string("cells")));
  c.test_fraction = j.value("test_fraction", c.test_fraction);
  c.chance_band = j.value("chance_band", c.chance_band);
  c.bh_alpha = j.value("bh_alpha", c.bh_alpha);
  c.strategy = parse_strategy(j.value("strategy", std::string("direct")));
  c.domains = j.value("domains", c.domains);
  if (j.contains("model_size_b") && !j["model_size_b"].is_null()) {
    c.model_size_b = j["model_size_b"].get<double>();
  }
}

// ---------------------------------------------------------------- stages

void rethrow_with_stage(const std::string& stage) {
  const std::string tag = "[" + stage + "] ";
  try {
    throw;
  } catch (const UsageError& e) {
    throw UsageError(tag + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(tag + e.what());
  } catch (const DataError& e) {
    throw DataError(tag + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(tag + e.what());
  } catch (const fs::filesystem_error& e) {
    throw DataError(tag + e.what());
  }
}

namespace {

template <class F>
auto staged(const std::string& stage, F&& f) {
  try {
    return f();
  } catch (...) {
    rethrow_with_stage(stage);
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

std::string matrix_stem(const TransferMatrix& m) {
  return (m.model_id.empty() ? std::string("matrix") : m.model_id) + "_" +
         std::string(to_string(m.strategy));
}

}  // namespace

std::map<std::string, FeatureSet> load_feature_dir(const fs::path& dir, Strategy strategy) {
  if (!fs::is_directory(dir)) throw DataError("feature directory " + dir.string() + " not found");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".cett") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::map<std::string, FeatureSet> out;
  std::string model_id;
  for (const auto& f : files) {
    auto set = read_feature_set(f);
    if (set.strategy != strategy) continue;
    if (out.empty()) {
      model_id = set.model_id;
    } else if (set.model_id != model_id) {
      throw ComparabilityError("feature files mix models '" + model_id + "' and '" +
                               set.model_id + "'");
    }
    const std::string domain = set.domain;
    if (!out.emplace(domain, std::move(set)).second) {
      throw DataError("two feature files for domain '" + domain + "'");
    }
  }
  return out;
}

// ---------------------------------------------------------------- plots

PlotFiles emit_plot_data(const PlotData& data) {
  PlotFiles out;
  if (data.heatmap) {
    const auto& m = *data.heatmap;
    m.validate();
    std::ostringstream s;
    s << "source";
    for (const auto& d : m.domains) s << '\t' << d;
    s << '\n';
    for (std::size_t i = 0; i < m.size(); ++i) {
      s << m.domains[i];
      for (std::size_t j = 0; j < m.size(); ++j) {
        const auto& c = m.at(i, j);
        s << '\t' << (c.auroc ? format_double(*c.auroc) : "NA");
      }
      s << '\n';
    }
    out.files["heatmap.tsv"] = s.str();
  } else {
    out.notices.push_back("heatmap.tsv omitted: no transfer matrix");
  }

  if (!data.bars.empty()) {
    std::ostringstream s;
    s << "model\twithin\tcross\tdelta\n";
    for (const auto& b : data.bars) {
      s << b.model << '\t' << format_double(b.within) << '\t' << format_double(b.cross) << '\t'
        << format_double(b.delta) << '\n';
    }
    out.files["bars.tsv"] = s.str();
  } else {
    out.notices.push_back("bars.tsv omitted: no per-model gaps");
  }

  const bool any_size = std::any_of(data.bars.begin(), data.bars.end(),
                                    [](const ModelGap& b) { return b.size_b.has_value(); });
  if (any_size) {
    std::ostringstream s;
    s << "model\tsize_b\tdelta\n";
    for (const auto& b : data.bars) {
      if (!b.size_b) continue;
      s << b.model << '\t' << format_double(*b.size_b) << '\t' << format_double(b.delta) << '\n';
    }
    out.files["gap_vs_size.tsv"] = s.str();
  } else {
    out.notices.push_back("gap_vs_size.tsv omitted: no model sizes");
  }

  if (!data.cot.empty()) {
    std::ostringstream s;
    s << "model\tdomain\tdirect\tcot\tdiff\tcached\n";
    for (const auto& t : data.cot) {
      s << t.model << '\t' << t.domain << '\t' << format_double(t.direct) << '\t'
        << format_double(t.cot) << '\t' << format_double(t.cot - t.direct) << '\t'
        << (t.cached ? 1 : 0) << '\n';
    }
    out.files["direct_vs_cot.tsv"] = s.str();
  } else {
    out.notices.push_back("direct_vs_cot.tsv omitted: no CoT results");
  }
  return out;
}

// ---------------------------------------------------------------- bundle

void write_bundle(const Bundle& bundle, const fs::path& out_dir) {
  if (out_dir.empty()) throw UsageError("no output directory given");
  const fs::path target = fs::absolute(out_dir).lexically_normal();
  if (fs::exists(target) && !fs::exists(target / "run.json")) {
    throw UsageError("output directory " + target.string() +
                     " exists and is not a report bundle; refusing to replace it");
  }
  const fs::path tmp = target.parent_path() / (target.filename().string() + ".partial");
  fs::remove_all(tmp);
  try {
    fs::create_directories(tmp);
    write_text(tmp / "run.json", dump(bundle.run));
    for (const auto& m : bundle.matrices) {
      write_text(tmp / "matrices" / (matrix_stem(m) + ".csv"), to_csv(m));
      write_text(tmp / "matrices" / (matrix_stem(m) + ".json"), dump(nlohmann::json(m)));
    }
    write_text(tmp / "gap.json", dump(bundle.gap));
    write_text(tmp / "robustness.json", dump(bundle.robustness));
    write_text(tmp / "diagnostics.json", dump(bundle.diagnostics));
    for (const auto& [domain, probe] : bundle.probes) {
      write_text(tmp / "probes" / (domain + ".json"), dump(nlohmann::json(probe)));
    }
    const auto plots = emit_plot_data(bundle.plot);
    for (const auto& [name, text] : plots.files) write_text(tmp / "plotdata" / name, text);
    if (!plots.notices.empty()) {
      std::string notes;
      for (const auto& n : plots.notices) notes += n + "\n";
      write_text(tmp / "plotdata" / "notices.txt", notes);
    }
    for (const auto& [rel, text] : bundle.extra_files) write_text(tmp / rel, text);
    if (fs::exists(target)) fs::remove_all(target);
    fs::rename(tmp, target);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    rethrow_with_stage("write");
  }
}

// ---------------------------------------------------------------- pipeline

PipelineResult run_pipeline(const RunConfig& config, const fs::path& feature_dir) {
  config.validate();
  PipelineResult res;
  auto sets = staged("load", [&] { return load_feature_dir(feature_dir, config.strategy); });

  std::vector<std::string> domains = config.domains;
  if (domains.empty()) {
    for (const auto& [d, _] : sets) domains.push_back(d);
  }
  staged("load", [&] {
    for (const auto& d : domains) {
      if (!sets.count(d)) {
        throw DataError("missing feature file for domain '" + d + "' in " + feature_dir.string());
      }
    }
    if (domains.size() < 2) throw DataError("need at least two domains, found " +
                                            std::to_string(domains.size()));
    return 0;
  });
  const std::size_t D = domains.size();
  const std::string model_id = sets.at(domains.front()).model_id;

  // Split, select C and fit every domain's probe.
  res.runs.resize(D);
  staged("train", [&] {
    parallel_for(D, [&](std::size_t k) {
      const auto& set = sets.at(domains[k]);
      auto& run = res.runs[k];
      run.domain = domains[k];
      run.experiment = run_experiment(set.matrix(), set.labels(), config.train_config(run.domain));
      run.experiment.probe.source_domain = run.domain;
      run.neurons = selected_neurons(run.experiment.probe, set.d_ff);
    });
    return 0;
  });

  std::map<std::string, ProbeModel> probes;
  std::map<std::string, FeatureSet> tests;
  for (std::size_t k = 0; k < D; ++k) {
    probes.emplace(domains[k], res.runs[k].experiment.probe);
    tests.emplace(domains[k], sets.at(domains[k]).subset(res.runs[k].experiment.test_rows));
  }
  res.matrix = staged("transfer", [&] { return build_transfer_matrix(domains, probes, tests); });
  res.matrix.model_id = model_id;
  res.matrix.strategy = config.strategy;

  std::vector<std::string> warnings = res.matrix.warnings;
  res.gap = staged("gap", [&] { return transfer_gap(res.matrix); });
  const bool all_valid = res.gap.n_excluded == 0;
  if (all_valid) {
    res.gap_perm = staged("gap", [&] {
      return permutation_test_gap(res.matrix, config.n_gap_perm, derive_seed(config.seed, "gap"),
                                  config.gap_scheme, config.add_one);
    });
  } else {
    warnings.push_back("gap permutation test skipped: " + std::to_string(res.gap.n_excluded) +
                       " invalid transfer cells");
  }
  std::optional<double> effect;
  try {
    effect = cohens_d(res.gap.within_values, res.gap.cross_values);
  } catch (const UndefinedMetricError& e) {
    warnings.push_back(std::string("Cohen's d not reported: ") + e.what());
  }

  // Bootstrap, label permutation and verdicts per domain.
  staged("robustness", [&] {
    const RobustnessOptions opts{config.n_boot, config.n_perm, config.add_one};
    for (std::size_t k = 0; k < D; ++k) {
      const auto& set = sets.at(domains[k]);
      auto& run = res.runs[k];
      run.robustness = assess_experiment(run.experiment, set.matrix(), set.labels(),
                                         config.train_config(run.domain), opts,
                                         derive_seed(config.seed, "robustness",
                                                     fnv1a64(run.domain)));
      run.robustness.model = model_id;
      run.robustness.domain = run.domain;
      run.robustness.strategy = config.strategy;
    }
    return 0;
  });

  if (config.stability_seeds.size() >= 2) {
    staged("stability", [&] {
      for (std::size_t k = 0; k < D; ++k) {
        const auto& set = sets.at(domains[k]);
        std::vector<HNeuronSet> neuron_sets(config.stability_seeds.size());
        parallel_for(neuron_sets.size(), [&](std::size_t s) {
          auto tc = config.train_config(domains[k]);
          tc.seed = derive_seed(config.stability_seeds[s], "domain", fnv1a64(domains[k]));
          const auto exp = run_experiment(set.matrix(), set.labels(), tc);
          neuron_sets[s] = selected_neurons(exp.probe, set.d_ff);
        });
        res.runs[k].stability = jaccard_stability(neuron_sets);
      }
      return 0;
    });
  }

  std::vector<double> pvals;
  for (const auto& run : res.runs) pvals.push_back(run.robustness.perm_p);
  const auto bh = bh_fdr(pvals, config.bh_alpha);

  // Assemble the bundle.
  Bundle& b = res.bundle;
  b.run = nlohmann::json{{"command", "report"},
                         {"config", config},
                         {"feature_dir", feature_dir.string()},
                         {"model_id", model_id},
                         {"domains", domains}};
  auto& inputs = b.run["inputs"] = nlohmann::json::array();
  for (const auto& d : domains) {
    const auto& s = sets.at(d);
    inputs.push_back({{"domain", d},
                      {"n_samples", s.n_samples()},
                      {"n_features", s.n_features},
                      {"n_layers", s.n_layers},
                      {"d_ff", s.d_ff},
                      {"n_positive", s.count_label(1)},
                      {"created_utc", s.created_utc}});
  }
  b.matrices.push_back(res.matrix);

  b.gap = nlohmann::json{{"model_id", model_id},
                         {"strategy", to_string(config.strategy)},
                         {"gap", res.gap},
                         {"permutation", res.gap_perm ? nlohmann::json(*res.gap_perm)
                                                      : nlohmann::json(nullptr)},
                         {"cohens_d", effect ? nlohmann::json(*effect) : nlohmann::json(nullptr)}};

  auto& rob = b.robustness = nlohmann::json::object();
  rob["reports"] = nlohmann::json::array();
  for (const auto& run : res.runs) rob["reports"].push_back(run.robustness);
  rob["bh"] = {{"alpha", config.bh_alpha},
               {"n_rejected", bh.k},
               {"threshold", bh.threshold},
               {"rejected", bh.rejected},
               {"adjusted", bh.adjusted}};
  rob["stability"] = nlohmann::json::object();
  for (const auto& run : res.runs) {
    if (run.stability) rob["stability"][run.domain] = *run.stability;
  }

  auto& diag = b.diagnostics = nlohmann::json::object();
  const auto pairs = pair_diagnostics(res.matrix, config.chance_band);
  auto& pj = diag["pairs"] = nlohmann::json::array();
  for (const auto& p : pairs.ranked) {
    pj.push_back({{"source", p.source},
                  {"target", p.target},
                  {"auroc", p.auroc},
                  {"kind", to_string(p.kind)}});
  }
  diag["chance_band"] = pairs.chance_band;
  auto& dj = diag["domains"] = nlohmann::json::object();
  for (const auto& run : res.runs) {
    const auto& e = run.experiment;
    nlohmann::json grid = nlohmann::json::array();
    for (const auto& g : e.cv.per_C) {
      grid.push_back({{"C", g.C},
                      {"mean_auroc", g.mean_auroc},
                      {"std_auroc", g.std_auroc},
                      {"fold_aurocs", g.fold_aurocs}});
    }
    nlohmann::json neurons = nlohmann::json::array();
    for (const auto& n : run.neurons.entries) {
      neurons.push_back({{"layer", n.layer}, {"neuron", n.neuron}, {"coefficient", n.coefficient}});
    }
    dj[run.domain] = {{"n_train", e.train_rows.size()},
                      {"n_test", e.test_rows.size()},
                      {"chosen_C", e.cv.chosen_C},
                      {"cv_grid", grid},
                      {"skipped_folds", e.cv.skipped_folds},
                      {"cv_warnings", e.cv.warnings},
                      {"converged", e.probe.converged},
                      {"n_iter", e.probe.n_iter},
                      {"test_auroc", e.test_auroc},
                      {"n_hneurons", run.neurons.size()},
                      {"hneurons", neurons}};
  }
  diag["warnings"] = warnings;

  for (const auto& [d, p] : probes) b.probes.emplace(d, p);
  b.plot.heatmap = res.matrix;
  b.plot.bars.push_back(
      ModelGap{model_id, res.gap.mean_within, res.gap.mean_cross, res.gap.delta, config.model_size_b});
  return res;
}

// ---------------------------------------------------------------- replay

void to_json(nlohmann::json& j, const ReplayCheck& c) {
  j = nlohmann::json{{"name", c.name},
                     {"op", c.op},
                     {"expected", c.expected},
                     {"actual", c.actual},
                     {"tolerance", c.tolerance},
                     {"pass", c.pass}};
}

bool ReplayReport::all_pass() const { return n_failed() == 0; }

std::size_t ReplayReport::n_failed() const {
  return static_cast<std::size_t>(
      std::count_if(checks.begin(), checks.end(), [](const ReplayCheck& c) { return !c.pass; }));
}

namespace {

class Checks {
 public:
  explicit Checks(std::vector<ReplayCheck>& out) : out_(out) {}

  void approx(std::string name, double expected, double actual, double tol) {
    out_.push_back({std::move(name), "approx", expected, actual, tol,
                    std::abs(actual - expected) <= tol + 1e-12});
  }
  void below(std::string name, double bound, double actual) {
    out_.push_back({std::move(name), "below", bound, actual, 0.0, actual < bound});
  }

 private:
  std::vector<ReplayCheck>& out_;
};

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::vector<std::vector<std::string>> rows;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> fields;
    std::string f;
    std::istringstream ls(line);
    while (std::getline(ls, f, ',')) fields.push_back(f);
    rows.push_back(std::move(fields));
  }
  return rows;
}

double to_double(const std::string& s, const fs::path& file) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(file.string() + ": bad number '" + s + "'");
  }
}

std::vector<RobustnessReport> read_robustness_rows(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::vector<RobustnessReport> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(nlohmann::json::parse(line).get<RobustnessReport>());
  }
  return rows;
}

}  // namespace

ReplayReport replay_fixtures(const fs::path& dir) {
  ReplayReport rep;
  Checks check(rep.checks);

  const auto models = staged("fixtures", [&] { return nlohmann::json::parse(read_text(dir / "models.json")); });
  const auto expected =
      staged("fixtures", [&] { return nlohmann::json::parse(read_text(dir / "expected.json")); });
  const double tol = expected.value("tolerance", 0.001);
  const auto domain_order = models.at("domains").get<std::vector<std::string>>();

  // Per-model matrices and gaps.
  std::map<std::string, double> sizes;
  staged("fixtures", [&] {
    for (const auto& m : models.at("models")) {
      const auto id = m.at("model_id").get<std::string>();
      auto mat = transfer_matrix_from_csv(read_text(dir / m.at("matrix").get<std::string>()), id);
      if (mat.domains != domain_order) {
        throw FormatError("matrix for '" + id + "' does not follow the fixture domain order");
      }
      sizes[id] = m.at("size_b").get<double>();
      rep.matrices.push_back(std::move(mat));
    }
    return 0;
  });
  const auto& per_model = expected.at("per_model_delta");
  for (const auto& m : rep.matrices) {
    const auto g = transfer_gap(m);
    if (per_model.contains(m.model_id)) {
      check.approx("delta/" + m.model_id, per_model[m.model_id].get<double>(), g.delta, tol);
    }
    rep.bundle.plot.bars.push_back(
        ModelGap{m.model_id, g.mean_within, g.mean_cross, g.delta, sizes.at(m.model_id)});
  }

  rep.mean = aggregate_matrices(rep.matrices);
  const auto grand = transfer_gap(rep.mean);
  check.approx("grand/within", expected.at("grand_within").get<double>(), grand.mean_within, tol);
  check.approx("grand/cross", expected.at("grand_cross").get<double>(), grand.mean_cross, tol);
  check.approx("grand/delta", expected.at("grand_delta").get<double>(), grand.delta, tol);

  const auto published_mean = staged("fixtures", [&] {
    return transfer_matrix_from_csv(read_text(dir / models.at("mean_matrix").get<std::string>()),
                                    "published_mean");
  });
  if (published_mean.domains != rep.mean.domains) throw FormatError("mean matrix domain order differs");
  for (std::size_t i = 0; i < published_mean.size(); ++i) {
    for (std::size_t j = 0; j < published_mean.size(); ++j) {
      check.approx("mean_matrix/" + published_mean.domains[i] + "->" + published_mean.domains[j],
                   published_mean.value(i, j), rep.mean.value(i, j), tol);
    }
  }

  // Effect size over pooled within and cross cells of every model.
  std::vector<double> within, cross;
  for (const auto& m : rep.matrices) {
    const auto g = transfer_gap(m);
    within.insert(within.end(), g.within_values.begin(), g.within_values.end());
    cross.insert(cross.end(), g.cross_values.begin(), g.cross_values.end());
  }
  const double d = cohens_d(within, cross);
  check.approx("cohens_d", expected.at("cohens_d").at("value").get<double>(), d,
               expected.at("cohens_d").at("tolerance").get<double>());
  const auto gap_perm = permutation_test_gap(rep.mean, kDefaultGapPerms, 0);
  check.below("gap_permutation_p", 0.001, gap_perm.p);

  // Pair diagnostics.
  nlohmann::json pair_json = nlohmann::json::object();
  for (const auto& m : rep.matrices) {
    const auto diag = pair_diagnostics(m);
    auto& arr = pair_json[m.model_id] = nlohmann::json::array();
    for (const auto& p : diag.ranked) {
      arr.push_back({{"source", p.source}, {"target", p.target}, {"auroc", p.auroc},
                     {"kind", to_string(p.kind)}});
    }
  }
  for (const auto& f : expected.value("pair_flags", nlohmann::json::array())) {
    const auto model = f.at("model").get<std::string>();
    const auto src = f.at("source").get<std::string>(), tgt = f.at("target").get<std::string>();
    const std::string name = "pair/" + model + "/" + src + "->" + tgt;
    double actual = -1.0;
    bool kind_ok = false;
    for (const auto& p : pair_json.value(model, nlohmann::json::array())) {
      if (p["source"] == src && p["target"] == tgt) {
        actual = p["auroc"].get<double>();
        kind_ok = p["kind"] == f.at("kind");
      }
    }
    check.approx(name, f.at("auroc").get<double>(), actual, tol);
    check.approx(name + "/kind_" + f.at("kind").get<std::string>(), 1.0, kind_ok ? 1.0 : 0.0, 0.0);
  }

  if (expected.contains("gap_vs_size")) {
    const auto& g = expected["gap_vs_size"];
    const auto id = g.at("model").get<std::string>();
    for (const auto& bar : rep.bundle.plot.bars) {
      if (bar.model != id) continue;
      check.approx("gap_vs_size/" + id + "/size_b", g.at("size_b").get<double>(), bar.size_b.value(),
                   0.0);
      check.approx("gap_vs_size/" + id + "/delta", g.at("delta").get<double>(), bar.delta, tol);
    }
  }

  // Robustness rows: verdict rule, verdict counts and BH.
  nlohmann::json rob = nlohmann::json::object();
  std::vector<RobustnessReport> rows;
  for (const char* name : {"robustness_direct.jsonl", "robustness_cot.jsonl"}) {
    if (!fs::exists(dir / name)) continue;
    auto part = staged("fixtures", [&] { return read_robustness_rows(dir / name); });
    rows.insert(rows.end(), part.begin(), part.end());
  }
  if (!rows.empty()) {
    std::size_t mismatches = 0, robust = 0;
    std::vector<double> pvals;
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) {
      const auto v = classify_verdict(r.ci_low, r.ci_high, r.perm_p);
      mismatches += v != r.verdict;
      robust += v == Verdict::kRobust;
      pvals.push_back(r.perm_p);
      arr.push_back(r);
    }
    check.approx("verdicts/mismatches", 0.0, static_cast<double>(mismatches), 0.0);
    const auto& ev = expected.at("verdicts");
    check.approx("verdicts/n_robust", ev.at("n_robust").get<double>(), static_cast<double>(robust),
                 0.0);
    check.approx("verdicts/n_weak", ev.at("n_weak").get<double>(),
                 static_cast<double>(rows.size() - robust), 0.0);
    const auto& eb = expected.at("bh");
    const auto bh = bh_fdr(pvals, eb.at("alpha").get<double>());
    check.approx("bh/n_experiments", eb.at("n_experiments").get<double>(),
                 static_cast<double>(rows.size()), 0.0);
    check.approx("bh/n_rejected", eb.at("n_rejected").get<double>(), static_cast<double>(bh.k),
                 0.0);
    rob["reports"] = arr;
    rob["bh"] = {{"alpha", eb.at("alpha")},
                 {"n_rejected", bh.k},
                 {"threshold", bh.threshold},
                 {"rejected", bh.rejected},
                 {"adjusted", bh.adjusted}};
  }

  // Direct vs CoT within-domain table.
  if (fs::exists(dir / "within_direct_cot.csv")) {
    const auto path = dir / "within_direct_cot.csv";
    const auto csv = staged("fixtures", [&] { return read_csv_rows(path); });
    std::size_t mismatched = 0, improved = 0, degraded = 0, cached = 0;
    double sum_direct = 0.0, sum_cot = 0.0;
    for (const auto& r : csv) {
      if (r.size() != 5) throw FormatError(path.string() + ": expected 5 fields per row");
      CotTriplet t{r[0], r[1], to_double(r[2], path), to_double(r[3], path), r[4] == "1"};
      sum_direct += t.direct;
      sum_cot += t.cot;
      if (t.cached) {
        ++cached;
      } else if (t.cot > t.direct) {
        ++improved;
      } else if (t.cot < t.direct) {
        ++degraded;
      }
      for (const auto& m : rep.matrices) {
        if (m.model_id != t.model) continue;
        const std::size_t k = m.index_of(t.domain);
        mismatched += std::abs(m.value(k, k) - t.direct) > 5e-4;
      }
      rep.bundle.plot.cot.push_back(std::move(t));
    }
    const double n = static_cast<double>(csv.size());
    check.approx("cot/direct_matches_matrix_diagonals", 0.0, static_cast<double>(mismatched), 0.0);
    check.approx("cot/mean_direct", expected.at("grand_within").get<double>(), sum_direct / n, tol);
    if (expected.contains("cot")) {
      const auto& ec = expected["cot"];
      check.approx("cot/mean_cot", ec.at("mean_cot").get<double>(), sum_cot / n, tol);
      check.approx("cot/n_cached", ec.at("n_cached").get<double>(), static_cast<double>(cached), 0.0);
      check.approx("cot/n_improved", ec.at("n_improved").get<double>(),
                   static_cast<double>(improved), 0.0);
      check.approx("cot/n_degraded", ec.at("n_degraded").get<double>(),
                   static_cast<double>(degraded), 0.0);
    }
  }

  // Per-sample probe scores behind one model's matrix.
  if (expected.contains("probe_scores") &&
      fs::exists(dir / expected["probe_scores"].at("file").get<std::string>())) {
    const auto& ps = expected["probe_scores"];
    const auto path = dir / ps.at("file").get<std::string>();
    const auto csv = staged("fixtures", [&] { return read_csv_rows(path); });
    const auto id = ps.at("model").get<std::string>();
    const auto it = std::find_if(rep.matrices.begin(), rep.matrices.end(),
                                 [&](const TransferMatrix& m) { return m.model_id == id; });
    if (it == rep.matrices.end()) throw FormatError("probe scores name unknown model " + id);
    std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<int>>>
        cells;
    for (const auto& r : csv) {
      if (r.size() != 5) throw FormatError(path.string() + ": expected 5 fields per row");
      auto& c = cells[{r[0], r[1]}];
      c.second.push_back(r[3] == "1" ? 1 : 0);
      c.first.push_back(to_double(r[4], path));
    }
    TransferMatrix replayed;
    replayed.domains = it->domains;
    replayed.model_id = id;
    replayed.cells.resize(it->cells.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < it->size(); ++i) {
      for (std::size_t j = 0; j < it->size(); ++j) {
        const auto f = cells.find({it->domains[i], it->domains[j]});
        if (f == cells.end()) throw FormatError("probe scores missing a cell");
        const double a = auroc(f->second.first, f->second.second);
        replayed.at(i, j) = TransferCell{a, f->second.first.size()};
        worst = std::max(worst, std::abs(std::round(a * 1000.0) / 1000.0 - it->value(i, j)));
      }
    }
    check.approx("probe_scores/" + id + "/max_abs_diff_3dp", 0.0, worst, 1e-9);
  }

  // Bootstrap CI from stored scores.
  if (expected.contains("bootstrap") &&
      fs::exists(dir / expected["bootstrap"].at("file").get<std::string>())) {
    const auto& bs = expected["bootstrap"];
    const auto path = dir / bs.at("file").get<std::string>();
    const auto csv = staged("fixtures", [&] { return read_csv_rows(path); });
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& r : csv) {
      if (r.size() != 3) throw FormatError(path.string() + ": expected 3 fields per row");
      labels.push_back(r[1] == "1" ? 1 : 0);
      scores.push_back(to_double(r[2], path));
    }
    const auto ci = bootstrap_auroc_ci(scores, labels, bs.at("n_boot").get<std::size_t>(),
                                       bs.at("seed").get<std::uint64_t>());
    const double t = bs.at("tolerance").get<double>();
    check.approx("bootstrap/point", bs.at("point").get<double>(), ci.point, tol);
    check.approx("bootstrap/ci_low", bs.at("ci")[0].get<double>(), ci.ci_low, t);
    check.approx("bootstrap/ci_high", bs.at("ci")[1].get<double>(), ci.ci_high, t);
  }

  // H-neuron set sizes from stored probes.
  if (expected.contains("hneuron_counts")) {
    const auto& hc = expected["hneuron_counts"];
    const auto d_ff = hc.at("d_ff").get<std::size_t>();
    for (const char* which : {"direct", "cot"}) {
      const auto& e = hc.at(which);
      const auto path = dir / e.at("file").get<std::string>();
      if (!fs::exists(path)) continue;
      const auto probe = staged("fixtures", [&] {
        return nlohmann::json::parse(read_text(path)).get<ProbeModel>();
      });
      check.approx(std::string("hneurons/") + hc.at("model").get<std::string>() + "/" +
                       hc.at("domain").get<std::string>() + "/" + which,
                   e.at("count").get<double>(),
                   static_cast<double>(selected_neurons(probe, d_ff).size()), 0.0);
    }
  }

  // Intervention outcomes.
  nlohmann::json interventions = nullptr;
  if (expected.contains("interventions") &&
      fs::exists(dir / expected["interventions"].at("file").get<std::string>())) {
    const auto& iv = expected["interventions"];
    const auto records = staged("fixtures", [&] {
      return read_intervention_records(dir / iv.at("file").get<std::string>());
    });
    const auto reports = analyze_interventions(records);
    const auto summary = control_comparison(reports);
    for (const auto& c : iv.at("cells")) {
      const auto cond = parse_condition(c.at("condition").get<std::string>());
      const auto rel = parse_relation(c.at("relation").get<std::string>());
      const double scale = c.at("scale").get<double>();
      const auto r = intervention_effect(records, scale, cond, rel);
      const std::string name = "intervention/" + std::string(to_string(cond)) + "/" +
                               format_double(scale) + "/" + std::string(to_string(rel));
      check.approx(name + "/delta", c.at("delta").get<double>(), r.delta_rate, 5e-5);
      if (c.contains("p")) check.approx(name + "/p", c.at("p").get<double>(), r.p_value, 5e-4);
    }
    check.below("intervention/random_control/max_abs_delta",
                iv.at("random_control_max_abs_delta").get<double>(), summary.max_abs_random);
    check.approx("intervention/any_significant", 0.0, summary.any_significant ? 1.0 : 0.0, 0.0);
    interventions = {{"effects", reports}, {"control", summary}};
  }

  // Bundle.
  Bundle& b = rep.bundle;
  b.run = {{"command", "replay-fixtures"},
           {"fixture_dir", dir.string()},
           {"models", models},
           {"tolerance", tol}};
  b.matrices = rep.matrices;
  b.matrices.push_back(rep.mean);
  nlohmann::json per = nlohmann::json::object();
  for (const auto& m : rep.matrices) per[m.model_id] = transfer_gap(m);
  b.gap = {{"per_model", per},
           {"grand", grand},
           {"permutation", gap_perm},
           {"cohens_d", d},
           {"cohens_d_pooling", "within and cross cells of all models as two populations"}};
  b.robustness = rob;
  b.diagnostics = {{"pairs", pair_json}, {"interventions", interventions}};
  b.plot.heatmap = rep.mean;
  b.extra_files["replay.json"] =
      dump({{"checks", rep.checks}, {"n_failed", rep.n_failed()}, {"all_pass", rep.all_pass()}});
  return rep;
}

}  // namespace hnt
