#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hnt/error.hpp"
#include "hnt/feature_store.hpp"
#include "hnt/intervention_stats.hpp"
#include "hnt/parallel.hpp"
#include "hnt/report.hpp"
#include "hnt/rng.hpp"
#include "hnt/robustness.hpp"
#include "hnt/sparse_logreg.hpp"
#include "hnt/synth_oracle.hpp"
#include "hnt/transfer_eval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunFlags {
  hnt::RunConfig config;
  std::string strategy = "direct";
  std::string gap_scheme = "cells";
  double model_size_b = -1.0;

  hnt::RunConfig resolve() const {
    auto c = config;
    c.strategy = hnt::parse_strategy(strategy);
    c.gap_scheme = hnt::parse_gap_scheme(gap_scheme);
    if (model_size_b >= 0.0) c.model_size_b = model_size_b;
    c.validate();
    return c;
  }
};

void add_run_options(CLI::App* sub, RunFlags& f) {
  auto& c = f.config;
  sub->add_option("--seed", c.seed, "root seed");
  sub->add_option("--grid", c.grid, "regularization strengths C")->delimiter(',');
  sub->add_option("--folds", c.folds, "cross-validation folds");
  sub->add_option("--tol", c.tol, "solver tolerance");
  sub->add_option("--max-iter", c.max_iter, "solver sweep limit");
  sub->add_option("--test-fraction", c.test_fraction, "held-out fraction per domain");
  sub->add_option("--strategy", f.strategy, "direct or cot");
  sub->add_option("--domains", c.domains, "domain order")->delimiter(',');
}

void add_stat_options(CLI::App* sub, RunFlags& f) {
  auto& c = f.config;
  sub->add_option("--n-boot", c.n_boot, "bootstrap resamples");
  sub->add_option("--n-perm", c.n_perm, "label permutations per experiment");
  sub->add_option("--n-gap-perm", c.n_gap_perm, "gap permutations");
  sub->add_flag("--add-one", c.add_one, "(count + 1) / (n + 1) permutation p-values");
  sub->add_option("--gap-scheme", f.gap_scheme, "cells or rows_columns");
  sub->add_option("--chance-band", c.chance_band, "pair diagnostic band");
  sub->add_option("--bh-alpha", c.bh_alpha, "FDR level");
  sub->add_option("--stability-seeds", c.stability_seeds, "seeds for Jaccard refits")
      ->delimiter(',');
  sub->add_option("--model-size-b", f.model_size_b, "parameter count (billions) for plots");
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw hnt::DataError("cannot write " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw hnt::DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

hnt::TransferMatrix read_matrix(const fs::path& path) {
  const auto text = read_file(path);
  if (path.extension() == ".json") {
    try {
      return json::parse(text).get<hnt::TransferMatrix>();
    } catch (const json::exception& e) {
      throw hnt::FormatError(path.string() + ": " + e.what());
    }
  }
  return hnt::transfer_matrix_from_csv(text, path.stem().string());
}

// Recomputes each domain's split exactly as training did.
std::map<std::string, hnt::FeatureSet> test_sets(const std::map<std::string, hnt::FeatureSet>& sets,
                                                 const hnt::RunConfig& c) {
  std::map<std::string, hnt::FeatureSet> out;
  for (const auto& [d, s] : sets) {
    const auto tc = c.train_config(d);
    const auto mask = hnt::stratified_test_mask(s.labels(), tc.test_fraction, tc.seed);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) rows.push_back(i);
    }
    out.emplace(d, s.subset(rows));
  }
  return out;
}

std::vector<std::string> ordered_domains(const std::map<std::string, hnt::FeatureSet>& sets,
                                         const hnt::RunConfig& c) {
  if (!c.domains.empty()) return c.domains;
  std::vector<std::string> out;
  for (const auto& [d, _] : sets) out.push_back(d);
  return out;
}

int cmd_simulate(const hnt::SynthConfig& sc, const std::string& out) {
  const auto data = hnt::generate_domains(sc);
  hnt::write_synthetic(data, out);
  std::cout << "wrote " << data.domains.size() << " domains (" << data.layout.topology
            << " topology) to " << out << '\n';
  return 0;
}

int cmd_train(const hnt::RunConfig& c, const std::string& features, const std::string& out) {
  const auto sets = hnt::load_feature_dir(features, c.strategy);
  json summary = json::object();
  for (const auto& d : ordered_domains(sets, c)) {
    const auto it = sets.find(d);
    if (it == sets.end()) throw hnt::DataError("missing feature file for domain '" + d + "'");
    const auto& s = it->second;
    auto exp = hnt::run_experiment(s.matrix(), s.labels(), c.train_config(d));
    exp.probe.source_domain = d;
    write_file(fs::path(out) / "probes" / (d + ".json"), json(exp.probe).dump(2) + "\n");
    summary[d] = {{"chosen_C", exp.cv.chosen_C},
                  {"cv_mean", exp.cv.chosen().mean_auroc},
                  {"cv_std", exp.cv.chosen().std_auroc},
                  {"test_auroc", exp.test_auroc},
                  {"n_weights", exp.probe.weights.size()},
                  {"converged", exp.probe.converged},
                  {"warnings", exp.cv.warnings}};
    std::printf("%-16s C=%-8s test AUROC %.3f  %zu weights\n", d.c_str(),
                hnt::format_double(exp.cv.chosen_C).c_str(), exp.test_auroc,
                exp.probe.weights.size());
  }
  write_file(fs::path(out) / "train.json",
             json{{"config", c}, {"domains", summary}}.dump(2) + "\n");
  return 0;
}

int cmd_transfer(const hnt::RunConfig& c, const std::string& features, const std::string& probes_dir,
                 const std::string& out) {
  const auto sets = hnt::load_feature_dir(features, c.strategy);
  const auto domains = ordered_domains(sets, c);
  std::map<std::string, hnt::ProbeModel> probes;
  for (const auto& d : domains) {
    const auto path = fs::path(probes_dir) / (d + ".json");
    try {
      probes.emplace(d, json::parse(read_file(path)).get<hnt::ProbeModel>());
    } catch (const json::exception& e) {
      throw hnt::FormatError(path.string() + ": " + e.what());
    }
  }
  auto tests = test_sets(sets, c);
  auto m = hnt::build_transfer_matrix(domains, probes, tests);
  m.strategy = c.strategy;
  const auto stem = m.model_id + "_" + std::string(hnt::to_string(m.strategy));
  write_file(fs::path(out) / (stem + ".csv"), hnt::to_csv(m));
  write_file(fs::path(out) / (stem + ".json"), json(m).dump(2) + "\n");
  std::cout << hnt::to_csv(m);
  for (const auto& w : m.warnings) std::cerr << "warning: " << w << '\n';
  return 0;
}

int cmd_robustness(const hnt::RunConfig& c, const std::string& features, const std::string& rows,
                   const std::string& out) {
  json result;
  std::vector<hnt::RobustnessReport> reports;
  if (!rows.empty()) {
    std::istringstream in(read_file(rows));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto r = json::parse(line).get<hnt::RobustnessReport>();
      r.verdict = hnt::classify_verdict(r.ci_low, r.ci_high, r.perm_p);
      reports.push_back(r);
    }
  } else {
    if (features.empty()) throw hnt::UsageError("robustness needs --features or --rows");
    const auto sets = hnt::load_feature_dir(features, c.strategy);
    const hnt::RobustnessOptions opts{c.n_boot, c.n_perm, c.add_one};
    for (const auto& d : ordered_domains(sets, c)) {
      const auto& s = sets.at(d);
      const auto tc = c.train_config(d);
      const auto exp = hnt::run_experiment(s.matrix(), s.labels(), tc);
      auto r = hnt::assess_experiment(exp, s.matrix(), s.labels(), tc, opts,
                                      hnt::derive_seed(c.seed, "robustness", hnt::fnv1a64(d)));
      r.model = s.model_id;
      r.domain = d;
      r.strategy = c.strategy;
      reports.push_back(r);
    }
  }
  if (reports.empty()) throw hnt::DataError("no experiments to assess");
  std::vector<double> p;
  for (const auto& r : reports) {
    p.push_back(r.perm_p);
    std::printf("%-20s %-12s %.3f [%.3f, %.3f]  p=%.3f  %s\n", r.model.c_str(), r.domain.c_str(),
                r.auroc_point, r.ci_low, r.ci_high, r.perm_p,
                std::string(hnt::to_string(r.verdict)).c_str());
  }
  const auto bh = hnt::bh_fdr(p, c.bh_alpha);
  std::printf("BH at alpha %.3g: %zu of %zu significant\n", c.bh_alpha, bh.k, reports.size());
  result = {{"reports", reports},
            {"bh",
             {{"alpha", c.bh_alpha},
              {"n_rejected", bh.k},
              {"threshold", bh.threshold},
              {"rejected", bh.rejected},
              {"adjusted", bh.adjusted}}}};
  if (!out.empty()) write_file(out, result.dump(2) + "\n");
  return 0;
}

int cmd_aggregate(const hnt::RunConfig& c, const std::vector<std::string>& files,
                  const std::string& out) {
  std::vector<hnt::TransferMatrix> ms;
  for (const auto& f : files) ms.push_back(read_matrix(f));
  auto mean = hnt::aggregate_matrices(ms);
  const auto g = hnt::transfer_gap(mean);
  std::vector<double> within, cross;
  json per = json::object();
  for (const auto& m : ms) {
    const auto gm = hnt::transfer_gap(m);
    per[m.model_id] = gm;
    within.insert(within.end(), gm.within_values.begin(), gm.within_values.end());
    cross.insert(cross.end(), gm.cross_values.begin(), gm.cross_values.end());
    std::printf("%-20s delta %.4f\n", m.model_id.c_str(), gm.delta);
  }
  json gap = {{"grand", g}, {"per_model", per}};
  try {
    gap["cohens_d"] = hnt::cohens_d(within, cross);
  } catch (const hnt::UndefinedMetricError& e) {
    gap["cohens_d"] = nullptr;
    std::cerr << "warning: " << e.what() << '\n';
  }
  if (g.n_excluded == 0) {
    gap["permutation"] = hnt::permutation_test_gap(mean, c.n_gap_perm, hnt::derive_seed(c.seed, "gap"),
                                                   c.gap_scheme, c.add_one);
  }
  std::printf("grand within %.4f cross %.4f delta %.4f\n", g.mean_within, g.mean_cross, g.delta);
  write_file(fs::path(out) / "mean.csv", hnt::to_csv(mean));
  write_file(fs::path(out) / "mean.json", json(mean).dump(2) + "\n");
  write_file(fs::path(out) / "gap.json", gap.dump(2) + "\n");
  return 0;
}

int cmd_intervene(const std::string& records_path, const std::vector<double>& scales,
                  const std::string& out) {
  const auto records = hnt::read_intervention_records(records_path, scales);
  const auto reports = hnt::analyze_interventions(records);
  for (const auto& r : reports) {
    std::printf("alpha %-4s %-15s %-7s n=%-6zu delta %+.4f  t-test p %.3f  McNemar p %.3f%s\n",
                hnt::format_double(r.scale).c_str(), std::string(hnt::to_string(r.condition)).c_str(),
                std::string(hnt::to_string(r.relation)).c_str(), r.n, r.delta_rate, r.p_value,
                r.mcnemar_p, r.degenerate ? "  (degenerate)" : "");
  }
  json result = {{"effects", reports}};
  try {
    result["control"] = hnt::control_comparison(reports);
  } catch (const hnt::DataError& e) {
    result["control"] = nullptr;
    std::cerr << "warning: " << e.what() << '\n';
  }
  if (!out.empty()) write_file(out, result.dump(2) + "\n");
  return 0;
}

int cmd_replay(const std::string& fixtures, const std::string& out) {
  const auto rep = hnt::replay_fixtures(fixtures);
  for (const auto& c : rep.checks) {
    std::printf("%s  %-52s %s expected %-10s actual %-12s tol %s\n", c.pass ? "PASS" : "FAIL",
                c.name.c_str(), c.op == "below" ? "<" : "~", hnt::format_double(c.expected).c_str(),
                hnt::format_double(c.actual).c_str(), hnt::format_double(c.tolerance).c_str());
  }
  std::printf("%zu checks, %zu failed\n", rep.checks.size(), rep.n_failed());
  if (!out.empty()) hnt::write_bundle(rep.bundle, out);
  if (!rep.all_pass()) throw hnt::DataError("fixture replay: " + std::to_string(rep.n_failed()) +
                                            " checks failed");
  return 0;
}

int cmd_report(const hnt::RunConfig& c, const std::string& features, const std::string& out) {
  const auto res = hnt::run_pipeline(c, features);
  hnt::write_bundle(res.bundle, out);
  std::printf("within %.4f cross %.4f delta %.4f", res.gap.mean_within, res.gap.mean_cross,
              res.gap.delta);
  if (res.gap_perm) std::printf("  gap p %s", hnt::format_double(res.gap_perm->p).c_str());
  std::printf("\n");
  for (const auto& r : res.runs) {
    std::printf("%-16s %.3f [%.3f, %.3f]  p=%.3f  %s\n", r.domain.c_str(), r.robustness.auroc_point,
                r.robustness.ci_low, r.robustness.ci_high, r.robustness.perm_p,
                std::string(hnt::to_string(r.robustness.verdict)).c_str());
  }
  std::cout << "bundle written to " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-transfer analysis of sparse hallucination probes"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML config file; command-line flags take precedence");
  std::size_t workers = 0;
  app.add_option("--workers", workers, "worker threads (overrides HNT_WORKERS)");

  hnt::SynthConfig sc;
  std::string sim_out;
  auto* sim = app.add_subcommand("simulate", "generate synthetic multi-domain feature files");
  sim->add_option("--out", sim_out, "output directory")->required();
  sim->add_option("--domains", sc.n_domains, "number of domains");
  sim->add_option("--features", sc.n_features, "features per sample");
  sim->add_option("--layers", sc.n_layers, "layers (features = layers * d_ff)");
  sim->add_option("--signal", sc.signal_size, "signal features per domain");
  sim->add_option("--overlap", sc.overlap_fraction, "shared fraction between neighbours");
  sim->add_option("--effect", sc.effect_size, "mean shift on signal features");
  sim->add_option("--base-rate", sc.base_rate, "positive label probability");
  sim->add_option("--samples", sc.n_samples, "samples per domain");
  sim->add_option("--noise", sc.noise_std, "noise standard deviation");
  sim->add_option("--seed", sc.seed, "seed");
  sim->add_flag("--anti-correlated", sc.anti_correlated, "alternate effect signs by domain");
  sim->add_option("--model-id", sc.model_id, "model id written to headers");

  RunFlags train_f;
  std::string train_features, train_out;
  auto* train = app.add_subcommand("train", "fit one probe per domain");
  train->add_option("--features", train_features, "feature directory")->required();
  train->add_option("--out", train_out, "output directory")->required();
  add_run_options(train, train_f);

  RunFlags transfer_f;
  std::string tr_features, tr_probes, tr_out;
  auto* transfer = app.add_subcommand("transfer", "evaluate every probe on every domain");
  transfer->add_option("--features", tr_features, "feature directory")->required();
  transfer->add_option("--probes", tr_probes, "directory of <domain>.json probes")->required();
  transfer->add_option("--out", tr_out, "output directory")->required();
  add_run_options(transfer, transfer_f);

  RunFlags rob_f;
  std::string rob_features, rob_rows, rob_out;
  auto* rob = app.add_subcommand("robustness", "bootstrap, permutation tests and verdicts");
  rob->add_option("--features", rob_features, "feature directory");
  rob->add_option("--rows", rob_rows, "existing result rows (JSON lines) to re-derive");
  rob->add_option("--out", rob_out, "output JSON file");
  add_run_options(rob, rob_f);
  add_stat_options(rob, rob_f);

  RunFlags agg_f;
  std::vector<std::string> agg_files;
  std::string agg_out;
  auto* agg = app.add_subcommand("aggregate", "average transfer matrices across models");
  agg->add_option("--matrix", agg_files, "matrix files (.csv or .json)")->required();
  agg->add_option("--out", agg_out, "output directory")->required();
  agg->add_option("--seed", agg_f.config.seed, "root seed");
  agg->add_option("--n-gap-perm", agg_f.config.n_gap_perm, "gap permutations");
  agg->add_option("--gap-scheme", agg_f.gap_scheme, "cells or rows_columns");
  agg->add_flag("--add-one", agg_f.config.add_one, "(count + 1) / (n + 1) p-values");

  std::string iv_records, iv_out;
  std::vector<double> iv_scales = hnt::kDefaultScales;
  auto* iv = app.add_subcommand("intervene-analyze", "effects of activation-scaling records");
  iv->add_option("--records", iv_records, "intervention records (JSON lines)")->required();
  iv->add_option("--scales", iv_scales, "allowed scales")->delimiter(',');
  iv->add_option("--out", iv_out, "output JSON file");

  std::string rp_fixtures = "fixtures", rp_out;
  auto* rp = app.add_subcommand("replay-fixtures", "recompute published aggregates from fixtures");
  rp->add_option("--fixtures", rp_fixtures, "fixture directory");
  rp->add_option("--out", rp_out, "optional bundle directory");

  RunFlags rep_f;
  std::string rep_features, rep_out;
  auto* rep = app.add_subcommand("report", "full pipeline to a report bundle");
  rep->add_option("--features", rep_features, "feature directory")->required();
  rep->add_option("--out", rep_out, "bundle directory")->required();
  add_run_options(rep, rep_f);
  add_stat_options(rep, rep_f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (workers > 0) hnt::set_worker_count(workers);
    if (*sim) return cmd_simulate(sc, sim_out);
    if (*train) return cmd_train(train_f.resolve(), train_features, train_out);
    if (*transfer) return cmd_transfer(transfer_f.resolve(), tr_features, tr_probes, tr_out);
    if (*rob) return cmd_robustness(rob_f.resolve(), rob_features, rob_rows, rob_out);
    if (*agg) return cmd_aggregate(agg_f.resolve(), agg_files, agg_out);
    if (*iv) return cmd_intervene(iv_records, iv_scales, iv_out);
    if (*rp) return cmd_replay(rp_fixtures, rp_out);
    if (*rep) return cmd_report(rep_f.resolve(), rep_features, rep_out);
  } catch (const hnt::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const hnt::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const hnt::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 1;
}
