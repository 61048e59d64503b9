#include "hnt/synth_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "hnt/error.hpp"
#include "hnt/parallel.hpp"
#include "hnt/rng.hpp"

namespace hnt {

void SynthConfig::validate() const {
  if (n_domains < 2) throw UsageError("synthetic config needs n_domains >= 2");
  if (n_features == 0) throw UsageError("synthetic config needs n_features >= 1");
  if (n_layers == 0 || n_features % n_layers != 0) {
    throw UsageError("n_features must be a multiple of n_layers");
  }
  if (signal_size > n_features) {
    throw UsageError("signal_size " + std::to_string(signal_size) + " exceeds n_features " +
                     std::to_string(n_features));
  }
  if (!(overlap_fraction >= 0.0 && overlap_fraction <= 1.0)) {
    throw UsageError("overlap_fraction must lie in [0, 1]");
  }
  if (!(base_rate > 0.0 && base_rate < 1.0)) throw UsageError("base_rate must lie in (0, 1)");
  if (!(noise_std > 0.0)) throw UsageError("noise_std must be positive");
  if (!std::isfinite(effect_size)) throw UsageError("effect_size must be finite");
  if (n_samples < 4) throw UsageError("n_samples must be >= 4");
  if (!domain_names.empty() && domain_names.size() != n_domains) {
    throw UsageError("domain_names must list n_domains names");
  }
}

std::size_t SynthConfig::shared_count() const {
  return static_cast<std::size_t>(
      std::floor(overlap_fraction * static_cast<double>(signal_size) + 1e-9));
}

std::vector<std::string> SynthConfig::names() const {
  if (!domain_names.empty()) return domain_names;
  std::vector<std::string> out;
  char buf[32];
  for (std::size_t d = 0; d < n_domains; ++d) {
    std::snprintf(buf, sizeof(buf), "domain_%02zu", d);
    out.emplace_back(buf);
  }
  return out;
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"n_domains", c.n_domains},
                     {"n_features", c.n_features},
                     {"n_layers", c.n_layers},
                     {"signal_size", c.signal_size},
                     {"overlap_fraction", c.overlap_fraction},
                     {"effect_size", c.effect_size},
                     {"base_rate", c.base_rate},
                     {"n_samples", c.n_samples},
                     {"noise_std", c.noise_std},
                     {"seed", c.seed},
                     {"anti_correlated", c.anti_correlated},
                     {"model_id", c.model_id},
                     {"domain_names", c.domain_names}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  c = SynthConfig{};
  c.n_domains = j.value("n_domains", c.n_domains);
  c.n_features = j.value("n_features", c.n_features);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.signal_size = j.value("signal_size", c.signal_size);
  c.overlap_fraction = j.value("overlap_fraction", c.overlap_fraction);
  c.effect_size = j.value("effect_size", c.effect_size);
  c.base_rate = j.value("base_rate", c.base_rate);
  c.n_samples = j.value("n_samples", c.n_samples);
  c.noise_std = j.value("noise_std", c.noise_std);
  c.seed = j.value("seed", c.seed);
  c.anti_correlated = j.value("anti_correlated", c.anti_correlated);
  c.model_id = j.value("model_id", c.model_id);
  c.domain_names = j.value("domain_names", c.domain_names);
}

SignalLayout signal_layout(const SynthConfig& config) {
  config.validate();
  const std::size_t D = config.n_domains, s = config.signal_size;
  const std::size_t m = config.shared_count();
  const std::size_t stride = s - m;
  SignalLayout layout;
  layout.sets.resize(D);
  for (std::size_t d = 0; d < D; ++d) {
    layout.signs.push_back(config.anti_correlated && d % 2 == 1 ? -1 : 1);
  }
  if (stride == 0) {
    layout.topology = "identical";
    for (auto& set : layout.sets) {
      for (std::size_t t = 0; t < s; ++t) set.push_back(t);
    }
    return layout;
  }
  const std::size_t period = D * stride;
  if ((D - 1) * stride >= s && period <= config.n_features) {
    layout.topology = "ring";
    for (std::size_t d = 0; d < D; ++d) {
      for (std::size_t t = 0; t < s; ++t) layout.sets[d].push_back((d * stride + t) % period);
      std::sort(layout.sets[d].begin(), layout.sets[d].end());
    }
    return layout;
  }
  if ((D - 1) * stride + s > config.n_features) {
    throw UsageError("signal sets do not fit: need " + std::to_string((D - 1) * stride + s) +
                     " features, have " + std::to_string(config.n_features));
  }
  layout.topology = "chain";
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t t = 0; t < s; ++t) layout.sets[d].push_back(d * stride + t);
  }
  return layout;
}

SynthDomains generate_domains(const SynthConfig& config) {
  SynthDomains out;
  out.config = config;
  out.layout = signal_layout(config);
  out.domains = config.names();
  const std::size_t D = config.n_domains, F = config.n_features, n = config.n_samples;

  std::vector<FeatureSet> sets(D);
  parallel_for(D, [&](std::size_t d) {
    Rng rng = make_rng(config.seed, "synth-domain", d);
    std::bernoulli_distribution label_dist(config.base_rate);
    std::normal_distribution<double> noise(0.0, config.noise_std);
    std::vector<char> is_signal(F, 0);
    for (auto j : out.layout.sets[d]) is_signal[j] = 1;
    const double shift = config.effect_size * out.layout.signs[d];

    FeatureSet& fs = sets[d];
    fs.model_id = config.model_id;
    fs.domain = out.domains[d];
    fs.n_layers = config.n_layers;
    fs.d_ff = F / config.n_layers;
    fs.n_features = F;
    fs.created_utc = "1970-01-01T00:00:00Z";
    fs.features.resize(n * F);
    fs.samples.resize(n);
    char id[48];
    for (std::size_t i = 0; i < n; ++i) {
      const int y = label_dist(rng) ? 1 : 0;
      std::snprintf(id, sizeof(id), "%s-%05zu", fs.domain.c_str(), i);
      fs.samples[i].sample_id = id;
      fs.samples[i].label = y;
      fs.samples[i].response_hash = derive_seed(config.seed, fs.domain, i);
      float* row = fs.features.data() + i * F;
      for (std::size_t j = 0; j < F; ++j) {
        const double mean = (y == 1 && is_signal[j]) ? shift : 0.0;
        row[j] = static_cast<float>(mean + noise(rng));
      }
    }
  });
  for (std::size_t d = 0; d < D; ++d) out.sets.emplace(out.domains[d], std::move(sets[d]));
  return out;
}

double analytic_auroc(const SynthConfig& config, long k) {
  if (k < 0) throw UsageError("analytic_auroc: k must be >= 0");
  if (!(config.noise_std > 0.0)) throw UsageError("noise_std must be positive");
  const double z = config.effect_size * std::sqrt(static_cast<double>(k)) /
                   (std::sqrt(2.0) * config.noise_std);
  return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

nlohmann::json ground_truth_json(const SynthDomains& data) {
  nlohmann::json j;
  j["topology"] = data.layout.topology;
  j["shared_count"] = data.config.shared_count();
  auto& sets = j["signal_sets"] = nlohmann::json::object();
  auto& signs = j["signs"] = nlohmann::json::object();
  for (std::size_t d = 0; d < data.domains.size(); ++d) {
    sets[data.domains[d]] = data.layout.sets[d];
    signs[data.domains[d]] = data.layout.signs[d];
  }
  j["domains"] = data.domains;
  j["config"] = data.config;
  return j;
}

void write_synthetic(const SynthDomains& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& d : data.domains) {
    write_feature_set(data.sets.at(d), dir / (d + ".cett"), PayloadKind::kDense);
  }
  std::ofstream out(dir / "ground_truth.json");
  out << ground_truth_json(data).dump(2) << '\n';
  if (!out) throw DataError("cannot write " + (dir / "ground_truth.json").string());
}

}  // namespace hnt
