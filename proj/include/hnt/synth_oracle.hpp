#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "hnt/feature_store.hpp"

namespace hnt {

/// Gaussian multi-domain generator. Feature j of a sample in domain d is
/// Normal(sign_d * effect_size * label * [j in S_d], noise_std^2), labels
/// Bernoulli(base_rate). Consecutive domains share floor(rho * signal_size)
/// signal indices.
struct SynthConfig {
  std::size_t n_domains = 6;
  std::size_t n_features = 2000;
  std::size_t n_layers = 1;  // n_features = n_layers * d_ff
  std::size_t signal_size = 40;
  double overlap_fraction = 0.0;
  double effect_size = 2.0;
  double base_rate = 0.5;
  std::size_t n_samples = 500;
  double noise_std = 1.0;
  std::uint64_t seed = 0;
  bool anti_correlated = false;  // sign_d = (-1)^d instead of +1
  std::string model_id = "synthetic";
  std::vector<std::string> domain_names;  // default domain_00, domain_01, ...

  void validate() const;
  std::size_t shared_count() const;
  std::vector<std::string> names() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

/// "ring" when windows of length s at stride s - m wrap around D * (s - m)
/// indices without touching non-neighbours' extra indices, otherwise
/// "chain" (windows laid end to end); "identical" when m = s.
struct SignalLayout {
  std::string topology;
  std::vector<std::vector<std::size_t>> sets;  // ascending indices per domain
  std::vector<int> signs;
};

SignalLayout signal_layout(const SynthConfig& config);

struct SynthDomains {
  SynthConfig config;
  std::vector<std::string> domains;
  std::map<std::string, FeatureSet> sets;
  SignalLayout layout;
};

SynthDomains generate_domains(const SynthConfig& config);

/// Phi(effect_size * sqrt(k) / (sqrt(2) * noise_std)): AUROC of the Bayes
/// score built from k informative features.
double analytic_auroc(const SynthConfig& config, long k);

/// {topology, signal_sets: {domain: [indices]}, signs, config}.
nlohmann::json ground_truth_json(const SynthDomains& data);

/// Writes <dir>/<domain>.cett (+ manifests) and <dir>/ground_truth.json.
void write_synthetic(const SynthDomains& data, const std::filesystem::path& dir);

}  // namespace hnt
