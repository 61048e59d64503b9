#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hnt {

enum class Strategy { kDirect, kCot };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view text);

/// Per-sample provenance. label: 1 = hallucinating, 0 = not.
struct SampleMeta {
  std::string sample_id;
  int label = 0;
  std::uint64_t response_hash = 0;
  std::optional<std::string> gold_ref;

  bool operator==(const SampleMeta&) const = default;
};

/// Read-only row-major view over a float matrix.
struct MatrixView {
  std::span<const float> data;
  std::size_t rows = 0;
  std::size_t cols = 0;

  float operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }
  std::span<const float> row(std::size_t r) const {
    return data.subspan(r * cols, cols);
  }
};

/// CETT feature dataset for one (model, domain, strategy). Rows of
/// `features` align with `samples`. n_features = n_layers * d_ff.
struct FeatureSet {
  std::string model_id;
  std::string domain;
  Strategy strategy = Strategy::kDirect;
  std::size_t n_layers = 1;
  std::size_t d_ff = 0;
  std::size_t n_features = 0;
  std::vector<float> features;
  std::vector<SampleMeta> samples;
  std::string created_utc;

  std::size_t n_samples() const { return samples.size(); }
  MatrixView matrix() const { return {features, n_samples(), n_features}; }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(features).subspan(i * n_features,
                                                    n_features);
  }
  std::vector<int> labels() const;
  std::size_t count_label(int label) const;
  /// Training and stratified splitting need at least two of each class.
  bool splittable() const;

  /// Throws InvariantError naming the first violated invariant.
  void validate() const;

  /// Rows in the given order, metadata copied.
  FeatureSet subset(std::span<const std::size_t> rows) const;

  bool operator==(const FeatureSet&) const = default;
};

struct SplitPair {
  FeatureSet train;
  FeatureSet test;
  std::uint64_t seed = 0;
  double test_fraction = 0.3;
};

enum class PayloadKind { kAuto, kDense, kCsr };

inline constexpr std::uint16_t kFeatureFormatVersion = 1;
inline constexpr double kCsrDensityThreshold = 0.10;
inline constexpr double kDefaultTestFraction = 0.3;

/// Companion manifest path: same stem, ".manifest.jsonl" extension.
std::filesystem::path manifest_path(const std::filesystem::path& feature_file);

/// Writes the binary feature file and its JSON-lines manifest. kAuto picks
/// CSR when density is below kCsrDensityThreshold.
std::filesystem::path write_feature_set(const FeatureSet& set,
                                        const std::filesystem::path& path,
                                        PayloadKind payload = PayloadKind::kAuto);

FeatureSet read_feature_set(const std::filesystem::path& path);

/// Payload encoding recorded in an existing file's header.
PayloadKind read_payload_kind(const std::filesystem::path& path);

/// FNV-1a 64 over the response with whitespace runs collapsed to one space
/// and leading/trailing whitespace removed.
std::uint64_t response_hash(std::string_view response_text);
std::string format_hash(std::uint64_t h);
std::uint64_t parse_hash(std::string_view text);

/// 1 marks test rows. Shared by split_train_test and the label-permutation
/// test, which splits raw (X, y).
std::vector<char> stratified_test_mask(std::span<const int> labels,
                                       double test_fraction = kDefaultTestFraction,
                                       std::uint64_t seed = 0);

/// Label-stratified split; per class, round(n_c * test_fraction) clamped to
/// [1, n_c - 1] samples go to test. Rows keep their source order.
SplitPair split_train_test(const FeatureSet& set,
                           double test_fraction = kDefaultTestFraction,
                           std::uint64_t seed = 0);

struct IdentityCheck {
  bool identical = false;
  double matched_fraction = 0.0;
  std::size_t n_matched = 0;
  std::size_t n_total = 0;
};

/// Compares response hashes pairwise by sample_id (direct vs CoT caching).
IdentityCheck detect_identical_datasets(const FeatureSet& a,
                                        const FeatureSet& b);

}  // namespace hnt
