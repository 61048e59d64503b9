#include "hnt/feature_store.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iterator>
#include <map>
#include <unordered_set>

#include <json.hpp>

#include "hnt/error.hpp"
#include "hnt/rng.hpp"

namespace hnt {
namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'C', 'E', 'T', 'T'};

// Explicit little-endian encoding so files are portable across hosts.
template <typename T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<T>;
  U u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
  }
}

void put_f32(std::string& out, float v) {
  put_le(out, std::bit_cast<std::uint32_t>(v));
}

template <typename T>
T get_le(const unsigned char* p) {
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    u |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  }
  return static_cast<T>(u);
}

float get_f32(const unsigned char* p) {
  return std::bit_cast<float>(get_le<std::uint32_t>(p));
}

std::string utc_now() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string_view payload_name(PayloadKind k) {
  return k == PayloadKind::kCsr ? "csr_f32" : "dense_f32";
}

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct ParsedHeader {
  json header;
  std::size_t payload_offset = 0;
};

ParsedHeader parse_header(const std::vector<unsigned char>& bytes,
                          const std::filesystem::path& path) {
  const std::string where = " in " + path.string();
  if (bytes.size() < 10) throw FormatError("file too short for header" + where);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("bad magic bytes" + where + ": expected magic 'CETT'");
  }
  auto version = get_le<std::uint16_t>(bytes.data() + 4);
  if (version != kFeatureFormatVersion) {
    throw FormatError("unsupported format version " + std::to_string(version) +
                      where + " (expected " +
                      std::to_string(kFeatureFormatVersion) + ")");
  }
  auto header_len = get_le<std::uint32_t>(bytes.data() + 6);
  if (bytes.size() < 10 + std::size_t{header_len}) {
    throw FormatError("truncated header" + where);
  }
  ParsedHeader parsed;
  try {
    parsed.header = json::parse(bytes.begin() + 10, bytes.begin() + 10 + header_len);
  } catch (const json::exception& e) {
    throw FormatError("malformed JSON header" + where + ": " + e.what());
  }
  parsed.payload_offset = 10 + header_len;
  return parsed;
}

std::string collapse_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    }
  }
  return out;
}

void write_manifest(const FeatureSet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  for (const auto& s : set.samples) {
    json j;
    j["sample_id"] = s.sample_id;
    j["label"] = s.label;
    j["response_hash"] = format_hash(s.response_hash);
    j["gold_ref"] = s.gold_ref ? json(*s.gold_ref) : json(nullptr);
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("I/O failure writing " + path.string());
}

std::vector<SampleMeta> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing manifest " + path.string());
  std::vector<SampleMeta> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      auto j = json::parse(line);
      SampleMeta m;
      m.sample_id = j.at("sample_id").get<std::string>();
      m.label = j.at("label").get<int>();
      m.response_hash = parse_hash(j.at("response_hash").get<std::string>());
      if (j.contains("gold_ref") && !j["gold_ref"].is_null()) {
        m.gold_ref = j["gold_ref"].get<std::string>();
      }
      samples.push_back(std::move(m));
    } catch (const json::exception& e) {
      throw FormatError("manifest " + path.string() + " line " +
                        std::to_string(line_no) + ": " + e.what());
    }
  }
  return samples;
}

}  // namespace

std::string_view to_string(Strategy s) {
  return s == Strategy::kCot ? "cot" : "direct";
}

Strategy parse_strategy(std::string_view text) {
  if (text == "direct") return Strategy::kDirect;
  if (text == "cot") return Strategy::kCot;
  throw DataError("unknown strategy '" + std::string(text) + "'");
}

std::vector<int> FeatureSet::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

std::size_t FeatureSet::count_label(int label) const {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(),
                    [label](const SampleMeta& s) { return s.label == label; }));
}

bool FeatureSet::splittable() const {
  return count_label(0) >= 2 && count_label(1) >= 2;
}

void FeatureSet::validate() const {
  if (samples.empty()) throw InvariantError("feature set has no samples");
  if (n_features == 0) throw InvariantError("feature set has zero features");
  if (n_layers == 0 || d_ff == 0 || n_layers * d_ff != n_features) {
    throw InvariantError("n_layers * d_ff (" + std::to_string(n_layers) + " * " +
                         std::to_string(d_ff) + ") must equal n_features (" +
                         std::to_string(n_features) + ")");
  }
  if (features.size() != samples.size() * n_features) {
    throw InvariantError("feature matrix holds " + std::to_string(features.size()) +
                         " values, expected n_samples * n_features = " +
                         std::to_string(samples.size() * n_features));
  }
  for (std::size_t k = 0; k < features.size(); ++k) {
    if (!std::isfinite(features[k])) {
      throw InvariantError("non-finite feature value at sample " +
                           std::to_string(k / n_features) + ", feature " +
                           std::to_string(k % n_features));
    }
  }
  std::unordered_set<std::string> ids;
  for (const auto& s : samples) {
    if (s.label != 0 && s.label != 1) {
      throw InvariantError("sample " + s.sample_id + " has label " +
                           std::to_string(s.label) + " (expected 0 or 1)");
    }
    if (!ids.insert(s.sample_id).second) {
      throw InvariantError("duplicate sample_id " + s.sample_id);
    }
  }
}

FeatureSet FeatureSet::subset(std::span<const std::size_t> rows) const {
  FeatureSet out;
  out.model_id = model_id;
  out.domain = domain;
  out.strategy = strategy;
  out.n_layers = n_layers;
  out.d_ff = d_ff;
  out.n_features = n_features;
  out.created_utc = created_utc;
  out.features.reserve(rows.size() * n_features);
  out.samples.reserve(rows.size());
  for (std::size_t r : rows) {
    auto src = row(r);
    out.features.insert(out.features.end(), src.begin(), src.end());
    out.samples.push_back(samples[r]);
  }
  return out;
}

std::filesystem::path manifest_path(const std::filesystem::path& feature_file) {
  auto p = feature_file;
  p.replace_extension(".manifest.jsonl");
  return p;
}

std::filesystem::path write_feature_set(const FeatureSet& set,
                                        const std::filesystem::path& path,
                                        PayloadKind payload) {
  set.validate();

  std::size_t nnz = static_cast<std::size_t>(
      std::count_if(set.features.begin(), set.features.end(),
                    [](float v) { return v != 0.0f; }));
  if (payload == PayloadKind::kAuto) {
    double density = static_cast<double>(nnz) / static_cast<double>(set.features.size());
    payload = density < kCsrDensityThreshold ? PayloadKind::kCsr : PayloadKind::kDense;
  }

  json header;
  header["model_id"] = set.model_id;
  header["domain"] = set.domain;
  header["strategy"] = to_string(set.strategy);
  header["n_layers"] = set.n_layers;
  header["d_ff"] = set.d_ff;
  header["n_samples"] = set.n_samples();
  header["n_features"] = set.n_features;
  header["payload"] = payload_name(payload);
  header["created_utc"] = set.created_utc.empty() ? utc_now() : set.created_utc;
  const std::string header_text = header.dump();

  std::string out;
  out.append(kMagic, 4);
  put_le<std::uint16_t>(out, kFeatureFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;

  if (payload == PayloadKind::kDense) {
    out.reserve(out.size() + 4 * set.features.size());
    for (float v : set.features) put_f32(out, v);
  } else {
    std::vector<std::uint64_t> indptr{0};
    std::string indices, values;
    for (std::size_t i = 0; i < set.n_samples(); ++i) {
      auto r = set.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) {
        if (r[j] != 0.0f) {
          put_le<std::uint32_t>(indices, static_cast<std::uint32_t>(j));
          put_f32(values, r[j]);
        }
      }
      indptr.push_back(indices.size() / 4);
    }
    for (auto p : indptr) put_le<std::uint64_t>(out, p);
    out += indices;
    out += values;
  }

  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open " + path.string() + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("I/O failure writing " + path.string());
  }
  write_manifest(set, manifest_path(path));
  return path;
}

PayloadKind read_payload_kind(const std::filesystem::path& path) {
  auto bytes = slurp(path);
  auto parsed = parse_header(bytes, path);
  return parsed.header.value("payload", "dense_f32") == "csr_f32" ? PayloadKind::kCsr
                                                                 : PayloadKind::kDense;
}

FeatureSet read_feature_set(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const auto parsed = parse_header(bytes, path);
  const json& h = parsed.header;

  FeatureSet set;
  std::size_t n_samples = 0;
  std::string payload;
  try {
    set.model_id = h.at("model_id").get<std::string>();
    set.domain = h.at("domain").get<std::string>();
    set.strategy = parse_strategy(h.at("strategy").get<std::string>());
    set.n_layers = h.at("n_layers").get<std::size_t>();
    set.d_ff = h.at("d_ff").get<std::size_t>();
    set.n_features = h.at("n_features").get<std::size_t>();
    set.created_utc = h.value("created_utc", "");
    n_samples = h.at("n_samples").get<std::size_t>();
    payload = h.at("payload").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError("header of " + path.string() + ": " + e.what());
  }

  const unsigned char* p = bytes.data() + parsed.payload_offset;
  const std::size_t avail = bytes.size() - parsed.payload_offset;
  const std::size_t p_feat = set.n_features;

  if (payload == "dense_f32") {
    const std::size_t row_bytes = 4 * p_feat;
    const std::size_t need = row_bytes * n_samples;
    if (avail < need) {
      throw FormatError("truncated payload in " + path.string() + ": header declares " +
                        std::to_string(n_samples) + " samples but only " +
                        std::to_string(row_bytes ? avail / row_bytes : 0) +
                        " complete rows are present");
    }
    if (avail > need) {
      throw FormatError("trailing bytes after payload in " + path.string());
    }
    set.features.resize(n_samples * p_feat);
    for (std::size_t k = 0; k < set.features.size(); ++k) {
      set.features[k] = get_f32(p + 4 * k);
    }
  } else if (payload == "csr_f32") {
    const std::size_t indptr_bytes = 8 * (n_samples + 1);
    if (avail < indptr_bytes) {
      throw FormatError("truncated payload in " + path.string() +
                        ": CSR row pointer array incomplete for " +
                        std::to_string(n_samples) + " samples");
    }
    std::vector<std::uint64_t> indptr(n_samples + 1);
    for (std::size_t i = 0; i <= n_samples; ++i) {
      indptr[i] = get_le<std::uint64_t>(p + 8 * i);
    }
    const std::uint64_t nnz = indptr.back();
    if (indptr.front() != 0 || !std::is_sorted(indptr.begin(), indptr.end())) {
      throw FormatError("CSR row pointers are not monotone in " + path.string());
    }
    if (avail < indptr_bytes + 8 * nnz) {
      throw FormatError("truncated payload in " + path.string() + ": CSR declares " +
                        std::to_string(nnz) + " nonzeros over " +
                        std::to_string(n_samples) + " samples but file ends early");
    }
    if (avail > indptr_bytes + 8 * nnz) {
      throw FormatError("trailing bytes after payload in " + path.string());
    }
    const unsigned char* idx = p + indptr_bytes;
    const unsigned char* val = idx + 4 * nnz;
    set.features.assign(n_samples * p_feat, 0.0f);
    for (std::size_t i = 0; i < n_samples; ++i) {
      std::int64_t prev = -1;
      for (std::uint64_t k = indptr[i]; k < indptr[i + 1]; ++k) {
        auto j = get_le<std::uint32_t>(idx + 4 * k);
        if (j >= p_feat || static_cast<std::int64_t>(j) <= prev) {
          throw FormatError("CSR column index " + std::to_string(j) +
                            " out of order or range in " + path.string());
        }
        prev = j;
        set.features[i * p_feat + j] = get_f32(val + 4 * k);
      }
    }
  } else {
    throw FormatError("unknown payload '" + payload + "' in " + path.string());
  }

  for (float v : set.features) {
    if (!std::isfinite(v)) {
      throw FormatError("non-finite feature value in " + path.string());
    }
  }

  set.samples = read_manifest(manifest_path(path));
  if (set.samples.size() != n_samples) {
    throw FormatError("manifest lists " + std::to_string(set.samples.size()) +
                      " samples but header declares " + std::to_string(n_samples));
  }
  try {
    set.validate();
  } catch (const InvariantError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return set;
}

std::uint64_t response_hash(std::string_view response_text) {
  return fnv1a64(collapse_whitespace(response_text));
}

std::string format_hash(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t parse_hash(std::string_view text) {
  if (text.size() != 16) throw FormatError("response_hash must be 16 hex digits");
  std::uint64_t v = 0;
  for (char c : text) {
    int d;
    if (c >= '0' && c <= '9') d = c - '0';
    else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') d = c - 'A' + 10;
    else throw FormatError("response_hash has non-hex digit");
    v = (v << 4) | static_cast<std::uint64_t>(d);
  }
  return v;
}

std::vector<char> stratified_test_mask(std::span<const int> labels, double test_fraction,
                                      std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw UsageError("test_fraction must lie in (0, 1)");
  }
  Rng rng = make_rng(seed, "split");
  std::vector<char> in_test(labels.size(), 0);
  for (int label : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == label) idx.push_back(i);
    }
    if (idx.size() < 2) {
      throw UnsplittableError("stratified split needs >= 2 samples of each class");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_c = static_cast<long>(idx.size());
    long n_test = std::lround(static_cast<double>(n_c) * test_fraction);
    n_test = std::clamp(n_test, 1L, n_c - 1);
    for (long k = 0; k < n_test; ++k) in_test[idx[static_cast<std::size_t>(k)]] = 1;
  }
  return in_test;
}

SplitPair split_train_test(const FeatureSet& set, double test_fraction,
                           std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw UsageError("test_fraction must lie in (0, 1)");
  }
  if (!set.splittable()) {
    throw UnsplittableError("domain '" + set.domain + "' is unsplittable: needs >= 2 "
                            "samples of each class (has " +
                            std::to_string(set.count_label(1)) + " positive, " +
                            std::to_string(set.count_label(0)) + " negative)");
  }
  const auto in_test = stratified_test_mask(set.labels(), test_fraction, seed);
  std::vector<std::size_t> train_rows, test_rows;
  for (std::size_t i = 0; i < set.n_samples(); ++i) {
    (in_test[i] ? test_rows : train_rows).push_back(i);
  }
  return SplitPair{set.subset(train_rows), set.subset(test_rows), seed, test_fraction};
}

IdentityCheck detect_identical_datasets(const FeatureSet& a, const FeatureSet& b) {
  std::map<std::string_view, std::uint64_t> b_hashes;
  for (const auto& s : b.samples) b_hashes.emplace(s.sample_id, s.response_hash);
  if (b_hashes.size() != a.samples.size()) {
    throw ComparabilityError("datasets '" + a.domain + "' and '" + b.domain +
                             "' have different sample counts");
  }
  IdentityCheck check;
  check.n_total = a.samples.size();
  for (const auto& s : a.samples) {
    auto it = b_hashes.find(s.sample_id);
    if (it == b_hashes.end()) {
      throw ComparabilityError("sample_id '" + s.sample_id +
                               "' missing from the second dataset");
    }
    if (it->second == s.response_hash) ++check.n_matched;
  }
  check.matched_fraction =
      check.n_total ? static_cast<double>(check.n_matched) / check.n_total : 1.0;
  check.identical = check.n_matched == check.n_total;
  return check;
}

}  // namespace hnt
