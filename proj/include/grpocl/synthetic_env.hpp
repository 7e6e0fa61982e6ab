// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "grpocl/boxcodec.hpp"
#include "grpocl/geometry.hpp"
#include "grpocl/policy.hpp"
#include "grpocl/rng.hpp"

namespace grpocl {

// Context layout produced by the generator (kContextDim entries):
//   [0]       constant 1 (bias)
//   [1..8]    target box descriptor: for x1, y1, x2, y2 the pair
//             10 * (cos(phi c), sin(phi c)) with phi = 1.75 pi, c the
//             bin-center-quantized coordinate, mixed with distractor
//             descriptors (clutter) and Gaussian noise
//   [9..14]   distractor centers, 10 * (2 c - 1) per axis, 0 when absent
//   [15]      domain indicator, -1 for A and +1 for B
// Every entry is clamped to [-10, 10].
inline constexpr int kContextDim = 16;
inline constexpr int kBiasFeature = 0;
inline constexpr double kBiasValue = 1.0;
inline constexpr int kMaxDistractors = 3;
inline constexpr double kDescriptorRadius = 10.0;
inline constexpr double kDescriptorArc = 1.75 * std::numbers::pi;

enum class Domain { A, B };
enum class Band { Easy, Mid, Hard };
enum class Split { Train, Test };

inline const char* to_string(Domain d) { return d == Domain::A ? "A" : "B"; }
inline const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }
inline const char* to_string(Band b) {
  switch (b) {
    case Band::Easy: return "easy";
    case Band::Mid: return "mid";
    case Band::Hard: return "hard";
  }
  return "?";
}

inline Domain parse_domain(const std::string& s) {
  if (s == "A") return Domain::A;
  if (s == "B") return Domain::B;
  throw std::invalid_argument("unknown domain '" + s + "'");
}
inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + s + "'");
}
inline Band parse_band(const std::string& s) {
  if (s == "easy") return Band::Easy;
  if (s == "mid") return Band::Mid;
  if (s == "hard") return Band::Hard;
  throw std::invalid_argument("unknown band '" + s + "'");
}

/// Distribution of generator knobs within one difficulty band.
struct KnobBand {
  double sigma_min = 0.0;
  double sigma_max = 0.0;
  std::array<double, kMaxDistractors + 1> distractor_probs{1.0, 0.0, 0.0, 0.0};
  double side_min = 0.35;
  double side_max = 0.9;
  double truncation_prob = 0.0;
};

struct DatasetSpec {
  std::uint64_t seed = 7;
  int count_a = 600;
  int count_b = 400;
  double holdout_fraction = 0.2;
  int bins = 32;
  int warmup_count = 512;
  double clutter = 0.15;
  std::array<KnobBand, 3> bands = default_bands();
  // Band mixture (easy, mid, hard) of each domain.
  std::array<double, 3> mix_a{0.5, 0.35, 0.15};
  std::array<double, 3> mix_b{0.15, 0.35, 0.5};

  static std::array<KnobBand, 3> default_bands() {
    return {KnobBand{0.0, 0.0, {1.0, 0.0, 0.0, 0.0}, 0.35, 0.9, 0.0},
            KnobBand{0.5, 1.5, {0.25, 0.25, 0.25, 0.25}, 0.15, 0.6, 0.15},
            KnobBand{1.5, 3.0, {0.0, 0.2, 0.3, 0.5}, 0.07, 0.3, 0.35}};
  }

  /// Noise-free, clutter-free data: every sample drawn from the easy band.
  static DatasetSpec easy_only(std::uint64_t seed, int count, double holdout) {
    DatasetSpec s;
    s.seed = seed;
    s.count_a = count;
    s.count_b = 0;
    s.holdout_fraction = holdout;
    s.mix_a = {1.0, 0.0, 0.0};
    s.mix_b = {1.0, 0.0, 0.0};
    return s;
  }

  int total() const noexcept { return count_a + count_b; }
  const KnobBand& band(Band b) const { return bands[static_cast<int>(b)]; }

  void validate() const {
    if (count_a < 0 || count_b < 0 || total() <= 0) {
      throw std::invalid_argument("DatasetSpec: sample counts must be positive");
    }
    if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
      throw std::invalid_argument("DatasetSpec: holdout_fraction must be in [0, 1)");
    }
    if (bins < 2) throw std::invalid_argument("DatasetSpec: bins must be >= 2");
    if (warmup_count < 0) throw std::invalid_argument("DatasetSpec: warmup_count must be >= 0");
    if (!(clutter >= 0.0 && clutter < 1.0)) {
      throw std::invalid_argument("DatasetSpec: clutter must be in [0, 1)");
    }
    auto check_probs = [](auto const& p, const char* what) {
      double sum = 0.0;
      for (double v : p) {
        if (!(v >= 0.0)) throw std::invalid_argument(std::string("DatasetSpec: negative ") + what);
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument(std::string("DatasetSpec: ") + what + " must sum to 1");
      }
    };
    check_probs(mix_a, "mix_a");
    check_probs(mix_b, "mix_b");
    for (const auto& b : bands) {
      check_probs(b.distractor_probs, "distractor_probs");
      if (!(b.sigma_min >= 0.0 && b.sigma_max >= b.sigma_min)) {
        throw std::invalid_argument("DatasetSpec: bad sigma range");
      }
      // A side must span at least two bins so every target stays encodable.
      if (!(b.side_min >= 2.0 / bins && b.side_max >= b.side_min && b.side_max <= 0.95)) {
        throw std::invalid_argument("DatasetSpec: bad side range");
      }
      if (!(b.truncation_prob >= 0.0 && b.truncation_prob <= 1.0)) {
        throw std::invalid_argument("DatasetSpec: bad truncation_prob");
      }
    }
  }
};

struct SceneKnobs {
  Band band = Band::Easy;
  double sigma = 0.0;
  int distractors = 0;
  double min_side = 0.0;
  bool truncated = false;

  friend bool operator==(const SceneKnobs&, const SceneKnobs&) = default;
};

struct SceneSample {
  std::uint64_t id = 0;
  Domain domain = Domain::A;
  Split split = Split::Train;
  SceneKnobs knobs;
  BBox gt{0.0, 0.0, 1.0, 1.0};
  Context x;

  friend bool operator==(const SceneSample&, const SceneSample&) = default;
};

namespace detail {

inline constexpr std::uint64_t kStreamDataset = 0x64617461ULL;  // "data"
inline constexpr std::uint64_t kStreamWarmup = 0x7761726dULL;   // "warm"

inline std::array<double, 2> embed_coordinate(double c) {
  return {kDescriptorRadius * std::cos(kDescriptorArc * c),
          kDescriptorRadius * std::sin(kDescriptorArc * c)};
}

template <std::size_t N>
int draw_categorical(const std::array<double, N>& probs, Rng& rng) {
  const double u = rng.uniform01();
  double cum = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    cum += probs[i];
    if (u < cum) return static_cast<int>(i);
  }
  for (std::size_t i = N; i-- > 0;) {
    if (probs[i] > 0.0) return static_cast<int>(i);
  }
  return 0;
}

inline SceneSample make_scene(const DatasetSpec& spec, std::uint64_t id, Domain domain,
                              std::optional<Band> forced_band, Rng& rng) {
  SceneSample s;
  s.id = id;
  s.domain = domain;
  const auto& mix = domain == Domain::A ? spec.mix_a : spec.mix_b;
  const Band band = forced_band ? *forced_band : static_cast<Band>(draw_categorical(mix, rng));
  const KnobBand& kb = spec.band(band);

  s.knobs.band = band;
  s.knobs.sigma = rng.uniform(kb.sigma_min, kb.sigma_max);
  s.knobs.distractors = draw_categorical(kb.distractor_probs, rng);
  s.knobs.min_side = kb.side_min;
  s.knobs.truncated = rng.uniform01() < kb.truncation_prob;

  const double w = rng.uniform(kb.side_min, kb.side_max);
  const double h = rng.uniform(kb.side_min, kb.side_max);
  const double x1 = rng.uniform(0.0, 1.0 - w);
  const double y1 = rng.uniform(0.0, 1.0 - h);
  // Visible box and the full object extent; they differ only when truncated.
  std::array<double, 4> visible{x1, y1, x1 + w, y1 + h};
  std::array<double, 4> full = visible;
  if (s.knobs.truncated) {
    const int side = static_cast<int>(rng.below(4));
    const double cut = rng.uniform(0.2, 0.5);
    const int axis = side % 2;
    const double extent = axis == 0 ? w : h;
    if (side < 2) {  // left / top edge
      visible[axis] = 0.0;
      visible[axis + 2] = extent * (1.0 - cut);
      full[axis] = -cut * extent;
      full[axis + 2] = visible[axis + 2];
    } else {  // right / bottom edge
      visible[axis + 2] = 1.0;
      visible[axis] = 1.0 - extent * (1.0 - cut);
      full[axis + 2] = 1.0 + cut * extent;
      full[axis] = visible[axis];
    }
  }
  s.gt = BBox(visible[0], visible[1], visible[2], visible[3]);

  std::array<std::array<double, 4>, kMaxDistractors> distractors{};
  for (int j = 0; j < s.knobs.distractors; ++j) {
    const double dw = rng.uniform(kb.side_min, kb.side_max);
    const double dh = rng.uniform(kb.side_min, kb.side_max);
    const double dx = rng.uniform(0.0, 1.0 - dw);
    const double dy = rng.uniform(0.0, 1.0 - dh);
    distractors[j] = {dx, dy, dx + dw, dy + dh};
  }

  std::vector<double> x(kContextDim, 0.0);
  x[kBiasFeature] = kBiasValue;
  for (int k = 0; k < 4; ++k) {
    const double c = (std::floor(full[k] * spec.bins) + 0.5) / spec.bins;
    auto e = embed_coordinate(c);
    for (int j = 0; j < s.knobs.distractors; ++j) {
      const auto d = embed_coordinate(distractors[j][k]);
      e[0] += spec.clutter * (d[0] - e[0]);
      e[1] += spec.clutter * (d[1] - e[1]);
    }
    x[1 + 2 * k] = e[0] + rng.normal(0.0, s.knobs.sigma);
    x[2 + 2 * k] = e[1] + rng.normal(0.0, s.knobs.sigma);
  }
  for (int j = 0; j < s.knobs.distractors; ++j) {
    const auto& d = distractors[j];
    x[9 + 2 * j] = kDescriptorRadius * (d[0] + d[2] - 1.0);
    x[10 + 2 * j] = kDescriptorRadius * (d[1] + d[3] - 1.0);
  }
  x[15] = domain == Domain::A ? -1.0 : 1.0;
  for (double& v : x) v = std::clamp(v, -kContextBound, kContextBound);
  s.x = Context(std::move(x));
  return s;
}

inline int holdout_count(int domain_count, double fraction) {
  return static_cast<int>(std::floor(domain_count * fraction + 1e-9));
}

}  // namespace detail

/// Sample `id` of the dataset. Ids [0, count_a) are domain A and the rest are
/// domain B; within each domain the last holdout_fraction of ids form the
/// test split. The result depends only on (spec, id).
inline SceneSample generate_sample(const DatasetSpec& spec, std::uint64_t id, Rng& rng) {
  if (id >= static_cast<std::uint64_t>(spec.total())) {
    throw std::out_of_range("generate_sample: id beyond dataset size");
  }
  const bool in_a = id < static_cast<std::uint64_t>(spec.count_a);
  const Domain domain = in_a ? Domain::A : Domain::B;
  auto s = detail::make_scene(spec, id, domain, std::nullopt, rng);
  const int n = in_a ? spec.count_a : spec.count_b;
  const auto local = in_a ? id : id - static_cast<std::uint64_t>(spec.count_a);
  s.split = local >= static_cast<std::uint64_t>(n - detail::holdout_count(n, spec.holdout_fraction))
                ? Split::Test
                : Split::Train;
  return s;
}

inline SceneSample generate_sample(const DatasetSpec& spec, std::uint64_t id) {
  Rng rng(derive_seed(spec.seed, detail::kStreamDataset, id));
  return generate_sample(spec, id, rng);
}

struct Dataset {
  int bins = 32;
  int dim = kContextDim;
  std::string config_hash;
  std::vector<SceneSample> samples;

  std::vector<const SceneSample*> select(std::optional<Split> split) const {
    std::vector<const SceneSample*> out;
    for (const auto& s : samples) {
      if (!split || s.split == *split) out.push_back(&s);
    }
    return out;
  }
};

inline Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.bins = spec.bins;
  ds.samples.reserve(static_cast<std::size_t>(spec.total()));
  for (int id = 0; id < spec.total(); ++id) {
    ds.samples.push_back(generate_sample(spec, static_cast<std::uint64_t>(id)));
  }
  return ds;
}

/// Clean, large-object samples used by the warm-up phase before any
/// difficulty scoring. Drawn from a separate seed stream, never exported.
inline std::vector<SceneSample> generate_warmup_pool(const DatasetSpec& spec) {
  std::vector<SceneSample> pool;
  pool.reserve(static_cast<std::size_t>(spec.warmup_count));
  for (int i = 0; i < spec.warmup_count; ++i) {
    Rng rng(derive_seed(spec.seed, detail::kStreamWarmup, static_cast<std::uint64_t>(i)));
    pool.push_back(
        detail::make_scene(spec, static_cast<std::uint64_t>(i), Domain::A, Band::Easy, rng));
  }
  return pool;
}

// ---------------------------------------------------------------------------
// JSON-lines export. First line is a header object:
//   {"schema":"grpocl-dataset","version":1,"bins":B,"dim":d,"count":n,
//    "config_hash":"<hex>"}
// then one record per sample:
//   {"id":0,"domain":"A","split":"train",
//    "knobs":{"band":"easy","sigma":0.0,"distractors":0,"min_side":0.35,
//             "truncated":false},
//    "gt":[x1,y1,x2,y2],"x":[...d values...]}

inline constexpr const char* kDatasetSchema = "grpocl-dataset";

inline nlohmann::json to_json(const SceneSample& s) {
  return {{"id", s.id},
          {"domain", to_string(s.domain)},
          {"split", to_string(s.split)},
          {"knobs",
           {{"band", to_string(s.knobs.band)},
            {"sigma", s.knobs.sigma},
            {"distractors", s.knobs.distractors},
            {"min_side", s.knobs.min_side},
            {"truncated", s.knobs.truncated}}},
          {"gt", {s.gt.x1(), s.gt.y1(), s.gt.x2(), s.gt.y2()}},
          {"x", std::vector<double>(s.x.values().begin(), s.x.values().end())}};
}

inline SceneSample sample_from_json(const nlohmann::json& j) {
  SceneSample s;
  s.id = j.at("id").get<std::uint64_t>();
  s.domain = parse_domain(j.at("domain").get<std::string>());
  s.split = parse_split(j.at("split").get<std::string>());
  const auto& k = j.at("knobs");
  s.knobs.band = parse_band(k.at("band").get<std::string>());
  s.knobs.sigma = k.at("sigma").get<double>();
  s.knobs.distractors = k.at("distractors").get<int>();
  s.knobs.min_side = k.at("min_side").get<double>();
  s.knobs.truncated = k.at("truncated").get<bool>();
  const auto gt = j.at("gt").get<std::vector<double>>();
  if (gt.size() != 4) throw std::runtime_error("dataset record: gt must have 4 entries");
  s.gt = BBox(gt[0], gt[1], gt[2], gt[3]);
  s.x = Context(j.at("x").get<std::vector<double>>());
  return s;
}

inline void write_dataset(std::ostream& os, const Dataset& ds) {
  nlohmann::json header = {{"schema", kDatasetSchema},
                           {"version", 1},
                           {"bins", ds.bins},
                           {"dim", ds.dim},
                           {"count", ds.samples.size()},
                           {"config_hash", ds.config_hash}};
  os << header.dump() << '\n';
  for (const auto& s : ds.samples) os << to_json(s).dump() << '\n';
}

inline Dataset read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("dataset: empty file");
  const auto header = nlohmann::json::parse(line);
  if (header.value("schema", "") != kDatasetSchema || header.value("version", 0) != 1) {
    throw std::runtime_error("dataset: unsupported header");
  }
  Dataset ds;
  ds.bins = header.at("bins").get<int>();
  ds.dim = header.at("dim").get<int>();
  ds.config_hash = header.value("config_hash", "");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    ds.samples.push_back(sample_from_json(nlohmann::json::parse(line)));
    if (static_cast<int>(ds.samples.back().x.dim()) != ds.dim) {
      throw std::runtime_error("dataset: record dimension differs from header");
    }
  }
  if (ds.samples.size() != header.at("count").get<std::size_t>()) {
    throw std::runtime_error("dataset: record count differs from header");
  }
  return ds;
}

inline Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return read_dataset(is);
}

}  // namespace grpocl
