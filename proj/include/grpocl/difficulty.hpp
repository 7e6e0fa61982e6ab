// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "grpocl/boxcodec.hpp"
#include "grpocl/geometry.hpp"
#include "grpocl/policy.hpp"
#include "grpocl/rng.hpp"
#include "grpocl/synthetic_env.hpp"

namespace grpocl {

enum class Tier { Easy = 0, Medium = 1, Hard = 2 };
inline constexpr std::array<Tier, 3> kTiers{Tier::Easy, Tier::Medium, Tier::Hard};

inline const char* to_string(Tier t) {
  switch (t) {
    case Tier::Easy: return "easy";
    case Tier::Medium: return "medium";
    case Tier::Hard: return "hard";
  }
  return "?";
}

inline Tier parse_tier(const std::string& s) {
  if (s == "easy") return Tier::Easy;
  if (s == "medium") return Tier::Medium;
  if (s == "hard") return Tier::Hard;
  throw std::invalid_argument("unknown tier '" + s + "'");
}

struct RolloutStats {
  double mean_iou = 0.0;
  double std_iou = 0.0;  // population std over the G rollouts
  double format_rate = 0.0;
};

/// Samples G sequences from the base policy and summarizes their IoU with the
/// target. Malformed sequences count as IoU 0.
inline RolloutStats rollout_stats(const PolicyParams& base, const Context& x, const BBox& gt,
                                  int group_size, const SamplerConfig& sampler, const Vocab& vocab,
                                  Rng& rng) {
  if (group_size < 2) throw std::invalid_argument("rollout_stats: group size must be >= 2");
  std::vector<double> ious(static_cast<std::size_t>(group_size));
  int well_formed = 0;
  for (auto& v : ious) {
    const auto box = decode_sequence(sample(base, x, sampler, rng), vocab);
    v = box ? iou(*box, gt) : 0.0;
    well_formed += box ? 1 : 0;
  }
  RolloutStats st;
  for (double v : ious) st.mean_iou += v;
  st.mean_iou /= group_size;
  double ss = 0.0;
  for (double v : ious) ss += (v - st.mean_iou) * (v - st.mean_iou);
  st.std_iou = std::sqrt(ss / group_size);
  st.format_rate = static_cast<double>(well_formed) / group_size;
  return st;
}

struct DifficultyWeights {
  double lambda_mean = 1.0;
  double lambda_var = 0.5;
  double lambda_sem = 0.5;

  void validate() const {
    if (!(lambda_mean >= 0.0 && lambda_var >= 0.0 && lambda_sem >= 0.0)) {
      throw std::invalid_argument("DifficultyWeights: weights must be >= 0");
    }
    if (lambda_mean + lambda_var + lambda_sem <= 0.0) {
      throw std::invalid_argument("DifficultyWeights: weights must not all be zero");
    }
  }
};

/// S = lambda_mean (1 - mu) + lambda_var sigma + lambda_sem (1 - f).
/// Higher is harder: low mean IoU, high rollout spread, frequent format errors.
inline double difficulty_score(double mean_iou, double std_iou, double format_rate,
                               const DifficultyWeights& w) {
  return w.lambda_mean * (1.0 - mean_iou) + w.lambda_var * std_iou +
         w.lambda_sem * (1.0 - format_rate);
}

struct DifficultyRecord {
  std::uint64_t id = 0;
  Domain domain = Domain::A;
  RolloutStats stats;
  double score = 0.0;
  bool scored = false;
  std::optional<Tier> tier;
};

struct TierQuantiles {
  double lower = 1.0 / 3.0;
  double upper = 2.0 / 3.0;

  void validate() const {
    if (!(lower > 0.0 && lower < upper && upper < 1.0)) {
      throw std::invalid_argument("TierQuantiles: need 0 < lower < upper < 1");
    }
  }
};

/// Score boundaries between tiers, as reported after partitioning.
struct TierBoundaries {
  double easy_max = 0.0;
  double medium_max = 0.0;
};

inline bool record_order(const DifficultyRecord& a, const DifficultyRecord& b) {
  return a.score != b.score ? a.score < b.score : a.id < b.id;
}

/// Sorts records by (score, id) and assigns tiers by rank: the first
/// floor(lower n) are Easy, ranks up to floor(upper n) are Medium, the rest
/// Hard.
inline TierBoundaries partition_tiers(std::vector<DifficultyRecord>& records,
                                      TierQuantiles q = {}) {
  q.validate();
  if (records.size() < 3) throw std::invalid_argument("partition_tiers: need at least 3 records");
  for (const auto& r : records) {
    if (!r.scored || !std::isfinite(r.score)) {
      throw std::invalid_argument("partition_tiers: unscored record " + std::to_string(r.id));
    }
  }
  std::sort(records.begin(), records.end(), record_order);
  const double n = static_cast<double>(records.size());
  const auto cut1 = static_cast<std::size_t>(std::floor(q.lower * n + 1e-9));
  const auto cut2 = static_cast<std::size_t>(std::floor(q.upper * n + 1e-9));
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].tier = i < cut1 ? Tier::Easy : (i < cut2 ? Tier::Medium : Tier::Hard);
  }
  TierBoundaries b;
  b.easy_max = cut1 > 0 ? records[cut1 - 1].score : records.front().score;
  b.medium_max = cut2 > 0 ? records[cut2 - 1].score : records.front().score;
  return b;
}

struct ScoringConfig {
  int group_size = 8;
  SamplerConfig probe{};
  DifficultyWeights weights{};
  TierQuantiles quantiles{};
  std::uint64_t seed = 0;
};

namespace detail {
inline constexpr std::uint64_t kStreamScore = 0x73636f72ULL;  // "scor"
}

/// Scores every sample with the base policy. Each sample draws from its own
/// seed stream derived from (seed, id), so results do not depend on order.
inline std::vector<DifficultyRecord> score_samples(const PolicyParams& base,
                                                   std::span<const SceneSample> samples,
                                                   const ScoringConfig& cfg, const Vocab& vocab) {
  cfg.weights.validate();
  std::vector<DifficultyRecord> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    Rng rng(derive_seed(cfg.seed, detail::kStreamScore, s.id));
    DifficultyRecord r;
    r.id = s.id;
    r.domain = s.domain;
    r.stats = rollout_stats(base, s.x, s.gt, cfg.group_size, cfg.probe, vocab, rng);
    r.score = difficulty_score(r.stats.mean_iou, r.stats.std_iou, r.stats.format_rate, cfg.weights);
    r.scored = true;
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Difficulty report, JSON lines sorted by score. Header:
//   {"schema":"grpocl-difficulty","version":1,"group_size":G,
//    "boundaries":[easy_max, medium_max],"config_hash":"<hex>"}
// Records:
//   {"id":..,"domain":"A","mean_iou":..,"std_iou":..,"format_rate":..,
//    "score":..,"tier":"easy"}

inline constexpr const char* kDifficultySchema = "grpocl-difficulty";

struct DifficultyReport {
  int group_size = 8;
  TierBoundaries boundaries;
  std::string config_hash;
  std::vector<DifficultyRecord> records;

  std::array<std::size_t, 3> tier_counts() const {
    std::array<std::size_t, 3> c{};
    for (const auto& r : records) {
      if (r.tier) ++c[static_cast<int>(*r.tier)];
    }
    return c;
  }
};

inline void write_report(std::ostream& os, const DifficultyReport& rep) {
  nlohmann::json header = {{"schema", kDifficultySchema},
                           {"version", 1},
                           {"group_size", rep.group_size},
                           {"boundaries", {rep.boundaries.easy_max, rep.boundaries.medium_max}},
                           {"config_hash", rep.config_hash}};
  os << header.dump() << '\n';
  for (const auto& r : rep.records) {
    nlohmann::json j = {{"id", r.id},
                        {"domain", to_string(r.domain)},
                        {"mean_iou", r.stats.mean_iou},
                        {"std_iou", r.stats.std_iou},
                        {"format_rate", r.stats.format_rate},
                        {"score", r.score},
                        {"tier", r.tier ? nlohmann::json(to_string(*r.tier)) : nlohmann::json()}};
    os << j.dump() << '\n';
  }
}

inline DifficultyReport read_report(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("difficulty report: empty file");
  const auto header = nlohmann::json::parse(line);
  if (header.value("schema", "") != kDifficultySchema) {
    throw std::runtime_error("difficulty report: unsupported header");
  }
  DifficultyReport rep;
  rep.group_size = header.at("group_size").get<int>();
  const auto b = header.at("boundaries").get<std::vector<double>>();
  if (b.size() == 2) rep.boundaries = {b[0], b[1]};
  rep.config_hash = header.value("config_hash", "");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    DifficultyRecord r;
    r.id = j.at("id").get<std::uint64_t>();
    r.domain = parse_domain(j.at("domain").get<std::string>());
    r.stats = {j.at("mean_iou").get<double>(), j.at("std_iou").get<double>(),
               j.at("format_rate").get<double>()};
    r.score = j.at("score").get<double>();
    r.scored = true;
    if (!j.at("tier").is_null()) r.tier = parse_tier(j.at("tier").get<std::string>());
    rep.records.push_back(r);
  }
  return rep;
}

inline void write_report(const std::filesystem::path& path, const DifficultyReport& rep) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_report(os, rep);
}

inline DifficultyReport read_report(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return read_report(is);
}

/// Scores, partitions and packages a report for the given samples.
inline DifficultyReport build_report(const PolicyParams& base, std::span<const SceneSample> samples,
                                     const ScoringConfig& cfg, const Vocab& vocab) {
  DifficultyReport rep;
  rep.group_size = cfg.group_size;
  rep.records = score_samples(base, samples, cfg, vocab);
  rep.boundaries = partition_tiers(rep.records, cfg.quantiles);
  return rep;
}

}  // namespace grpocl
