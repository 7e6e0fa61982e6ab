// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "grpocl/difficulty.hpp"
#include "grpocl/rng.hpp"
#include "grpocl/synthetic_env.hpp"

namespace grpocl {

enum class Strategy { Curriculum, Uniform, EasyOnly, HardOnly, FullDirect };

inline constexpr std::array<Strategy, 5> kStrategies{Strategy::Curriculum, Strategy::Uniform,
                                                     Strategy::EasyOnly, Strategy::HardOnly,
                                                     Strategy::FullDirect};

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::Curriculum: return "curriculum";
    case Strategy::Uniform: return "uniform";
    case Strategy::EasyOnly: return "easy_only";
    case Strategy::HardOnly: return "hard_only";
    case Strategy::FullDirect: return "full_direct";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  for (auto st : kStrategies) {
    if (s == to_string(st)) return st;
  }
  throw std::invalid_argument("unknown strategy '" + s + "'");
}

/// Named stage intervals for the phase-length sweep.
enum class PhasePreset { Short, Medium, Long };

inline int preset_interval(PhasePreset p) {
  switch (p) {
    case PhasePreset::Short: return 500;
    case PhasePreset::Medium: return 1000;
    case PhasePreset::Long: return 2000;
  }
  return 500;
}

inline PhasePreset parse_phase_preset(const std::string& s) {
  if (s == "short") return PhasePreset::Short;
  if (s == "medium") return PhasePreset::Medium;
  if (s == "long") return PhasePreset::Long;
  throw std::invalid_argument("unknown phase preset '" + s + "'");
}

struct CurriculumConfig {
  double m0 = 0.4;
  double w = 0.5;
  int total_steps = 1000;
  int stage_interval = 500;
  double share_start = 0.6;
  double share_end = 0.8;
  Strategy strategy = Strategy::Curriculum;

  void validate() const {
    if (!(m0 > 0.0 && m0 <= 1.0)) throw std::invalid_argument("curriculum: m0 must be in (0, 1]");
    if (!(w > 0.0 && w < 1.0)) throw std::invalid_argument("curriculum: w must be in (0, 1)");
    if (total_steps < 1) throw std::invalid_argument("curriculum: total_steps must be >= 1");
    if (stage_interval < 1 || stage_interval > total_steps) {
      throw std::invalid_argument("curriculum: stage_interval must be in [1, total_steps]");
    }
    if (!(share_start >= 0.0 && share_start <= 1.0 && share_end >= 0.0 && share_end <= 1.0)) {
      throw std::invalid_argument("curriculum: domain shares must be in [0, 1]");
    }
  }
};

namespace detail {
inline void check_step(int t, const CurriculumConfig& cfg) {
  if (t < 0 || t > cfg.total_steps) throw std::out_of_range("curriculum: step outside [0, T]");
}
}  // namespace detail

/// m(t) = m0 (1 - t / (w T)) up to t = w T, zero afterwards.
inline double easy_weight(int t, const CurriculumConfig& cfg) {
  detail::check_step(t, cfg);
  const double wt = cfg.w * cfg.total_steps;
  if (t > wt) return 0.0;
  return std::max(0.0, cfg.m0 * (1.0 - t / wt));
}

struct TierDistribution {
  double easy = 0.0;
  double medium = 0.0;
  double hard = 0.0;

  double operator[](Tier t) const {
    return t == Tier::Easy ? easy : (t == Tier::Medium ? medium : hard);
  }
};

/// Tier sampling probabilities at step t. `tier_counts` is only consulted
/// by full_direct, which reports the dataset's own tier proportions.
inline TierDistribution tier_distribution(int t, const CurriculumConfig& cfg,
                                          const std::array<std::size_t, 3>& tier_counts = {1, 1,
                                                                                           1}) {
  detail::check_step(t, cfg);
  switch (cfg.strategy) {
    case Strategy::Curriculum: {
      const double m = easy_weight(t, cfg);
      const double rest = 1.0 - m;
      const double hard = rest * (static_cast<double>(t) / cfg.total_steps);
      return {m, rest - hard, hard};
    }
    case Strategy::Uniform: return {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    case Strategy::EasyOnly: return {1.0, 0.0, 0.0};
    case Strategy::HardOnly: return {0.0, 0.0, 1.0};
    case Strategy::FullDirect: {
      const double n = static_cast<double>(tier_counts[0] + tier_counts[1] + tier_counts[2]);
      if (n == 0.0) throw std::invalid_argument("tier_distribution: no tiered samples");
      return {tier_counts[0] / n, tier_counts[1] / n, tier_counts[2] / n};
    }
  }
  return {};
}

/// Domain-B share, stepped once per stage of K steps.
inline double domain_weight(int t, const CurriculumConfig& cfg) {
  detail::check_step(t, cfg);
  const int k = cfg.stage_interval;
  const double stage_start = static_cast<double>((t / k) * k);
  const double lo = std::min(cfg.share_start, cfg.share_end);
  const double hi = std::max(cfg.share_start, cfg.share_end);
  const double share =
      cfg.share_start + (cfg.share_end - cfg.share_start) * stage_start / cfg.total_steps;
  return std::clamp(share, lo, hi);
}

struct CurriculumState {
  int step = 0;
  int stage = 0;
  TierDistribution tiers;
  double domain_b = 0.0;
};

inline CurriculumState curriculum_state(int t, const CurriculumConfig& cfg,
                                        const std::array<std::size_t, 3>& tier_counts = {1, 1,
                                                                                         1}) {
  return {t, t / cfg.stage_interval, tier_distribution(t, cfg, tier_counts),
          domain_weight(t, cfg)};
}

/// A sample's placement for batch drawing.
struct PoolEntry {
  std::uint64_t id = 0;
  Tier tier = Tier::Easy;
  Domain domain = Domain::A;
};

/// Draws batches of sample ids according to the schedule.
///
/// Each slot picks a tier from tier_distribution, a domain with probability
/// domain_weight for B, then an id uniformly from that tier and domain. An
/// empty (tier, domain) pool falls back to the whole tier; an empty tier
/// falls back to the nearest nonempty tier, preferring the easier one on a
/// tie. full_direct ignores the schedule and draws uniformly from all ids.
class BatchSampler {
 public:
  BatchSampler(std::span<const PoolEntry> entries, CurriculumConfig cfg)
      : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (entries.empty()) throw std::invalid_argument("BatchSampler: empty pool");
    for (const auto& e : entries) {
      const auto t = static_cast<std::size_t>(e.tier);
      by_tier_domain_[t][e.domain == Domain::A ? 0 : 1].push_back(e.id);
      by_tier_[t].push_back(e.id);
      all_.push_back(e.id);
    }
  }

  const CurriculumConfig& config() const noexcept { return cfg_; }

  std::array<std::size_t, 3> tier_counts() const {
    return {by_tier_[0].size(), by_tier_[1].size(), by_tier_[2].size()};
  }

  CurriculumState state(int t) const { return curriculum_state(t, cfg_, tier_counts()); }

  std::vector<std::uint64_t> next_batch(int t, int batch_size, Rng& rng) const {
    if (batch_size < 1) throw std::invalid_argument("next_batch: batch size must be >= 1");
    std::vector<std::uint64_t> ids;
    ids.reserve(static_cast<std::size_t>(batch_size));
    if (cfg_.strategy == Strategy::FullDirect) {
      detail::check_step(t, cfg_);
      for (int i = 0; i < batch_size; ++i) ids.push_back(all_[rng.below(all_.size())]);
      return ids;
    }
    const auto dist = tier_distribution(t, cfg_);
    const double wb = domain_weight(t, cfg_);
    for (int i = 0; i < batch_size; ++i) {
      const double u = rng.uniform01();
      const Tier tier = u < dist.easy ? Tier::Easy
                        : u < dist.easy + dist.medium ? Tier::Medium
                                                      : Tier::Hard;
      const int domain = rng.uniform01() < wb ? 1 : 0;
      const auto& pool = resolve_pool(tier, domain);
      ids.push_back(pool[rng.below(pool.size())]);
    }
    return ids;
  }

 private:
  const std::vector<std::uint64_t>& resolve_pool(Tier tier, int domain) const {
    const auto t = static_cast<std::size_t>(tier);
    if (!by_tier_domain_[t][domain].empty()) return by_tier_domain_[t][domain];
    if (!by_tier_[t].empty()) return by_tier_[t];
    for (int dist = 1; dist <= 2; ++dist) {
      for (int cand : {static_cast<int>(t) - dist, static_cast<int>(t) + dist}) {
        if (cand >= 0 && cand < 3 && !by_tier_[cand].empty()) return by_tier_[cand];
      }
    }
    return all_;
  }

  CurriculumConfig cfg_;
  std::array<std::array<std::vector<std::uint64_t>, 2>, 3> by_tier_domain_;
  std::array<std::vector<std::uint64_t>, 3> by_tier_;
  std::vector<std::uint64_t> all_;
};

}  // namespace grpocl
