// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "grpocl/boxcodec.hpp"
#include "grpocl/geometry.hpp"
#include "grpocl/policy.hpp"

namespace grpocl {

/// Weights of the composite reward and of the KL constraint.
///
/// reward = alpha_iou * IoU * [format ok] + beta_format * [format ok];
/// the objective subtracts beta_kl * KL(pi_theta || pi_ref).
struct RewardWeights {
  double alpha_iou = 1.0;
  double beta_format = 0.2;
  double beta_kl = 0.04;

  void validate() const {
    if (!(alpha_iou >= 0.0 && beta_format >= 0.0 && beta_kl >= 0.0)) {
      throw std::invalid_argument("RewardWeights: weights must be >= 0");
    }
    if (!(alpha_iou + beta_format > 0.0)) {
      throw std::invalid_argument("RewardWeights: alpha_iou + beta_format must be > 0");
    }
  }
};

struct RewardBreakdown {
  double total = 0.0;
  double iou = 0.0;     // IoU of the decoded box, 0 when the format fails
  double format = 0.0;  // 1 when well-formed, else 0
};

inline RewardBreakdown candidate_reward(const TokenSequence& s, const BBox& gt,
                                        const RewardWeights& w, const Vocab& v) {
  const auto box = decode_sequence(s, v);
  if (!box) return {};
  RewardBreakdown r;
  r.iou = iou(*box, gt);
  r.format = 1.0;
  r.total = w.alpha_iou * r.iou + w.beta_format;
  return r;
}

inline constexpr double kDegenerateStd = 1e-6;

struct Advantages {
  std::vector<double> values;
  bool degenerate = false;
};

/// A_i = (r_i - mean) / std with the population standard deviation. Groups
/// whose std falls below kDegenerateStd get all-zero advantages. Deviations
/// are formed before the spread is measured, so a constant reward shift that
/// is exact in floating point leaves the result bit-identical.
inline Advantages standardize_advantages(std::span<const double> rewards) {
  const std::size_t n = rewards.size();
  if (n < 2) throw std::invalid_argument("standardize_advantages: group size must be >= 2");
  for (double r : rewards) {
    if (!std::isfinite(r)) throw std::invalid_argument("standardize_advantages: non-finite reward");
  }
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(n);
  Advantages out;
  out.values.resize(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.values[i] = rewards[i] - mean;
    ss += out.values[i] * out.values[i];
  }
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (sd < kDegenerateStd) {
    std::fill(out.values.begin(), out.values.end(), 0.0);
    out.degenerate = true;
    return out;
  }
  for (double& a : out.values) a /= sd;
  return out;
}

struct CandidateOutput {
  TokenSequence sequence{};
  std::optional<BBox> decoded;
  double logp_old = 0.0;
  RewardBreakdown reward;
};

struct GroupRollout {
  Context context;
  BBox gt;
  std::vector<CandidateOutput> candidates;
  std::vector<double> advantages;
  bool degenerate = false;

  std::size_t size() const noexcept { return candidates.size(); }
};

/// Builds a group from already-sampled sequences scored under `old_policy`.
inline GroupRollout make_group(const PolicyParams& old_policy, const Context& x, const BBox& gt,
                               std::span<const TokenSequence> sequences, const RewardWeights& w,
                               const Vocab& v) {
  if (sequences.size() < 2) throw std::invalid_argument("make_group: need at least 2 candidates");
  const LogProbTable table(old_policy, x);
  GroupRollout g{x, gt, {}, {}, false};
  g.candidates.reserve(sequences.size());
  std::vector<double> rewards;
  rewards.reserve(sequences.size());
  for (const auto& s : sequences) {
    CandidateOutput c;
    c.sequence = s;
    c.decoded = decode_sequence(s, v);
    c.logp_old = table.sequence_log_prob(s);
    c.reward = candidate_reward(s, gt, w, v);
    rewards.push_back(c.reward.total);
    g.candidates.push_back(std::move(c));
  }
  auto adv = standardize_advantages(rewards);
  g.advantages = std::move(adv.values);
  g.degenerate = adv.degenerate;
  return g;
}

/// Samples G candidates from the frozen sampling policy and scores them.
inline GroupRollout rollout_group(const PolicyParams& old_policy, const Context& x, const BBox& gt,
                                  int group_size, const SamplerConfig& sampler,
                                  const RewardWeights& w, const Vocab& v, Rng& rng) {
  std::vector<TokenSequence> seqs;
  seqs.reserve(static_cast<std::size_t>(group_size));
  for (int i = 0; i < group_size; ++i) seqs.push_back(sample(old_policy, x, sampler, rng));
  return make_group(old_policy, x, gt, seqs, w, v);
}

struct ObjectiveOptions {
  /// PPO-style ratio clipping. Off by default; only the ablation harness
  /// turns it on.
  std::optional<double> clip_epsilon;
};

inline constexpr double kRatioMin = 1e-6;
inline constexpr double kRatioMax = 1e6;

namespace detail {

struct RatioTerm {
  double value = 0.0;  // contribution to sum_i ratio_i * A_i
  double slope = 0.0;  // coefficient multiplying grad log pi_theta(s_i)
};

inline RatioTerm ratio_term(double log_ratio, double advantage, const ObjectiveOptions& opts) {
  const double raw = std::exp(log_ratio);
  const bool guarded = raw < kRatioMin || raw > kRatioMax;
  const double ratio = std::clamp(raw, kRatioMin, kRatioMax);
  RatioTerm term{ratio * advantage, guarded ? 0.0 : ratio * advantage};
  if (opts.clip_epsilon) {
    const double eps = *opts.clip_epsilon;
    const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage;
    if (clipped < term.value) term = {clipped, 0.0};
  }
  return term;
}

}  // namespace detail

/// J = (1/G) sum_i ratio_i A_i - beta_kl KL(pi_theta || pi_ref), to maximize.
inline double surrogate_objective(const PolicyParams& theta, const GroupRollout& group,
                                  const PolicyParams& ref, const RewardWeights& w,
                                  const ObjectiveOptions& opts = {}) {
  const LogProbTable p(theta, group.context);
  double sum = 0.0;
  for (std::size_t i = 0; i < group.size(); ++i) {
    const auto& c = group.candidates[i];
    const double log_ratio = p.sequence_log_prob(c.sequence) - c.logp_old;
    sum += detail::ratio_term(log_ratio, group.advantages[i], opts).value;
  }
  double j = sum / static_cast<double>(group.size());
  if (w.beta_kl != 0.0) j -= w.beta_kl * kl_exact(p, LogProbTable(ref, group.context));
  return j;
}

/// Mean of the per-group objective over a batch.
inline double batch_objective(const PolicyParams& theta, std::span<const GroupRollout> batch,
                              const PolicyParams& ref, const RewardWeights& w,
                              const ObjectiveOptions& opts = {}) {
  if (batch.empty()) throw std::invalid_argument("batch_objective: empty batch");
  double j = 0.0;
  for (const auto& g : batch) j += surrogate_objective(theta, g, ref, w, opts);
  return j / static_cast<double>(batch.size());
}

/// Analytic gradient of batch_objective with respect to theta.
inline PolicyParams objective_gradient(const PolicyParams& theta,
                                       std::span<const GroupRollout> batch,
                                       const PolicyParams& ref, const RewardWeights& w,
                                       const ObjectiveOptions& opts = {}) {
  if (batch.empty()) throw std::invalid_argument("objective_gradient: empty batch");
  if (!theta.same_shape(ref)) throw std::invalid_argument("objective_gradient: shape mismatch");
  PolicyParams grad(theta.vocab_size(), theta.dim());
  const double group_weight = 1.0 / static_cast<double>(batch.size());
  for (const auto& g : batch) {
    const LogProbTable p(theta, g.context);
    const double cand_weight = group_weight / static_cast<double>(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto& c = g.candidates[i];
      const double log_ratio = p.sequence_log_prob(c.sequence) - c.logp_old;
      const auto term = detail::ratio_term(log_ratio, g.advantages[i], opts);
      accumulate_log_prob_grad(p, g.context, c.sequence, cand_weight * term.slope, grad);
    }
    if (w.beta_kl != 0.0) {
      accumulate_kl_grad(p, LogProbTable(ref, g.context), g.context, -group_weight * w.beta_kl,
                         grad);
    }
  }
  return grad;
}

}  // namespace grpocl
