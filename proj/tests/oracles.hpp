// SPDX-License-Identifier: Apache-2.0
// Independent reference implementations used to check the library.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "grpocl/boxcodec.hpp"
#include "grpocl/geometry.hpp"
#include "grpocl/grpo.hpp"
#include "grpocl/policy.hpp"
#include "grpocl/rng.hpp"
#include "grpocl/synthetic_env.hpp"

namespace oracle {

/// IoU by counting pixel centers of an n x n grid covered by each box.
inline double raster_iou(const grpocl::BBox& a, const grpocl::BBox& b, int n = 512) {
  long inter = 0, uni = 0;
  for (int i = 0; i < n; ++i) {
    const double px = (i + 0.5) / n;
    const bool ax = px >= a.x1() && px < a.x2();
    const bool bx = px >= b.x1() && px < b.x2();
    if (!ax && !bx) continue;
    for (int j = 0; j < n; ++j) {
      const double py = (j + 0.5) / n;
      const bool in_a = ax && py >= a.y1() && py < a.y2();
      const bool in_b = bx && py >= b.y1() && py < b.y2();
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Straight-line restatement of the five format clauses.
inline bool reference_format(const grpocl::TokenSequence& s, int bins) {
  const int open = bins;
  const int close = bins + 1;
  bool ok = true;
  if (s[0] != open) ok = false;
  if (s[5] != close) ok = false;
  if (!(s[1] >= 0 && s[1] < bins && s[2] >= 0 && s[2] < bins && s[3] >= 0 && s[3] < bins &&
        s[4] >= 0 && s[4] < bins)) {
    ok = false;
  }
  if (ok && !(s[1] < s[3])) ok = false;
  if (ok && !(s[2] < s[4])) ok = false;
  return ok;
}

/// Calls f on every length-6 sequence over a vocabulary of size v.
inline void for_each_sequence(int v, const std::function<void(const grpocl::TokenSequence&)>& f) {
  grpocl::TokenSequence s{};
  const long total = static_cast<long>(std::pow(v, 6));
  for (long code = 0; code < total; ++code) {
    long c = code;
    for (int t = 5; t >= 0; --t) {
      s[t] = static_cast<int>(c % v);
      c /= v;
    }
    f(s);
  }
}

/// Probability that six independent uniform tokens over B+2 symbols form a
/// well-formed sequence: OPEN and CLOSE at the ends, and two strictly ordered
/// coordinate pairs.
inline double uniform_format_rate(int bins) {
  const double v = bins + 2.0;
  const double ordered_pair = (bins * (bins - 1.0) / 2.0) / (v * v);
  return (1.0 / v) * (1.0 / v) * ordered_pair * ordered_pair;
}

/// Same constant by brute force over all sequences (small vocabularies only).
inline double enumerated_format_rate(int bins) {
  const grpocl::Vocab vocab(bins);
  long ok = 0, total = 0;
  for_each_sequence(vocab.size(), [&](const grpocl::TokenSequence& s) {
    ok += reference_format(s, bins);
    ++total;
  });
  return static_cast<double>(ok) / static_cast<double>(total);
}

/// Monte-Carlo estimate of KL(theta || ref) at context x.
inline double mc_kl(const grpocl::PolicyParams& theta, const grpocl::PolicyParams& ref,
                    const grpocl::Context& x, int samples, grpocl::Rng& rng) {
  const grpocl::LogProbTable p(theta, x);
  const grpocl::LogProbTable q(ref, x);
  double sum = 0.0;
  for (int i = 0; i < samples; ++i) {
    const auto s = grpocl::sample(theta, x, {}, rng);
    sum += p.sequence_log_prob(s) - q.sequence_log_prob(s);
  }
  return sum / samples;
}

/// Central finite-difference gradient of f at theta.
inline grpocl::PolicyParams finite_difference(
    const std::function<double(const grpocl::PolicyParams&)>& f, const grpocl::PolicyParams& theta,
    double h = 1e-5) {
  grpocl::PolicyParams grad(theta.vocab_size(), theta.dim());
  grpocl::PolicyParams probe = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = probe.flat()[i];
    probe.flat()[i] = orig + h;
    const double up = f(probe);
    probe.flat()[i] = orig - h;
    const double down = f(probe);
    probe.flat()[i] = orig;
    grad.flat()[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// Pearson chi-square statistic of observed counts against expected
/// probabilities.
inline double chi_square(const std::vector<long>& observed, const std::vector<double>& probs) {
  long n = 0;
  for (long o : observed) n += o;
  double stat = 0.0;
  for (std::size_t k = 0; k < observed.size(); ++k) {
    const double e = probs[k] * static_cast<double>(n);
    if (e > 0.0) stat += (observed[k] - e) * (observed[k] - e) / e;
  }
  return stat;
}

/// Upper critical value of chi-square with k degrees of freedom at roughly
/// the 3-sigma level (p ~ 0.0013), Wilson-Hilferty approximation.
inline double chi_square_critical(int k, double z = 3.0) {
  const double a = 2.0 / (9.0 * k);
  const double c = 1.0 - a + z * std::sqrt(a);
  return k * c * c * c;
}

inline grpocl::PolicyParams random_params(int v, int d, double scale, grpocl::Rng& rng) {
  grpocl::PolicyParams p(v, d);
  for (auto& w : p.flat()) w = rng.normal(0.0, scale);
  return p;
}

inline grpocl::Context random_context(int d, double scale, grpocl::Rng& rng) {
  std::vector<double> x(static_cast<std::size_t>(d));
  for (auto& v : x) v = std::clamp(rng.normal(0.0, scale), -10.0, 10.0);
  return grpocl::Context(std::move(x));
}

inline grpocl::BBox random_box(grpocl::Rng& rng, double min_side = 0.01) {
  const double w = rng.uniform(min_side, 1.0);
  const double h = rng.uniform(min_side, 1.0);
  const double x1 = rng.uniform(0.0, 1.0 - w);
  const double y1 = rng.uniform(0.0, 1.0 - h);
  return grpocl::BBox(x1, y1, std::min(1.0, x1 + w), std::min(1.0, y1 + h));
}

/// A batch of groups over a small vocabulary with random sequences and random
/// rewards. Every `degenerate_every`-th group gets constant rewards.
inline std::vector<grpocl::GroupRollout> random_batch(const grpocl::PolicyParams& old,
                                                      int groups, int g, int d,
                                                      int degenerate_every, grpocl::Rng& rng) {
  const grpocl::Vocab vocab(old.vocab_size() - 2);
  std::vector<grpocl::GroupRollout> batch;
  for (int k = 0; k < groups; ++k) {
    const auto x = random_context(d, 2.0, rng);
    std::vector<grpocl::TokenSequence> seqs;
    for (int i = 0; i < g; ++i) seqs.push_back(grpocl::sample(old, x, {}, rng));
    auto grp = grpocl::make_group(old, x, grpocl::BBox(0.1, 0.1, 0.6, 0.7), seqs,
                                  grpocl::RewardWeights{}, vocab);
    std::vector<double> r(static_cast<std::size_t>(g));
    const bool flat = degenerate_every > 0 && k % degenerate_every == 0;
    for (auto& v : r) v = flat ? 0.7 : rng.uniform(0.0, 1.2);
    auto adv = grpocl::standardize_advantages(r);
    grp.advantages = adv.values;
    grp.degenerate = adv.degenerate;
    batch.push_back(std::move(grp));
  }
  return batch;
}

/// Hand-built linear policy that reads each coordinate straight off its
/// descriptor pair: bin b at coordinate k scores kappa e(center_b) . x_k, on
/// top of the format prior. Greedy decoding of noise-free descriptors returns
/// the target's own bins.
inline grpocl::PolicyParams embedding_policy(const grpocl::Vocab& vocab, double kappa) {
  auto p = grpocl::format_prior(vocab, grpocl::kContextDim, grpocl::kBiasFeature,
                                grpocl::kBiasValue);
  for (int k = 0; k < 4; ++k) {
    for (int b = 0; b < vocab.bins(); ++b) {
      const auto e = grpocl::detail::embed_coordinate(vocab.bin_center(b));
      p.at(k + 1, b, 1 + 2 * k) = kappa * e[0];
      p.at(k + 1, b, 2 + 2 * k) = kappa * e[1];
    }
  }
  return p;
}

}  // namespace oracle
