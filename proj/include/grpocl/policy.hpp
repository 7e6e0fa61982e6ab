// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "grpocl/boxcodec.hpp"
#include "grpocl/rng.hpp"

namespace grpocl {

inline constexpr double kContextBound = 10.0;

/// Feature vector conditioning the policy. Entries are finite and bounded by
/// kContextBound in absolute value.
class Context {
 public:
  Context() = default;
  explicit Context(std::vector<double> values) : values_(std::move(values)) {
    for (double v : values_) {
      if (!std::isfinite(v) || std::abs(v) > kContextBound) {
        throw std::invalid_argument("Context: entries must be finite with |x| <= 10");
      }
    }
  }

  std::span<const double> values() const noexcept { return values_; }
  std::size_t dim() const noexcept { return values_.size(); }
  double operator[](std::size_t j) const noexcept { return values_[j]; }

  friend bool operator==(const Context&, const Context&) = default;

 private:
  std::vector<double> values_;
};

/// Per-position weight matrices W_t (V x d), stored contiguously as
/// [t][token][feature].
class PolicyParams {
 public:
  PolicyParams() = default;
  PolicyParams(int vocab_size, int dim)
      : vocab_(vocab_size), dim_(dim),
        w_(static_cast<std::size_t>(kSequenceLength) * vocab_size * dim, 0.0) {
    if (vocab_size < 3 || dim < 1) throw std::invalid_argument("PolicyParams: bad shape");
  }

  int vocab_size() const noexcept { return vocab_; }
  int dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return w_.size(); }

  std::size_t index(int t, int token, int j) const noexcept {
    return (static_cast<std::size_t>(t) * vocab_ + token) * dim_ + j;
  }
  double& at(int t, int token, int j) noexcept { return w_[index(t, token, j)]; }
  double at(int t, int token, int j) const noexcept { return w_[index(t, token, j)]; }

  std::span<double> flat() noexcept { return w_; }
  std::span<const double> flat() const noexcept { return w_; }

  bool same_shape(const PolicyParams& o) const noexcept {
    return vocab_ == o.vocab_ && dim_ == o.dim_;
  }

  bool all_finite() const noexcept {
    return std::all_of(w_.begin(), w_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

 private:
  int vocab_ = 0;
  int dim_ = 0;
  std::vector<double> w_;
};

struct SamplerConfig {
  double temperature = 1.0;
  double top_p = 1.0;

  void validate() const {
    if (!(std::isfinite(temperature) && temperature > 0.0)) {
      throw std::invalid_argument("SamplerConfig: temperature must be finite and > 0");
    }
    if (!(top_p > 0.0 && top_p <= 1.0)) {
      throw std::invalid_argument("SamplerConfig: top_p must be in (0, 1]");
    }
  }
};

/// Deep copy used for the frozen sampling (old) and reference policies.
inline PolicyParams snapshot(const PolicyParams& theta) { return theta; }

inline void check_context(const PolicyParams& theta, const Context& x) {
  if (static_cast<int>(x.dim()) != theta.dim()) {
    throw std::invalid_argument("context dimension does not match policy");
  }
}

/// Logits of position t: W_t x.
inline std::vector<double> position_logits(const PolicyParams& theta, const Context& x, int t) {
  check_context(theta, x);
  if (t < 0 || t >= kSequenceLength) throw std::out_of_range("position_logits: bad position");
  const int v_size = theta.vocab_size(), d = theta.dim();
  std::vector<double> z(v_size, 0.0);
  const double* w = theta.flat().data() + theta.index(t, 0, 0);
  for (int v = 0; v < v_size; ++v) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j) acc += w[v * d + j] * x[j];
    z[v] = acc;
  }
  return z;
}

inline void log_softmax_inplace(std::span<double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (double& v : z) v -= lse;
}

inline std::vector<double> softmax(std::span<const double> z) {
  std::vector<double> p(z.begin(), z.end());
  log_softmax_inplace(p);
  for (double& v : p) v = std::exp(v);
  return p;
}

/// Log-probabilities of every token at every position, row-major [t][token].
/// Positions are conditionally independent given the context, so this table
/// determines the whole sequence distribution.
class LogProbTable {
 public:
  LogProbTable(const PolicyParams& theta, const Context& x) : vocab_(theta.vocab_size()) {
    table_.reserve(static_cast<std::size_t>(kSequenceLength) * vocab_);
    for (int t = 0; t < kSequenceLength; ++t) {
      auto z = position_logits(theta, x, t);
      log_softmax_inplace(z);
      table_.insert(table_.end(), z.begin(), z.end());
    }
  }

  int vocab_size() const noexcept { return vocab_; }
  double log_p(int t, int token) const noexcept { return table_[t * vocab_ + token]; }
  double p(int t, int token) const noexcept { return std::exp(log_p(t, token)); }
  std::span<const double> row(int t) const noexcept {
    return std::span<const double>(table_).subspan(static_cast<std::size_t>(t) * vocab_, vocab_);
  }

  double sequence_log_prob(const TokenSequence& s) const {
    double lp = 0.0;
    for (int t = 0; t < kSequenceLength; ++t) {
      if (s[t] < 0 || s[t] >= vocab_) throw std::out_of_range("token outside vocabulary");
      lp += log_p(t, s[t]);
    }
    return lp;
  }

 private:
  int vocab_;
  std::vector<double> table_;
};

inline double log_prob(const PolicyParams& theta, const Context& x, const TokenSequence& s) {
  return LogProbTable(theta, x).sequence_log_prob(s);
}

/// Exact KL(pi_theta || pi_ref) at context x, in nats: the sum of per-position
/// categorical KL divergences.
inline double kl_exact(const LogProbTable& p, const LogProbTable& q) {
  double kl = 0.0;
  for (int t = 0; t < kSequenceLength; ++t) {
    for (int v = 0; v < p.vocab_size(); ++v) {
      const double lp = p.log_p(t, v);
      kl += std::exp(lp) * (lp - q.log_p(t, v));
    }
  }
  return std::max(kl, 0.0);
}

inline double kl_exact(const PolicyParams& theta, const PolicyParams& ref, const Context& x) {
  if (!theta.same_shape(ref)) throw std::invalid_argument("kl_exact: shape mismatch");
  return kl_exact(LogProbTable(theta, x), LogProbTable(ref, x));
}

namespace detail {

// Draws one token from softmax(logits / temperature) restricted to the
// smallest top-probability set whose mass reaches top_p. Ties in probability
// are ordered by token id.
inline int sample_token(std::span<const double> logits, const SamplerConfig& cfg, Rng& rng) {
  std::vector<double> z(logits.begin(), logits.end());
  for (double& v : z) v /= cfg.temperature;
  std::vector<double> p = softmax(z);
  const int n = static_cast<int>(p.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  double mass = 1.0;
  if (cfg.top_p < 1.0) {
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p[a] > p[b]; });
    double cum = 0.0;
    int keep = 0;
    while (keep < n) {
      cum += p[order[keep]];
      ++keep;
      if (cum >= cfg.top_p) break;
    }
    order.resize(keep);
    mass = cum;
  }
  const double u = rng.uniform01() * mass;
  double cum = 0.0;
  for (int k : order) {
    cum += p[k];
    if (u < cum) return k;
  }
  return order.back();
}

}  // namespace detail

inline TokenSequence sample(const PolicyParams& theta, const Context& x, const SamplerConfig& cfg,
                            Rng& rng) {
  cfg.validate();
  TokenSequence s{};
  for (int t = 0; t < kSequenceLength; ++t) {
    const auto z = position_logits(theta, x, t);
    s[t] = detail::sample_token(z, cfg, rng);
  }
  return s;
}

/// Argmax decoding (the temperature -> 0 limit). Ties resolve to the lowest id.
inline TokenSequence greedy(const PolicyParams& theta, const Context& x) {
  TokenSequence s{};
  for (int t = 0; t < kSequenceLength; ++t) {
    const auto z = position_logits(theta, x, t);
    s[t] = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }
  return s;
}

/// grad += weight * d/dtheta log pi_theta(s | x).
/// d log softmax(z)[s_t] / dz_v = 1[v = s_t] - p_v and dz_v / dW_t[v, j] = x_j.
inline void accumulate_log_prob_grad(const LogProbTable& table, const Context& x,
                                     const TokenSequence& s, double weight, PolicyParams& grad) {
  if (weight == 0.0) return;
  const int v_size = grad.vocab_size(), d = grad.dim();
  auto g = grad.flat();
  for (int t = 0; t < kSequenceLength; ++t) {
    for (int v = 0; v < v_size; ++v) {
      const double dz = weight * ((v == s[t] ? 1.0 : 0.0) - table.p(t, v));
      if (dz == 0.0) continue;
      double* row = g.data() + grad.index(t, v, 0);
      for (int j = 0; j < d; ++j) row[j] += dz * x[j];
    }
  }
}

/// grad += weight * d/dtheta KL(pi_theta || pi_ref) at x, with pi_ref fixed.
/// Per position, dKL/dz_v = p_v (log p_v - log q_v - KL_t).
inline void accumulate_kl_grad(const LogProbTable& p, const LogProbTable& q, const Context& x,
                               double weight, PolicyParams& grad) {
  if (weight == 0.0) return;
  const int v_size = grad.vocab_size(), d = grad.dim();
  auto g = grad.flat();
  for (int t = 0; t < kSequenceLength; ++t) {
    double kl_t = 0.0;
    for (int v = 0; v < v_size; ++v) kl_t += p.p(t, v) * (p.log_p(t, v) - q.log_p(t, v));
    for (int v = 0; v < v_size; ++v) {
      const double dz = weight * p.p(t, v) * (p.log_p(t, v) - q.log_p(t, v) - kl_t);
      if (dz == 0.0) continue;
      double* row = g.data() + grad.index(t, v, 0);
      for (int j = 0; j < d; ++j) row[j] += dz * x[j];
    }
  }
}

/// Initial parameters that already emit the structural tokens: OPEN at the
/// first position, CLOSE at the last, and coordinate bins in between, with
/// the bins themselves uniform. `bias_feature` indexes a context entry that is
/// constant across samples; `strength` is the logit margin it produces.
inline PolicyParams format_prior(const Vocab& vocab, int dim, int bias_feature, double bias_value,
                                 double strength = 8.0) {
  if (bias_feature < 0 || bias_feature >= dim || bias_value == 0.0) {
    throw std::invalid_argument("format_prior: bad bias feature");
  }
  PolicyParams p(vocab.size(), dim);
  const double w = strength / bias_value;
  p.at(0, vocab.open(), bias_feature) = w;
  p.at(kSequenceLength - 1, vocab.close(), bias_feature) = w;
  for (int t = 1; t < kSequenceLength - 1; ++t) {
    p.at(t, vocab.open(), bias_feature) = -w;
    p.at(t, vocab.close(), bias_feature) = -w;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Checkpoint file: header line "grpo-policy v1 L=6 V=<V> d=<d>", optional
// '#'-prefixed metadata lines, then one line per (t, token) row holding the d
// weights in shortest round-trip decimal form.

inline std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf, end);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw std::runtime_error("malformed number '" + std::string(s) + "'");
  }
  return v;
}

inline void save_policy(std::ostream& os, const PolicyParams& p, const std::string& metadata = {}) {
  os << "grpo-policy v1 L=" << kSequenceLength << " V=" << p.vocab_size() << " d=" << p.dim()
     << '\n';
  if (!metadata.empty()) os << "# " << metadata << '\n';
  for (int t = 0; t < kSequenceLength; ++t) {
    for (int v = 0; v < p.vocab_size(); ++v) {
      for (int j = 0; j < p.dim(); ++j) {
        if (j) os << ' ';
        os << format_double(p.at(t, v, j));
      }
      os << '\n';
    }
  }
}

inline PolicyParams load_policy(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw std::runtime_error("policy file: missing header");
  int length = 0, vocab = 0, dim = 0;
  if (std::sscanf(header.c_str(), "grpo-policy v1 L=%d V=%d d=%d", &length, &vocab, &dim) != 3 ||
      length != kSequenceLength) {
    throw std::runtime_error("policy file: bad header '" + header + "'");
  }
  PolicyParams p(vocab, dim);
  std::string line;
  std::size_t filled = 0;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) {
      if (filled >= p.size()) throw std::runtime_error("policy file: too many weights");
      p.flat()[filled++] = parse_double(tok);
    }
  }
  if (filled != p.size()) throw std::runtime_error("policy file: truncated weights");
  if (!p.all_finite()) throw std::runtime_error("policy file: non-finite weight");
  return p;
}

inline void save_policy(const std::filesystem::path& path, const PolicyParams& p,
                        const std::string& metadata = {}) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  save_policy(os, p, metadata);
}

inline PolicyParams load_policy(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return load_policy(is);
}

/// Returns the '#' metadata line of a policy file (without the prefix), or "".
inline std::string policy_metadata(const std::filesystem::path& path) {
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  if (std::getline(is, line) && line.rfind("# ", 0) == 0) return line.substr(2);
  return {};
}

}  // namespace grpocl
