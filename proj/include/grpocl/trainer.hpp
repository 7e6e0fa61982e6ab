// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "grpocl/boxcodec.hpp"
#include "grpocl/curriculum.hpp"
#include "grpocl/difficulty.hpp"
#include "grpocl/grpo.hpp"
#include "grpocl/policy.hpp"
#include "grpocl/rng.hpp"
#include "grpocl/synthetic_env.hpp"

namespace grpocl {

enum class TrainPreset { Desk, Paper };

inline const char* to_string(TrainPreset p) { return p == TrainPreset::Desk ? "desk" : "paper"; }

inline TrainPreset parse_train_preset(const std::string& s) {
  if (s == "desk") return TrainPreset::Desk;
  if (s == "paper") return TrainPreset::Paper;
  throw std::invalid_argument("unknown preset '" + s + "'");
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct TrainConfig {
  TrainPreset preset = TrainPreset::Desk;
  double lr = 5e-3;
  int batch_groups = 16;
  int total_steps = 2000;
  double warmup_fraction = 0.1;
  int group_size = 8;
  std::uint64_t seed = 0;
  AdamConfig adam{};
  /// Reference policy refresh cadence in steps; 0 keeps it frozen.
  int ref_refresh_every = 0;
  /// Share of total_steps spent in the warm-up phase that produces the
  /// scoring checkpoint. The rest is the curriculum phase.
  double warmup_phase_fraction = 0.25;
  SamplerConfig sampler{};
  RewardWeights reward{};
  ObjectiveOptions objective{};
  bool record_wall_clock = false;

  static TrainConfig for_preset(TrainPreset p) {
    TrainConfig c;
    c.preset = p;
    if (p == TrainPreset::Paper) {
      c.lr = 5e-7;
      c.batch_groups = 32;
      c.total_steps = 5000;
    }
    return c;
  }

  int warmup_phase_steps() const {
    return static_cast<int>(std::floor(warmup_phase_fraction * total_steps + 1e-9));
  }
  int curriculum_steps() const { return total_steps - warmup_phase_steps(); }

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("train: lr must be > 0");
    if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) {
      throw std::invalid_argument("train: warmup_fraction must be in (0, 1)");
    }
    if (batch_groups < 1) throw std::invalid_argument("train: batch_groups must be >= 1");
    if (total_steps < 1) throw std::invalid_argument("train: total_steps must be >= 1");
    if (group_size < 2) throw std::invalid_argument("train: group_size must be >= 2");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
      throw std::invalid_argument("train: Adam betas must be in [0, 1)");
    }
    if (!(adam.eps > 0.0) || adam.weight_decay < 0.0) {
      throw std::invalid_argument("train: Adam eps must be > 0 and weight_decay >= 0");
    }
    if (ref_refresh_every < 0) throw std::invalid_argument("train: ref_refresh_every must be >= 0");
    if (!(warmup_phase_fraction >= 0.0 && warmup_phase_fraction < 1.0)) {
      throw std::invalid_argument("train: warmup_phase_fraction must be in [0, 1)");
    }
    sampler.validate();
    reward.validate();
  }
};

/// Linear warm-up over the first warmup_fraction of T, then cosine decay to
/// zero at T.
inline double lr_at(int step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_steps) throw std::out_of_range("lr_at: step outside [0, T]");
  const double t = cfg.total_steps;
  const double warm = cfg.warmup_fraction * t;
  if (step < warm) return cfg.lr * (step / warm);
  const double progress = (step - warm) / (t - warm);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct AdamState {
  PolicyParams m;
  PolicyParams v;
  std::int64_t updates = 0;

  AdamState() = default;
  explicit AdamState(const PolicyParams& shape)
      : m(shape.vocab_size(), shape.dim()), v(shape.vocab_size(), shape.dim()) {}
};

/// One Adam step in the ascent direction. A gradient of exactly zero with
/// zero moments leaves theta untouched.
inline void adam_ascent(PolicyParams& theta, const PolicyParams& grad, AdamState& st, double lr,
                        const AdamConfig& cfg) {
  if (!theta.same_shape(grad) || !theta.same_shape(st.m)) {
    throw std::invalid_argument("adam_ascent: shape mismatch");
  }
  ++st.updates;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.updates));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.updates));
  auto w = theta.flat();
  const auto g = grad.flat();
  auto m = st.m.flat();
  auto v = st.v.flat();
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double step = (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    w[i] += lr * step - lr * cfg.weight_decay * w[i];
  }
}

struct TrainMetrics {
  int step = 0;
  std::string phase;
  double lr = 0.0;
  double mean_reward = 0.0;
  double mean_iou = 0.0;
  double format_rate = 0.0;
  double kl_ref = 0.0;
  double grad_norm = 0.0;
  double reward_std = 0.0;  // mean within-group std over non-degenerate groups
  double degenerate_fraction = 0.0;
  TierDistribution tiers;
  double domain_b = 0.0;
  std::optional<double> wall_ms;
};

inline nlohmann::json to_json(const TrainMetrics& m) {
  nlohmann::json j = {{"step", m.step},
                      {"phase", m.phase},
                      {"lr", m.lr},
                      {"mean_reward", m.mean_reward},
                      {"mean_iou", m.mean_iou},
                      {"format_rate", m.format_rate},
                      {"kl_ref", m.kl_ref},
                      {"grad_norm", m.grad_norm},
                      {"reward_std", m.reward_std},
                      {"degenerate_fraction", m.degenerate_fraction},
                      {"p_easy", m.tiers.easy},
                      {"p_medium", m.tiers.medium},
                      {"p_hard", m.tiers.hard},
                      {"domain_b", m.domain_b}};
  if (m.wall_ms) j["wall_ms"] = *m.wall_ms;
  return j;
}

inline TrainMetrics metrics_from_json(const nlohmann::json& j) {
  TrainMetrics m;
  m.step = j.at("step").get<int>();
  m.phase = j.at("phase").get<std::string>();
  m.lr = j.at("lr").get<double>();
  m.mean_reward = j.at("mean_reward").get<double>();
  m.mean_iou = j.at("mean_iou").get<double>();
  m.format_rate = j.at("format_rate").get<double>();
  m.kl_ref = j.at("kl_ref").get<double>();
  m.grad_norm = j.at("grad_norm").get<double>();
  m.reward_std = j.at("reward_std").get<double>();
  m.degenerate_fraction = j.at("degenerate_fraction").get<double>();
  m.tiers = {j.at("p_easy").get<double>(), j.at("p_medium").get<double>(),
             j.at("p_hard").get<double>()};
  m.domain_b = j.at("domain_b").get<double>();
  if (j.contains("wall_ms")) m.wall_ms = j.at("wall_ms").get<double>();
  return m;
}

class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(int step, const std::string& what)
      : std::runtime_error("step " + std::to_string(step) + ": " + what), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

/// Policy, snapshots and optimizer state carried across steps.
struct TrainerState {
  PolicyParams theta;
  PolicyParams old;  // sampling snapshot, refreshed after every update
  PolicyParams ref;
  AdamState adam;
  int step = 0;  // number of completed steps

  TrainerState() = default;
  explicit TrainerState(const PolicyParams& init)
      : theta(init), old(init), ref(init), adam(init) {}
};

/// Applies one update from groups sampled under state.old and returns the
/// step's metrics. Tier and domain fields are left for the caller.
inline TrainMetrics train_step(TrainerState& state, std::span<const GroupRollout> batch,
                               const TrainConfig& cfg) {
  const int step = state.step;
  const auto grad =
      objective_gradient(state.theta, batch, state.ref, cfg.reward, cfg.objective);
  if (!grad.all_finite()) throw TrainingAborted(step, "non-finite gradient");

  TrainMetrics m;
  m.step = step;
  m.lr = lr_at(step, cfg);
  double sq = 0.0;
  for (double g : grad.flat()) sq += g * g;
  m.grad_norm = std::sqrt(sq);

  std::size_t candidates = 0;
  std::size_t healthy = 0;
  for (const auto& g : batch) {
    double mean = 0.0;
    for (const auto& c : g.candidates) {
      mean += c.reward.total;
      m.mean_reward += c.reward.total;
      m.mean_iou += c.reward.iou;
      m.format_rate += c.reward.format;
    }
    candidates += g.size();
    mean /= static_cast<double>(g.size());
    m.kl_ref += kl_exact(state.theta, state.ref, g.context);
    if (g.degenerate) continue;
    double ss = 0.0;
    for (const auto& c : g.candidates) ss += (c.reward.total - mean) * (c.reward.total - mean);
    m.reward_std += std::sqrt(ss / static_cast<double>(g.size()));
    ++healthy;
  }
  m.mean_reward /= static_cast<double>(candidates);
  m.mean_iou /= static_cast<double>(candidates);
  m.format_rate /= static_cast<double>(candidates);
  m.kl_ref /= static_cast<double>(batch.size());
  m.reward_std = healthy ? m.reward_std / static_cast<double>(healthy) : 0.0;
  m.degenerate_fraction =
      static_cast<double>(batch.size() - healthy) / static_cast<double>(batch.size());

  adam_ascent(state.theta, grad, state.adam, m.lr, cfg.adam);
  if (!state.theta.all_finite()) throw TrainingAborted(step, "non-finite parameters");
  state.old = snapshot(state.theta);
  ++state.step;
  if (cfg.ref_refresh_every > 0 && state.step % cfg.ref_refresh_every == 0) {
    state.ref = snapshot(state.theta);
  }
  return m;
}

/// Samples one group per sample from state.old.
inline std::vector<GroupRollout> rollout_batch(const TrainerState& state,
                                               const std::vector<const SceneSample*>& samples,
                                               const TrainConfig& cfg, const Vocab& vocab,
                                               Rng& rng) {
  std::vector<GroupRollout> batch;
  batch.reserve(samples.size());
  for (const auto* s : samples) {
    batch.push_back(
        rollout_group(state.old, s->x, s->gt, cfg.group_size, cfg.sampler, cfg.reward, vocab, rng));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalBucket {
  std::size_t count = 0;
  double mean_iou = 0.0;
  double hit_rate = 0.0;  // IoU >= threshold
  double format_violation = 0.0;
};

inline nlohmann::json to_json(const EvalBucket& b) {
  return {{"count", b.count},
          {"mean_iou", b.mean_iou},
          {"hit_rate", b.hit_rate},
          {"format_violation", b.format_violation}};
}

struct EvalReport {
  double threshold = 0.5;
  EvalBucket overall;
  std::map<std::string, EvalBucket> by_tier;
  std::map<std::string, EvalBucket> by_domain;
};

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json tiers = nlohmann::json::object();
  for (const auto& [k, b] : r.by_tier) tiers[k] = to_json(b);
  nlohmann::json domains = nlohmann::json::object();
  for (const auto& [k, b] : r.by_domain) domains[k] = to_json(b);
  return {{"threshold", r.threshold},
          {"overall", to_json(r.overall)},
          {"by_tier", tiers},
          {"by_domain", domains}};
}

/// Greedy-decoding evaluation. `tiers` maps sample id to tier; samples
/// without an entry are left out of the per-tier breakdown.
inline EvalReport evaluate_greedy(const PolicyParams& theta,
                                  const std::vector<const SceneSample*>& samples,
                                  const Vocab& vocab,
                                  const std::map<std::uint64_t, Tier>& tiers = {},
                                  double threshold = 0.5) {
  if (samples.empty()) throw std::invalid_argument("evaluate_greedy: no samples");
  EvalReport rep;
  rep.threshold = threshold;
  auto add = [&](EvalBucket& b, double v, bool ok) {
    ++b.count;
    b.mean_iou += v;
    b.hit_rate += ok && v >= threshold ? 1.0 : 0.0;
    b.format_violation += ok ? 0.0 : 1.0;
  };
  for (const auto* s : samples) {
    const auto box = decode_sequence(greedy(theta, s->x), vocab);
    const double v = box ? iou(*box, s->gt) : 0.0;
    add(rep.overall, v, box.has_value());
    add(rep.by_domain[to_string(s->domain)], v, box.has_value());
    if (auto it = tiers.find(s->id); it != tiers.end()) {
      add(rep.by_tier[to_string(it->second)], v, box.has_value());
    }
  }
  auto finish = [](EvalBucket& b) {
    if (b.count == 0) return;
    const auto n = static_cast<double>(b.count);
    b.mean_iou /= n;
    b.hit_rate /= n;
    b.format_violation /= n;
  };
  finish(rep.overall);
  for (auto& [k, b] : rep.by_tier) finish(b);
  for (auto& [k, b] : rep.by_domain) finish(b);
  return rep;
}

inline std::map<std::uint64_t, Tier> tier_map(const DifficultyReport& rep) {
  std::map<std::uint64_t, Tier> out;
  for (const auto& r : rep.records) {
    if (r.tier) out[r.id] = *r.tier;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run directory layout
//   metrics.jsonl                 header line, then one record per step
//   base_policy.txt               warm-up checkpoint used for scoring
//   difficulty.jsonl              tiering used by the curriculum phase
//   checkpoints/step_NNNNNN/      policy.txt ref.txt optimizer.txt rng.txt
//                                 difficulty.jsonl (curriculum phase only)
//                                 state.json

inline constexpr const char* kMetricsSchema = "grpocl-metrics";

namespace detail {

inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << content;
    if (!os.flush()) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void save_policy_atomic(const std::filesystem::path& path, const PolicyParams& p,
                               const std::string& metadata) {
  std::ostringstream os;
  save_policy(os, p, metadata);
  write_atomic(path, os.str());
}

inline std::string checkpoint_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06d", step);
  return buf;
}

inline std::string adam_to_text(const AdamState& st) {
  std::ostringstream os;
  os << "updates " << st.updates << '\n';
  save_policy(os, st.m, "first moment");
  save_policy(os, st.v, "second moment");
  return os.str();
}

inline AdamState adam_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string word;
  AdamState st;
  if (!(is >> word >> st.updates) || word != "updates") {
    throw std::runtime_error("optimizer state: malformed header");
  }
  is.ignore(1);
  // Each moment block is a header, a metadata line and L*V rows.
  std::string block;
  std::string line;
  std::vector<std::string> parts(2);
  int part = -1;
  while (std::getline(is, line)) {
    if (line.rfind("grpo-policy", 0) == 0) ++part;
    if (part < 0 || part > 1) throw std::runtime_error("optimizer state: malformed body");
    parts[static_cast<std::size_t>(part)] += line + '\n';
  }
  if (part != 1) throw std::runtime_error("optimizer state: missing moments");
  std::istringstream m(parts[0]);
  std::istringstream v(parts[1]);
  st.m = load_policy(m);
  st.v = load_policy(v);
  return st;
}

}  // namespace detail

/// Metadata line written into policy files, read back by checkpoint_hash().
inline std::string hash_tag(const std::string& config_hash) { return "config_hash=" + config_hash; }

inline std::string checkpoint_hash(const std::filesystem::path& policy_file) {
  const auto meta = policy_metadata(policy_file);
  return meta.rfind("config_hash=", 0) == 0 ? meta.substr(12) : std::string();
}

inline std::string metrics_header(const std::string& config_hash) {
  return nlohmann::json{{"schema", kMetricsSchema}, {"version", 1}, {"config_hash", config_hash}}
      .dump();
}

inline std::vector<TrainMetrics> read_metrics(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<TrainMetrics> out;
  while (std::getline(is, line)) {
    if (!line.empty()) out.push_back(metrics_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

class ConfigHashMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunOptions {
  /// Empty keeps everything in memory (no files, no checkpoints).
  std::filesystem::path run_dir;
  std::string config_hash;
  bool resume = false;
  /// Stop after this many completed steps, as if interrupted.
  std::optional<int> stop_after;
  /// Called after every step; used by the CLI for progress output.
  std::function<void(const TrainMetrics&)> on_step;
};

struct TrainInputs {
  const Dataset* dataset = nullptr;
  std::vector<SceneSample> warmup_pool;
  PolicyParams init;
  /// Precomputed tiers; when absent the warm-up checkpoint scores the
  /// dataset.
  std::optional<DifficultyReport> report;
  ScoringConfig scoring{};
  CurriculumConfig curriculum{};
  /// Re-score the training split with the current policy at every stage
  /// boundary of the curriculum phase.
  bool rescore_every_stage = false;
};

struct TrainResult {
  TrainerState state;
  PolicyParams base;
  DifficultyReport report;
  std::vector<TrainMetrics> metrics;
  bool completed = false;
};

namespace detail {

inline constexpr std::uint64_t kStreamTrain = 0x7472616eULL;  // "tran"

inline void save_checkpoint(const std::filesystem::path& dir, const TrainerState& st,
                            const Rng& rng, const std::optional<DifficultyReport>& report,
                            const std::string& config_hash) {
  std::filesystem::create_directories(dir);
  save_policy_atomic(dir / "policy.txt", st.theta, hash_tag(config_hash));
  save_policy_atomic(dir / "ref.txt", st.ref, hash_tag(config_hash));
  write_atomic(dir / "optimizer.txt", adam_to_text(st.adam));
  write_atomic(dir / "rng.txt", rng.save_state());
  if (report) {
    std::ostringstream os;
    write_report(os, *report);
    write_atomic(dir / "difficulty.jsonl", os.str());
  }
  // state.json last: its presence marks a complete checkpoint.
  write_atomic(dir / "state.json",
               nlohmann::json{{"step", st.step}, {"config_hash", config_hash}}.dump() + "\n");
}

inline std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run) {
  const auto root = run / "checkpoints";
  if (!std::filesystem::exists(root)) return std::nullopt;
  std::optional<std::filesystem::path> best;
  int best_step = -1;
  for (const auto& e : std::filesystem::directory_iterator(root)) {
    if (!std::filesystem::exists(e.path() / "state.json")) continue;
    const auto j = nlohmann::json::parse(read_file(e.path() / "state.json"));
    const int s = j.at("step").get<int>();
    if (s > best_step) {
      best_step = s;
      best = e.path();
    }
  }
  return best;
}

inline int checkpoint_interval(int total_steps) {
  return std::max(1, (total_steps + 9) / 10);
}

inline std::vector<PoolEntry> pool_entries(const Dataset& ds, const DifficultyReport& rep) {
  const auto tiers = tier_map(rep);
  std::vector<PoolEntry> out;
  for (const auto& s : ds.samples) {
    if (s.split != Split::Train) continue;
    auto it = tiers.find(s.id);
    if (it == tiers.end()) {
      throw std::runtime_error("sample " + std::to_string(s.id) + " has no tier");
    }
    out.push_back({s.id, it->second, s.domain});
  }
  return out;
}

}  // namespace detail

/// Full two-phase run: warm-up on the easy pool, difficulty scoring with the
/// resulting base policy, then the scheduled phase over the training split.
/// Produces exactly total_steps metrics records.
inline TrainResult train(const TrainConfig& cfg, const TrainInputs& in,
                         const RunOptions& opts = {}) {
  cfg.validate();
  if (in.dataset == nullptr || in.dataset->samples.empty()) {
    throw std::invalid_argument("train: empty dataset");
  }
  const Dataset& ds = *in.dataset;
  const Vocab vocab(ds.bins);
  if (in.init.vocab_size() != vocab.size() || in.init.dim() != ds.dim) {
    throw std::invalid_argument("train: initial policy does not match dataset vocabulary/dim");
  }
  const int warm_steps = cfg.warmup_phase_steps();
  CurriculumConfig ccfg = in.curriculum;
  ccfg.total_steps = cfg.curriculum_steps();
  ccfg.validate();
  if (warm_steps > 0 && in.warmup_pool.empty()) {
    throw std::invalid_argument("train: warm-up phase needs a warm-up pool");
  }

  std::map<std::uint64_t, const SceneSample*> by_id;
  for (const auto& s : ds.samples) by_id[s.id] = &s;

  TrainResult res;
  res.state = TrainerState(in.init);
  Rng rng(derive_seed(cfg.seed, detail::kStreamTrain));
  std::optional<DifficultyReport> report = in.report;
  const bool persist = !opts.run_dir.empty();
  const auto metrics_path = opts.run_dir / "metrics.jsonl";

  if (persist) std::filesystem::create_directories(opts.run_dir);
  if (persist && opts.resume) {
    if (auto ck = detail::latest_checkpoint(opts.run_dir)) {
      const auto st = nlohmann::json::parse(detail::read_file(*ck / "state.json"));
      if (st.at("config_hash").get<std::string>() != opts.config_hash) {
        throw ConfigHashMismatch("checkpoint " + ck->string() +
                                 " was written by a different config");
      }
      res.state.theta = load_policy(*ck / "policy.txt");
      res.state.old = res.state.theta;
      res.state.ref = load_policy(*ck / "ref.txt");
      res.state.adam = detail::adam_from_text(detail::read_file(*ck / "optimizer.txt"));
      res.state.step = st.at("step").get<int>();
      rng.load_state(detail::read_file(*ck / "rng.txt"));
      if (std::filesystem::exists(*ck / "difficulty.jsonl")) {
        report = read_report(*ck / "difficulty.jsonl");
      }
      if (std::filesystem::exists(opts.run_dir / "base_policy.txt")) {
        res.base = load_policy(opts.run_dir / "base_policy.txt");
      }
      auto old = read_metrics(metrics_path);
      if (old.size() < static_cast<std::size_t>(res.state.step)) {
        throw std::runtime_error("resume: metrics file shorter than checkpoint step");
      }
      old.resize(static_cast<std::size_t>(res.state.step));
      res.metrics = std::move(old);
    }
  }

  std::ofstream metrics_out;
  if (persist) {
    // Rewrite the kept prefix so a partially written tail never survives.
    std::ostringstream os;
    os << metrics_header(opts.config_hash) << '\n';
    for (const auto& m : res.metrics) os << to_json(m).dump() << '\n';
    detail::write_atomic(metrics_path, os.str());
    metrics_out.open(metrics_path, std::ios::app | std::ios::binary);
  }

  std::optional<BatchSampler> sampler;
  auto build_sampler = [&] {
    sampler.emplace(detail::pool_entries(ds, *report), ccfg);
  };

  auto finish_warmup = [&] {
    res.base = snapshot(res.state.theta);
    if (persist) {
      detail::save_policy_atomic(opts.run_dir / "base_policy.txt", res.base,
                                 hash_tag(opts.config_hash));
    }
    if (!report) {
      report = build_report(res.base, ds.samples, in.scoring, vocab);
      report->config_hash = opts.config_hash;
    }
    if (persist) {
      std::ostringstream os;
      write_report(os, *report);
      detail::write_atomic(opts.run_dir / "difficulty.jsonl", os.str());
    }
  };

  if (res.state.step >= warm_steps && res.state.step > 0) {
    if (!report) throw std::runtime_error("resume: checkpoint lacks difficulty report");
    build_sampler();
  }
  if (res.state.step == 0 && warm_steps == 0) {
    finish_warmup();
    build_sampler();
  }

  const int interval = detail::checkpoint_interval(cfg.total_steps);
  std::vector<const SceneSample*> picks;
  picks.reserve(static_cast<std::size_t>(cfg.batch_groups));
  while (res.state.step < cfg.total_steps) {
    if (opts.stop_after && res.state.step >= *opts.stop_after) break;
    const auto t0 = std::chrono::steady_clock::now();
    const int step = res.state.step;
    picks.clear();
    TierDistribution tiers{1.0, 0.0, 0.0};
    double domain_b = 0.0;
    std::string phase = "warmup";
    if (step < warm_steps) {
      for (int i = 0; i < cfg.batch_groups; ++i) {
        picks.push_back(&in.warmup_pool[rng.below(in.warmup_pool.size())]);
      }
    } else {
      phase = "curriculum";
      const int t = step - warm_steps;
      if (in.rescore_every_stage && t > 0 && t % ccfg.stage_interval == 0) {
        ScoringConfig sc = in.scoring;
        sc.seed = derive_seed(in.scoring.seed, static_cast<std::uint64_t>(t));
        report = build_report(res.state.theta, ds.samples, sc, vocab);
        report->config_hash = opts.config_hash;
        build_sampler();
      }
      const auto state = sampler->state(t);
      tiers = state.tiers;
      domain_b = state.domain_b;
      for (auto id : sampler->next_batch(t, cfg.batch_groups, rng)) picks.push_back(by_id.at(id));
    }
    const auto batch = rollout_batch(res.state, picks, cfg, vocab, rng);
    auto m = train_step(res.state, batch, cfg);
    m.phase = phase;
    m.tiers = tiers;
    m.domain_b = domain_b;
    if (cfg.record_wall_clock) {
      m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    }
    if (persist) {
      metrics_out << to_json(m).dump() << '\n';
      metrics_out.flush();
    }
    if (opts.on_step) opts.on_step(m);
    res.metrics.push_back(std::move(m));

    if (res.state.step == warm_steps) {
      finish_warmup();
      build_sampler();
    }
    if (persist && (res.state.step % interval == 0 || res.state.step == cfg.total_steps)) {
      const auto ck_dir = opts.run_dir / "checkpoints";
      detail::save_checkpoint(ck_dir / detail::checkpoint_name(res.state.step),
                              res.state, rng,
                              res.state.step >= warm_steps ? report : std::nullopt,
                              opts.config_hash);
    }
  }
  if (report) res.report = *report;
  res.completed = res.state.step == cfg.total_steps;
  if (persist && res.completed) {
    detail::save_policy_atomic(opts.run_dir / "final_policy.txt", res.state.theta,
                               hash_tag(opts.config_hash));
  }
  return res;
}

}  // namespace grpocl
