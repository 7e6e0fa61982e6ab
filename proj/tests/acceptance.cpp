// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "grpocl/grpocl.hpp"
#include "oracles.hpp"

using namespace grpocl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double pop_std(const std::vector<double>& v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double a : v) ss += (a - m) * (a - m);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

// 1 ------------------------------------------------------------------------
Outcome iou_oracle() {
  Rng rng(1);
  double worst = 0.0;
  // Sides of at least 0.1 keep the raster's own discretization error (about
  // 1 / (512 side)) below the tolerance.
  for (int i = 0; i < 1000; ++i) {
    const auto a = oracle::random_box(rng, 0.1);
    const auto b = oracle::random_box(rng, 0.1);
    worst = std::max(worst, std::abs(iou(a, b) - oracle::raster_iou(a, b)));
  }
  bool exact = true;
  for (int i = 0; i < 1000; ++i) {
    const auto a = oracle::random_box(rng);
    exact = exact && iou(a, a) == 1.0;
    // Disjoint pairs: one box in each half of the frame, touching at most.
    const double split = rng.uniform(0.2, 0.8);
    const BBox left(rng.uniform(0.0, split / 2), a.y1(), split, a.y2());
    const BBox right(split, rng.uniform(0.0, 0.5), rng.uniform(split + 0.05, 1.0), 1.0);
    exact = exact && iou(left, right) == 0.0 && iou(right, left) == 0.0;
  }
  return {worst < 5e-3 && exact,
          "max |analytic - raster| " + fmt("%.2e", worst) + (exact ? "" : ", exact cases broken")};
}

// 2 ------------------------------------------------------------------------
Outcome codec_exhaustive() {
  const Vocab v(4);
  long total = 0, mismatches = 0, accepted = 0;
  oracle::for_each_sequence(v.size(), [&](const TokenSequence& s) {
    ++total;
    const bool want = oracle::reference_format(s, 4);
    const bool got = validate_format(s, v);
    const bool decodes = decode_sequence(s, v).has_value();
    mismatches += (got != want) || (decodes != want);
    accepted += want;
  });
  return {total == 46656 && mismatches == 0,
          std::to_string(total) + " sequences, " + std::to_string(accepted) + " accepted, " +
              std::to_string(mismatches) + " mismatches"};
}

// 3 ------------------------------------------------------------------------
Outcome advantages() {
  Rng rng(3);
  double worst_mean = 0.0, worst_std = 0.0, worst_scale = 0.0;
  bool shift_exact = true, all_equal_zero = true, flagged = true;
  const int sizes[] = {2, 4, 8, 16};
  for (int i = 0; i < 10000; ++i) {
    const int g = sizes[i % 4];
    std::vector<double> r(static_cast<std::size_t>(g));
    for (auto& v : r) v = rng.uniform(-2.0, 2.0);
    const auto a = standardize_advantages(r);
    flagged = flagged && !a.degenerate;
    worst_mean = std::max(worst_mean, std::abs(mean_of(a.values)));
    worst_std = std::max(worst_std, std::abs(pop_std(a.values) - 1.0));

    const double k = rng.uniform(0.01, 100.0);
    std::vector<double> scaled = r;
    for (auto& v : scaled) v *= k;
    const auto b = standardize_advantages(scaled);
    for (std::size_t j = 0; j < r.size(); ++j) {
      worst_scale = std::max(worst_scale, std::abs(a.values[j] - b.values[j]));
    }

    // Shift invariance is bit-exact when rewards and shift are dyadic, so the
    // sums involved carry no rounding.
    std::vector<double> grid(r.size()), shifted(r.size());
    const double c = static_cast<double>(rng.below(41)) / 4.0 - 5.0;
    for (std::size_t j = 0; j < r.size(); ++j) {
      grid[j] = static_cast<double>(rng.below(96)) / 64.0;
      shifted[j] = grid[j] + c;
    }
    shift_exact = shift_exact && standardize_advantages(grid).values ==
                                     standardize_advantages(shifted).values;

    const std::vector<double> same(static_cast<std::size_t>(g), rng.uniform(-1.0, 1.0));
    for (double v : standardize_advantages(same).values) {
      all_equal_zero = all_equal_zero && v == 0.0;
    }
  }
  const bool ok = flagged && worst_mean < 1e-9 && worst_std < 1e-9 && worst_scale < 1e-9 &&
                  shift_exact && all_equal_zero;
  return {ok, "max |mean| " + fmt("%.1e", worst_mean) + ", max |std-1| " + fmt("%.1e", worst_std) +
                  ", max scale drift " + fmt("%.1e", worst_scale) +
                  (shift_exact ? ", shift exact" : ", shift NOT exact") +
                  (all_equal_zero ? "" : ", constant group nonzero")};
}

// 4 ------------------------------------------------------------------------
Outcome gradient_oracle() {
  Rng rng(4);
  double worst_rel = 0.0, worst_abs = 0.0;
  const double betas[] = {0.0, 0.04, 0.5};
  for (int trial = 0; trial < 10; ++trial) {
    const RewardWeights w{1.0, 0.2, betas[trial % 3]};
    const auto old = oracle::random_params(6, 4, 0.7, rng);
    const auto ref = oracle::random_params(6, 4, 0.7, rng);
    auto theta = old;
    for (auto& v : theta.flat()) v += rng.normal(0.0, 0.3);
    const auto batch = oracle::random_batch(old, 3, 4, 4, 2, rng);
    const auto analytic = objective_gradient(theta, batch, ref, w);
    const auto numeric = oracle::finite_difference(
        [&](const PolicyParams& p) { return batch_objective(p, batch, ref, w); }, theta, 1e-5);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double a = analytic.flat()[i], n = numeric.flat()[i];
      if (std::abs(a) < 1e-8) {
        worst_abs = std::max(worst_abs, std::abs(a - n));
      } else {
        worst_rel = std::max(worst_rel, std::abs(a - n) / std::abs(a));
      }
    }
  }
  return {worst_rel < 1e-4 && worst_abs < 1e-8,
          "max relative error " + fmt("%.2e", worst_rel) + ", max absolute (tiny entries) " +
              fmt("%.2e", worst_abs)};
}

// 5 ------------------------------------------------------------------------
Outcome kl_correctness() {
  Rng rng(5);
  double min_kl = 1e300, worst_self = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto a = oracle::random_params(6, 4, 1.0, rng);
    const auto b = oracle::random_params(6, 4, 1.0, rng);
    const auto x = oracle::random_context(4, 3.0, rng);
    min_kl = std::min(min_kl, kl_exact(a, b, x));
    worst_self = std::max(worst_self, std::abs(kl_exact(a, a, x)));
  }
  double worst_mc = 0.0;
  for (int i = 0; i < 10; ++i) {
    const auto a = oracle::random_params(8, 4, 0.5, rng);
    const auto b = oracle::random_params(8, 4, 0.5, rng);
    const auto x = oracle::random_context(4, 2.0, rng);
    const double exact = kl_exact(a, b, x);
    worst_mc = std::max(worst_mc, std::abs(oracle::mc_kl(a, b, x, 100000, rng) - exact) / exact);
  }
  return {min_kl >= 0.0 && worst_self <= 1e-12 && worst_mc < 0.02,
          "min KL " + fmt("%.3e", min_kl) + ", max |KL(a,a)| " + fmt("%.1e", worst_self) +
              ", max MC relative error " + fmt("%.4f", worst_mc)};
}

// 6 ------------------------------------------------------------------------
Outcome fixed_point() {
  Rng rng(6);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int bins = 2 + static_cast<int>(rng.below(6));
    const int d = 1 + static_cast<int>(rng.below(6));
    const auto theta = oracle::random_params(bins + 2, d, 1.0, rng);
    const auto batch =
        oracle::random_batch(theta, 1 + static_cast<int>(rng.below(6)),
                             2 + static_cast<int>(rng.below(7)), d, static_cast<int>(rng.below(3)),
                             rng);
    const RewardWeights w{1.0, 0.2, rng.uniform(0.0, 1.0)};
    worst = std::max(worst, std::abs(batch_objective(theta, batch, theta, w)));
  }
  return {worst < 1e-9, "max |J| " + fmt("%.2e", worst) + " over 200 batches"};
}

// 7 ------------------------------------------------------------------------
Outcome schedule_laws() {
  std::vector<std::string> broken;
  CurriculumConfig cfg;
  cfg.total_steps = 2000;
  cfg.stage_interval = 500;
  const int wt = static_cast<int>(cfg.w * cfg.total_steps);
  if (easy_weight(0, cfg) != cfg.m0) broken.push_back("m(0)");
  if (easy_weight(wt, cfg) != 0.0) broken.push_back("m(wT)");
  for (int t = 1; t <= cfg.total_steps; ++t) {
    if (easy_weight(t, cfg) > easy_weight(t - 1, cfg)) {
      broken.push_back("m increases at " + std::to_string(t));
      break;
    }
  }
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    CurriculumConfig c;
    c.total_steps = 1 + static_cast<int>(rng.below(10000));
    c.stage_interval = 1;
    c.m0 = rng.uniform(1e-3, 1.0);
    c.w = rng.uniform(1e-3, 0.999);
    c.strategy = kStrategies[rng.below(kStrategies.size())];
    const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.total_steps) + 1));
    const auto d = tier_distribution(t, c, {1 + rng.below(20), rng.below(20), rng.below(20)});
    if (std::abs(d.easy + d.medium + d.hard - 1.0) > 1e-12 || d.easy < 0 || d.medium < 0 ||
        d.hard < 0) {
      broken.push_back("off simplex");
      break;
    }
  }
  const int stages = cfg.total_steps / cfg.stage_interval;
  if (domain_weight(0, cfg) != 0.6) broken.push_back("w_B(0)");
  if (std::abs(domain_weight(stages * cfg.stage_interval, cfg) - 0.8) > 1e-12) {
    broken.push_back("w_B(final stage)");
  }
  for (int t = 1; t <= cfg.total_steps; ++t) {
    const double a = domain_weight(t - 1, cfg), b = domain_weight(t, cfg);
    if (b < a || (b != a && t % cfg.stage_interval != 0) || b < 0.6 || b > 0.8) {
      broken.push_back("w_B step at " + std::to_string(t));
      break;
    }
  }
  std::string detail = "m(t), simplex over 1000 draws, w_B 0.60 -> 0.80 in steps of K";
  for (const auto& b : broken) detail += "; broken: " + b;
  return {broken.empty(), detail};
}

// 8 ------------------------------------------------------------------------
Outcome lr_law() {
  TrainConfig cfg;
  const int t = cfg.total_steps;
  const int warm = t / 10;
  bool ok = lr_at(0, cfg) == 0.0 && lr_at(warm, cfg) == cfg.lr && std::abs(lr_at(t, cfg)) < 1e-12;
  double max_jump = 0.0;
  int peaks = 0;
  for (int s = 1; s <= t; ++s) {
    max_jump = std::max(max_jump, std::abs(lr_at(s, cfg) - lr_at(s - 1, cfg)));
    if (s < t && lr_at(s, cfg) > lr_at(s - 1, cfg) && lr_at(s, cfg) >= lr_at(s + 1, cfg)) ++peaks;
  }
  // Continuity: no step moves by more than one warm-up increment.
  ok = ok && max_jump <= cfg.lr / warm + 1e-15 && peaks == 1;
  return {ok, "lr(0)=" + fmt("%g", lr_at(0, cfg)) + ", lr(0.1T)=" + fmt("%g", lr_at(warm, cfg)) +
                  ", lr(T)=" + fmt("%.1e", lr_at(t, cfg)) + ", max step change " +
                  fmt("%.2e", max_jump) + ", peaks " + std::to_string(peaks)};
}

// 9 ------------------------------------------------------------------------
PolicyParams initial_policy(int bins) {
  return format_prior(Vocab(bins), kContextDim, kBiasFeature, kBiasValue);
}

Outcome convergence() {
  const auto spec = DatasetSpec::easy_only(7, 1000, 0.2);
  const auto ds = generate_dataset(spec);
  const auto test = ds.select(Split::Test);
  int reached = 0;
  double slowest = 0.0;
  std::string detail = std::to_string(test.size()) + " held-out; IoU";
  for (std::uint64_t seed : {0, 1, 2}) {
    TrainInputs in;
    in.dataset = &ds;
    in.warmup_pool = generate_warmup_pool(spec);
    in.init = initial_policy(spec.bins);
    TrainConfig cfg;  // desk preset
    cfg.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    const auto res = train(cfg, in);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    slowest = std::max(slowest, secs);
    const double v = evaluate_greedy(res.state.theta, test, Vocab(spec.bins)).overall.mean_iou;
    reached += v >= 0.7;
    detail += " " + fmt("%.3f", v);
  }
  detail += "; slowest run " + fmt("%.1f", slowest) + " s";
  return {test.size() == 200 && reached >= 2 && slowest < 300.0, detail};
}

// 10 -----------------------------------------------------------------------
Outcome curriculum_direction() {
  const DatasetSpec spec;  // mixed A/B
  const auto ds = generate_dataset(spec);
  const auto test = ds.select(Split::Test);
  const Strategy strategies[] = {Strategy::Curriculum, Strategy::Uniform, Strategy::EasyOnly};
  int curriculum_wins = 0, easy_worst = 0;
  std::string detail = "hard-tier IoU (curriculum/uniform/easy_only):";
  for (std::uint64_t seed : {0, 1, 2}) {
    double hard[3] = {0, 0, 0};
    for (int k = 0; k < 3; ++k) {
      TrainInputs in;
      in.dataset = &ds;
      in.warmup_pool = generate_warmup_pool(spec);
      in.init = initial_policy(spec.bins);
      in.curriculum.strategy = strategies[k];
      TrainConfig cfg;
      cfg.seed = seed;
      const auto res = train(cfg, in);
      const auto ev =
          evaluate_greedy(res.state.theta, test, Vocab(spec.bins), tier_map(res.report));
      hard[k] = ev.by_tier.at("hard").mean_iou;
    }
    curriculum_wins += hard[0] >= hard[1];
    easy_worst += hard[2] < hard[0] && hard[2] < hard[1];
    detail += " seed " + std::to_string(seed) + " " + fmt("%.3f", hard[0]) + "/" +
              fmt("%.3f", hard[1]) + "/" + fmt("%.3f", hard[2]) + ";";
  }
  detail += " curriculum >= uniform in " + std::to_string(curriculum_wins) +
            "/3, easy_only worst in " + std::to_string(easy_worst) + "/3";
  return {curriculum_wins >= 2 && easy_worst >= 2, detail};
}

// 11 -----------------------------------------------------------------------
Outcome degenerate_noop() {
  Rng rng(11);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Vocab v(32);
    auto init = oracle::random_params(v.size(), kContextDim, 0.3, rng);
    TrainerState st(init);
    st.step = 200 + trial;  // learning rate near its peak
    std::vector<GroupRollout> batch;
    for (int k = 0; k < 8; ++k) {
      const auto x = oracle::random_context(kContextDim, 1.0, rng);
      const std::vector<TokenSequence> same(8, sample(init, x, {}, rng));
      batch.push_back(make_group(init, x, oracle::random_box(rng, 0.1), same, {}, v));
    }
    train_step(st, batch, TrainConfig{});
    for (std::size_t i = 0; i < init.size(); ++i) {
      worst = std::max(worst, std::abs(st.theta.flat()[i] - init.flat()[i]));
    }
  }
  return {worst < 1e-10, "max |delta theta| " + fmt("%.2e", worst)};
}

// 12 -----------------------------------------------------------------------
Outcome determinism() {
  const DatasetSpec spec;
  const auto ds = generate_dataset(spec);
  TrainConfig cfg;
  cfg.total_steps = 400;
  cfg.seed = 12;
  const auto root = fs::temp_directory_path() / "grpocl_acceptance_determinism";
  fs::remove_all(root);
  std::string files[2];
  for (int i = 0; i < 2; ++i) {
    TrainInputs in;
    in.dataset = &ds;
    in.warmup_pool = generate_warmup_pool(spec);
    in.init = initial_policy(spec.bins);
    in.curriculum.stage_interval = 100;
    const auto dir = root / ("run" + std::to_string(i));
    RunOptions opts;
    opts.run_dir = dir;
    opts.config_hash = "determinism";
    train(cfg, in, opts);
    files[i] = detail::read_file(dir / "metrics.jsonl");
  }
  fs::remove_all(root);
  return {!files[0].empty() && files[0] == files[1],
          std::to_string(files[0].size()) + " bytes per metrics file, " +
              (files[0] == files[1] ? "identical" : "different")};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "IoU oracle equivalence", 10, iou_oracle},
      {2, "codec exhaustive check", 5, codec_exhaustive},
      {3, "advantage standardization", 60, advantages},
      {4, "gradient oracle", 30, gradient_oracle},
      {5, "KL correctness", 120, kl_correctness},
      {6, "fixed-point objective", 60, fixed_point},
      {7, "schedule laws", 60, schedule_laws},
      {8, "learning-rate law", 10, lr_law},
      {9, "end-to-end convergence", 900, convergence},
      {10, "curriculum directional replication", 2700, curriculum_direction},
      {11, "degenerate-batch no-op", 10, degenerate_noop},
      {12, "determinism", 300, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_s) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f", c.budget_s) + " s budget";
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << std::setw(2) << c.id << " " << c.name
              << " [" << fmt("%.1f", secs) << " s] " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
