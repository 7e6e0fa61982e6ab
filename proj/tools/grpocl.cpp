// SPDX-License-Identifier: Apache-2.0
//
// grpocl command-line driver: gen, score, train, eval, ablate, schedule.
//
// Exit codes: 0 ok, 1 runtime failure, 2 configuration error,
// 3 config-hash mismatch, 4 incompatible artifacts.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "grpocl/grpocl.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace grpocl;

namespace {

class HashMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Incompatible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Options shared by every command that reads a config.
struct ConfigOptions {
  std::string path;
  std::vector<std::string> sets;  // key.path=value
  std::optional<std::string> preset;
  std::optional<std::string> strategy;
  std::optional<std::uint64_t> seed;
};

void add_config_options(CLI::App* cmd, ConfigOptions& o, bool run_flags) {
  cmd->add_option("-c,--config", o.path, "Configuration file (JSON, comments allowed)");
  cmd->add_option("--set", o.sets, "Override a key, e.g. --set train.lr=0.01");
  if (run_flags) {
    cmd->add_option("--preset", o.preset, "Train preset: desk or paper");
    cmd->add_option("--strategy", o.strategy,
                    "curriculum, uniform, easy_only, hard_only or full_direct");
    cmd->add_option("--seed", o.seed, "Training seed");
  }
}

json parse_set_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;  // bare strings need no quotes
  }
}

void put_path(json& tree, const std::string& dotted, json value) {
  json* cur = &tree;
  std::stringstream ss(dotted);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("--set: empty key");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) cur = &(*cur)[parts[i]];
  (*cur)[parts.back()] = std::move(value);
}

TrainPreset parse_preset_or_throw(const std::string& s) {
  try {
    return parse_train_preset(s);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("--preset: ") + e.what());
  }
}

struct Resolved {
  json tree;
  RunConfig cfg;
  std::string hash;
};

Resolved resolve(const ConfigOptions& o, const json& extra = json::object()) {
  json file = json::object();
  if (!o.path.empty()) file = read_config_file(o.path);
  json overrides = extra;
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    put_path(overrides, s.substr(0, eq), parse_set_value(s.substr(eq + 1)));
  }
  if (o.preset) {
    // A preset flag resets the preset-owned values the file may have set.
    put_path(overrides, "train.preset", *o.preset);
    const auto defaults = default_config_json(parse_preset_or_throw(*o.preset));
    for (const char* k : {"lr", "batch_groups", "total_steps"}) {
      if (!overrides["train"].contains(k)) overrides["train"][k] = defaults["train"][k];
    }
  }
  if (o.strategy) put_path(overrides, "curriculum.strategy", *o.strategy);
  if (o.seed) put_path(overrides, "train.seed", *o.seed);
  Resolved r;
  r.tree = resolve_config_json(file, overrides);
  r.cfg = run_config_from_json(r.tree);
  r.hash = config_hash(r.tree);
  return r;
}

fs::path output_root(const RunConfig& cfg) {
  fs::path out = cfg.output_dir;
  if (out.is_relative()) {
    const char* root = std::getenv("GRPOCL_OUTPUT_ROOT");
    if (root && *root) out = fs::path(root) / out;
  }
  return out;
}

void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  grpocl::detail::write_atomic(path, content);
}

Dataset load_dataset_checked(const fs::path& path, const RunConfig& cfg) {
  Dataset ds = read_dataset(path);
  if (ds.bins != cfg.dataset.bins || ds.dim != kContextDim) {
    throw Incompatible("dataset " + path.string() + " has bins=" + std::to_string(ds.bins) +
                       " dim=" + std::to_string(ds.dim) + ", config expects bins=" +
                       std::to_string(cfg.dataset.bins) + " dim=" + std::to_string(kContextDim));
  }
  return ds;
}

void check_policy_fits(const PolicyParams& p, int bins, int dim, const std::string& what) {
  if (p.vocab_size() != bins + 2 || p.dim() != dim) {
    throw Incompatible(what + " has V=" + std::to_string(p.vocab_size()) + " d=" +
                       std::to_string(p.dim()) + " but the data needs V=" +
                       std::to_string(bins + 2) + " d=" + std::to_string(dim));
  }
}

PolicyParams initial_policy(int bins) {
  return format_prior(Vocab(bins), kContextDim, kBiasFeature, kBiasValue);
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// gen

struct GenOptions {
  ConfigOptions config;
  std::string out;
};

int cmd_gen(const GenOptions& o) {
  const auto r = resolve(o.config);
  auto ds = generate_dataset(r.cfg.dataset);
  ds.config_hash = r.hash;
  const fs::path path = o.out.empty() ? output_root(r.cfg) / "dataset.jsonl" : fs::path(o.out);

  std::ostringstream body;
  write_dataset(body, ds);

  json summary = {{"config_hash", r.hash}, {"count", ds.samples.size()}};
  std::map<std::string, int> by_domain, by_split, by_band, by_distractors, truncated;
  for (const auto& s : ds.samples) {
    ++by_domain[to_string(s.domain)];
    ++by_split[to_string(s.split)];
    ++by_band[std::string(to_string(s.domain)) + "/" + to_string(s.knobs.band)];
    ++by_distractors[std::to_string(s.knobs.distractors)];
    if (s.knobs.truncated) ++truncated[to_string(s.domain)];
  }
  summary["domains"] = by_domain;
  summary["splits"] = by_split;
  summary["bands"] = by_band;
  summary["distractors"] = by_distractors;
  summary["truncated"] = truncated;

  auto summary_path = path;
  summary_path.replace_extension(".summary.json");
  write_atomic(path, body.str());
  write_atomic(summary_path, summary.dump(2) + "\n");
  std::cout << "wrote " << ds.samples.size() << " samples to " << path.string() << "\n"
            << summary.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// score

struct ScoreOptions {
  ConfigOptions config;
  std::string dataset;
  std::string checkpoint;
  std::string out;
  std::optional<int> group_size;
  bool strict = false;
};

int cmd_score(const ScoreOptions& o) {
  json extra = json::object();
  if (o.group_size) extra["difficulty"]["group_size"] = *o.group_size;
  const auto r = resolve(o.config, extra);
  const fs::path root = output_root(r.cfg);
  const fs::path ds_path = o.dataset.empty() ? root / "dataset.jsonl" : fs::path(o.dataset);
  const Dataset ds = load_dataset_checked(ds_path, r.cfg);

  PolicyParams base = initial_policy(ds.bins);
  if (!o.checkpoint.empty()) {
    base = load_policy(fs::path(o.checkpoint));
    check_policy_fits(base, ds.bins, ds.dim, "checkpoint " + o.checkpoint);
  }
  if (o.strict) {
    if (ds.config_hash != r.hash) {
      throw HashMismatch("dataset hash " + ds.config_hash + " differs from config hash " + r.hash);
    }
    if (!o.checkpoint.empty() && checkpoint_hash(o.checkpoint) != r.hash) {
      throw HashMismatch("checkpoint hash '" + checkpoint_hash(o.checkpoint) +
                         "' differs from config hash " + r.hash);
    }
  }

  auto rep = build_report(base, ds.samples, r.cfg.difficulty, Vocab(ds.bins));
  rep.config_hash = r.hash;
  const fs::path path = o.out.empty() ? root / "difficulty.jsonl" : fs::path(o.out);
  std::ostringstream body;
  write_report(body, rep);
  write_atomic(path, body.str());

  const auto counts = rep.tier_counts();
  std::cout << "scored " << rep.records.size() << " samples with G=" << rep.group_size << "\n"
            << "tiers easy/medium/hard: " << counts[0] << "/" << counts[1] << "/" << counts[2]
            << "\n"
            << "boundaries: easy <= " << fixed(rep.boundaries.easy_max, 6)
            << ", medium <= " << fixed(rep.boundaries.medium_max, 6) << "\n"
            << "wrote " << path.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// schedule

std::string schedule_csv(const RunConfig& cfg, const std::string& hash,
                         const std::array<std::size_t, 3>& tier_counts, int every) {
  const auto& t = cfg.train;
  CurriculumConfig cc = cfg.curriculum;
  cc.total_steps = t.curriculum_steps();
  const int warm = t.warmup_phase_steps();
  std::ostringstream os;
  os << "step,phase,lr,m,p_easy,p_medium,p_hard,domain_b,config_hash\n";
  auto row = [&](int step) {
    const double lr = lr_at(step, t);
    if (step < warm) {
      os << step << ",warmup," << format_double(lr) << ",,1,0,0,0," << hash << "\n";
      return;
    }
    const int c = step - warm;
    const auto st = curriculum_state(c, cc, tier_counts);
    const double m = cc.strategy == Strategy::Curriculum ? easy_weight(c, cc) : st.tiers.easy;
    os << step << ",curriculum," << format_double(lr) << "," << format_double(m) << ","
       << format_double(st.tiers.easy) << "," << format_double(st.tiers.medium) << ","
       << format_double(st.tiers.hard) << "," << format_double(st.domain_b) << "," << hash
       << "\n";
  };
  for (int s = 0; s < t.total_steps; s += every) row(s);
  row(t.total_steps);
  return os.str();
}

struct ScheduleOptions {
  ConfigOptions config;
  std::string out;
  int every = 1;
};

int cmd_schedule(const ScheduleOptions& o) {
  const auto r = resolve(o.config);
  if (o.every < 1) throw ConfigError("--every must be >= 1");
  const auto csv = schedule_csv(r.cfg, r.hash, {1, 1, 1}, o.every);
  if (o.out.empty()) {
    std::cout << csv;
  } else {
    write_atomic(o.out, csv);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  ConfigOptions config;
  std::string dataset;
  std::string report;
  std::string run_dir;
  bool resume = false;
  bool dry_run = false;
  bool quiet = false;
  std::optional<int> stop_after;
};

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

fs::path pick_run_dir(const TrainOptions& o, const RunConfig& cfg) {
  if (!o.run_dir.empty()) return o.run_dir;
  const fs::path root = output_root(cfg);
  const std::string suffix = "-seed" + std::to_string(cfg.train.seed);
  if (o.resume && fs::exists(root)) {
    std::optional<fs::path> latest;
    for (const auto& e : fs::directory_iterator(root)) {
      const auto name = e.path().filename().string();
      if (e.is_directory() && name.rfind("run-", 0) == 0 && name.size() > suffix.size() &&
          name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0 &&
          (!latest || name > latest->filename().string())) {
        latest = e.path();
      }
    }
    if (latest) return *latest;
  }
  return root / ("run-" + timestamp() + suffix);
}

void print_eval(const EvalReport& ev, std::ostream& os) {
  os << "eval (" << ev.overall.count << " samples): mean IoU " << fixed(ev.overall.mean_iou)
     << ", IoU@" << ev.threshold << " " << fixed(100.0 * ev.overall.hit_rate, 1)
     << "%, format violations " << fixed(100.0 * ev.overall.format_violation, 1) << "%\n";
  for (const auto& [name, b] : ev.by_tier) {
    os << "  tier " << std::setw(6) << std::left << name << std::right << " n=" << std::setw(4)
       << b.count << "  IoU " << fixed(b.mean_iou) << "  IoU@" << ev.threshold << " "
       << fixed(100.0 * b.hit_rate, 1) << "%\n";
  }
  for (const auto& [name, b] : ev.by_domain) {
    os << "  domain " << name << "    n=" << std::setw(4) << b.count << "  IoU "
       << fixed(b.mean_iou) << "  IoU@" << ev.threshold << " " << fixed(100.0 * b.hit_rate, 1)
       << "%\n";
  }
}

TrainInputs make_inputs(const RunConfig& cfg, const Dataset& ds) {
  TrainInputs in;
  in.dataset = &ds;
  in.warmup_pool = generate_warmup_pool(cfg.dataset);
  in.init = initial_policy(ds.bins);
  in.scoring = cfg.difficulty;
  in.curriculum = cfg.curriculum;
  in.rescore_every_stage = cfg.rescore_every_stage;
  return in;
}

int cmd_train(const TrainOptions& o) {
  const auto r = resolve(o.config);
  const auto& cfg = r.cfg;
  if (o.dry_run) {
    const int every = std::max(1, cfg.curriculum.stage_interval / 5);
    std::cout << "config_hash " << r.hash << "\n"
              << "warm-up steps " << cfg.train.warmup_phase_steps() << ", curriculum steps "
              << cfg.train.curriculum_steps() << ", strategy " << to_string(cfg.curriculum.strategy)
              << "\n"
              << schedule_csv(cfg, r.hash, {1, 1, 1}, every);
    return 0;
  }

  Dataset ds;
  if (o.dataset.empty()) {
    ds = generate_dataset(cfg.dataset);
    ds.config_hash = r.hash;
  } else {
    ds = load_dataset_checked(o.dataset, cfg);
  }
  auto in = make_inputs(cfg, ds);
  if (!o.report.empty()) in.report = read_report(fs::path(o.report));

  const fs::path run_dir = pick_run_dir(o, cfg);
  fs::create_directories(run_dir);
  if (o.resume && fs::exists(run_dir / "config.json")) {
    const auto old = json::parse(grpocl::detail::read_file(run_dir / "config.json"));
    if (old.value("config_hash", "") != r.hash) {
      throw HashMismatch("run " + run_dir.string() + " was started with config hash " +
                         old.value("config_hash", "?") + ", current config hashes to " + r.hash);
    }
  }
  write_atomic(run_dir / "config.json",
               json{{"config_hash", r.hash}, {"config", r.tree}}.dump(2) + "\n");
  if (o.dataset.empty()) {
    std::ostringstream os;
    write_dataset(os, ds);
    write_atomic(run_dir / "dataset.jsonl", os.str());
  }

  RunOptions ro;
  ro.run_dir = run_dir;
  ro.config_hash = r.hash;
  ro.resume = o.resume;
  ro.stop_after = o.stop_after;
  const int report_every = std::max(1, cfg.train.total_steps / 20);
  if (!o.quiet) {
    ro.on_step = [&](const TrainMetrics& m) {
      if ((m.step + 1) % report_every == 0) {
        std::cout << "step " << std::setw(6) << m.step + 1 << " [" << m.phase << "] lr "
                  << std::scientific << std::setprecision(2) << m.lr << std::defaultfloat
                  << "  reward " << fixed(m.mean_reward) << "  IoU " << fixed(m.mean_iou)
                  << "  KL " << fixed(m.kl_ref, 5) << "\n";
      }
    };
  }
  std::cout << "run directory " << run_dir.string() << " (config " << r.hash << ")\n";
  TrainResult res;
  try {
    res = train(cfg.train, in, ro);
  } catch (const ConfigHashMismatch& e) {
    throw HashMismatch(e.what());
  }
  {
    auto counts = res.report.tier_counts();
    write_atomic(run_dir / "schedule.csv", schedule_csv(cfg, r.hash, counts, 1));
  }
  if (!res.completed) {
    std::cout << "stopped after step " << res.state.step << " of " << cfg.train.total_steps
              << "; resume with --resume --run-dir " << run_dir.string() << "\n";
    return 0;
  }
  const auto test = ds.select(Split::Test);
  const auto& eval_set = test.empty() ? ds.select(std::nullopt) : test;
  const auto ev =
      evaluate_greedy(res.state.theta, eval_set, Vocab(ds.bins), tier_map(res.report),
                      cfg.eval.threshold);
  auto ej = to_json(ev);
  ej["config_hash"] = r.hash;
  ej["split"] = test.empty() ? "all" : "test";
  write_atomic(run_dir / "eval.json", ej.dump(2) + "\n");
  print_eval(ev, std::cout);
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  ConfigOptions config;
  std::string checkpoint;
  std::string dataset;
  std::string report;
  std::string split = "test";
  std::string out;
  std::optional<double> threshold;
};

int cmd_eval(const EvalOptions& o) {
  const auto r = resolve(o.config);
  const fs::path ds_path =
      o.dataset.empty() ? output_root(r.cfg) / "dataset.jsonl" : fs::path(o.dataset);
  const Dataset ds = read_dataset(ds_path);
  const auto theta = load_policy(fs::path(o.checkpoint));
  check_policy_fits(theta, ds.bins, ds.dim, "checkpoint " + o.checkpoint);

  std::optional<Split> split;
  if (o.split != "all") {
    try {
      split = parse_split(o.split);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("--split: ") + e.what());
    }
  }
  const auto samples = ds.select(split);
  if (samples.empty()) throw ConfigError("split '" + o.split + "' has no samples");
  std::map<std::uint64_t, Tier> tiers;
  if (!o.report.empty()) tiers = tier_map(read_report(fs::path(o.report)));
  const double threshold = o.threshold.value_or(r.cfg.eval.threshold);
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("--threshold must be in (0, 1]");

  const auto ev = evaluate_greedy(theta, samples, Vocab(ds.bins), tiers, threshold);
  auto ej = to_json(ev);
  ej["config_hash"] = r.hash;
  ej["checkpoint_hash"] = checkpoint_hash(o.checkpoint);
  ej["split"] = o.split;
  if (!o.out.empty()) write_atomic(o.out, ej.dump(2) + "\n");
  print_eval(ev, std::cout);
  return 0;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateOptions {
  ConfigOptions config;
  std::string axis;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<double> values;
  std::string out;
};

struct Cell {
  double value = 0.0;
  json overrides;
};

std::vector<Cell> ablation_grid(const std::string& axis, const json& base,
                                std::vector<double> values) {
  std::vector<Cell> cells;
  if (axis == "strategy") {
    if (!values.empty()) throw ConfigError("--values does not apply to the strategy axis");
    for (std::size_t i = 0; i < kStrategies.size(); ++i) {
      cells.push_back({static_cast<double>(i),
                       json{{"curriculum", {{"strategy", to_string(kStrategies[i])}}}}});
    }
    return cells;
  }
  if (axis == "lr") {
    const double lr = base["train"]["lr"].get<double>();
    if (values.empty()) {
      for (double f : {0.1, 0.316, 1.0, 3.16, 10.0}) values.push_back(lr * f);
    }
    for (double v : values) cells.push_back({v, json{{"train", {{"lr", v}}}}});
  } else if (axis == "alpha_iou") {
    if (values.empty()) values = {0.25, 0.5, 1.0, 2.0, 4.0};
    for (double v : values) cells.push_back({v, json{{"reward", {{"alpha_iou", v}}}}});
  } else if (axis == "beta_kl") {
    if (values.empty()) values = {0.0, 0.01, 0.04, 0.1, 0.5};
    for (double v : values) cells.push_back({v, json{{"reward", {{"beta_kl", v}}}}});
  } else if (axis == "phase_length") {
    if (values.empty()) values = {500, 1000, 1500, 2000, 2500};
    // The longest interval must fit inside the curriculum phase, so this axis
    // trains for at least 5000 steps.
    const int steps = std::max(5000, base["train"]["total_steps"].get<int>());
    for (double v : values) {
      if (v < 1 || v != std::floor(v)) throw ConfigError("phase_length values must be integers");
      cells.push_back({v, json{{"train", {{"total_steps", steps}}},
                               {"curriculum", {{"stage_interval", static_cast<int>(v)}}}}});
    }
  } else {
    throw ConfigError("unknown axis '" + axis +
                      "' (expected lr, alpha_iou, beta_kl, phase_length or strategy)");
  }
  return cells;
}

std::string cell_label(const std::string& axis, double v) {
  if (axis == "strategy") return to_string(kStrategies[static_cast<std::size_t>(v)]);
  return format_double(v);
}

struct CellResult {
  std::string status = "ok";
  double mean_iou = 0.0;
  double hard_iou = 0.0;
  double hit_rate = 0.0;
  double format_violation = 0.0;
  double reward_variance = 0.0;
  std::optional<int> steps_to_threshold;
};

/// First step at which the trailing 50-step mean of batch IoU reaches 0.5.
std::optional<int> steps_to_threshold(const std::vector<TrainMetrics>& metrics) {
  constexpr std::size_t kWindow = 50;
  double sum = 0.0;
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    sum += metrics[i].mean_iou;
    if (i >= kWindow) sum -= metrics[i - kWindow].mean_iou;
    if (i + 1 >= kWindow && sum / kWindow >= 0.5) return metrics[i].step + 1;
  }
  return std::nullopt;
}

CellResult run_cell(const RunConfig& cfg, const Dataset& ds) {
  auto in = make_inputs(cfg, ds);
  const auto res = train(cfg.train, in);
  const auto test = ds.select(Split::Test);
  const auto ev = evaluate_greedy(res.state.theta, test.empty() ? ds.select(std::nullopt) : test,
                                  Vocab(ds.bins), tier_map(res.report), cfg.eval.threshold);
  CellResult c;
  c.mean_iou = ev.overall.mean_iou;
  c.hit_rate = ev.overall.hit_rate;
  c.format_violation = ev.overall.format_violation;
  if (auto it = ev.by_tier.find("hard"); it != ev.by_tier.end()) c.hard_iou = it->second.mean_iou;
  // Mean within-group reward variance over the last tenth of training.
  const std::size_t tail = std::max<std::size_t>(1, res.metrics.size() / 10);
  for (std::size_t i = res.metrics.size() - tail; i < res.metrics.size(); ++i) {
    c.reward_variance += res.metrics[i].reward_std * res.metrics[i].reward_std;
  }
  c.reward_variance /= static_cast<double>(tail);
  c.steps_to_threshold = steps_to_threshold(res.metrics);
  return c;
}

constexpr const char* kAblationHeader =
    "axis,value,seed,status,final_mean_iou,hard_tier_iou,iou_at_threshold,format_violation,"
    "reward_variance,steps_to_threshold,config_hash";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

int cmd_ablate(const AblateOptions& o) {
  const auto base = resolve(o.config);
  if (o.seeds.empty()) throw ConfigError("--seeds must not be empty");
  const auto cells = ablation_grid(o.axis, base.tree, o.values);
  const fs::path out =
      o.out.empty() ? output_root(base.cfg) / ("ablate_" + o.axis + ".csv") : fs::path(o.out);

  // Finished rows from an earlier, interrupted sweep: key "label/seed".
  std::map<std::string, std::vector<std::string>> done;
  if (fs::exists(out)) {
    std::ifstream is(out);
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      const auto f = split_csv(line);
      if (f.size() == 11 && f[0] == o.axis && f[2] != "mean" && f[3] == "ok") {
        done[f[1] + "/" + f[2]] = f;
      }
    }
  }

  const Dataset ds = [&] {
    Dataset d = generate_dataset(base.cfg.dataset);
    d.config_hash = base.hash;
    return d;
  }();

  std::vector<std::vector<std::string>> rows;
  auto flush = [&](bool with_means) {
    std::ostringstream os;
    os << kAblationHeader << "\n";
    auto emit = [&](const std::vector<std::string>& f) {
      for (std::size_t i = 0; i < f.size(); ++i) os << (i ? "," : "") << f[i];
      os << "\n";
    };
    for (const auto& f : rows) emit(f);
    if (with_means) {
      for (const auto& cell : cells) {
        const auto label = cell_label(o.axis, cell.value);
        std::vector<double> sums(5, 0.0);
        int ok = 0;
        double steps = 0.0;
        int reached = 0;
        for (const auto& f : rows) {
          if (f[1] != label || f[3] != "ok") continue;
          ++ok;
          for (int k = 0; k < 5; ++k) sums[k] += std::stod(f[4 + k]);
          if (!f[9].empty()) {
            steps += std::stod(f[9]);
            ++reached;
          }
        }
        std::vector<std::string> agg{o.axis, label, "mean",
                                     ok == static_cast<int>(o.seeds.size()) ? "ok" : "partial"};
        for (int k = 0; k < 5; ++k) agg.push_back(ok ? format_double(sums[k] / ok) : "");
        agg.push_back(reached ? format_double(steps / reached) : "");
        agg.push_back(base.hash);
        emit(agg);
      }
    }
    write_atomic(out, os.str());
  };

  int failures = 0;
  for (const auto& cell : cells) {
    const auto label = cell_label(o.axis, cell.value);
    for (auto seed : o.seeds) {
      const auto key = label + "/" + std::to_string(seed);
      if (auto it = done.find(key); it != done.end()) {
        rows.push_back(it->second);
        std::cout << o.axis << "=" << label << " seed " << seed << ": kept from previous run\n";
        continue;
      }
      auto overrides = cell.overrides;
      overrides["train"]["seed"] = seed;
      std::vector<std::string> f{o.axis, label, std::to_string(seed)};
      std::string cell_hash;
      try {
        ConfigOptions co = o.config;
        co.seed.reset();
        const auto r = resolve(co, overrides);
        cell_hash = r.hash;
        const auto c = run_cell(r.cfg, ds);
        f.insert(f.end(), {"ok", format_double(c.mean_iou), format_double(c.hard_iou),
                           format_double(c.hit_rate), format_double(c.format_violation),
                           format_double(c.reward_variance),
                           c.steps_to_threshold ? std::to_string(*c.steps_to_threshold) : ""});
        std::cout << o.axis << "=" << label << " seed " << seed << ": IoU " << fixed(c.mean_iou)
                  << ", hard-tier IoU " << fixed(c.hard_iou) << "\n";
      } catch (const std::exception& e) {
        ++failures;
        f.insert(f.end(), {"failed", "", "", "", "", "", ""});
        std::cerr << o.axis << "=" << label << " seed " << seed << " failed: " << e.what()
                  << "\n";
      }
      f.push_back(cell_hash);
      rows.push_back(std::move(f));
      flush(false);
    }
  }
  flush(true);
  std::cout << "wrote " << out.string() << " (" << rows.size() << " cell rows, " << cells.size()
            << " aggregate rows)\n";
  return failures ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Curriculum-guided GRPO on synthetic box-grounding tasks"};
  app.require_subcommand(1);

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate the synthetic dataset");
  add_config_options(gen_cmd, gen.config, false);
  gen_cmd->add_option("-o,--out", gen.out, "Dataset path (default <output_dir>/dataset.jsonl)");

  ScoreOptions score;
  auto* score_cmd = app.add_subcommand("score", "Score sample difficulty and assign tiers");
  add_config_options(score_cmd, score.config, false);
  score_cmd->add_option("-d,--dataset", score.dataset, "Dataset file");
  score_cmd->add_option("-k,--checkpoint", score.checkpoint,
                        "Base policy (default: untrained initial policy)");
  score_cmd->add_option("-o,--out", score.out, "Report path");
  score_cmd->add_option("-G,--group-size", score.group_size, "Rollouts per sample (default 8)");
  score_cmd->add_flag("--strict", score.strict, "Require matching config hashes");

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Run warm-up and scheduled GRPO training");
  add_config_options(train_cmd, tr.config, true);
  train_cmd->add_option("-d,--dataset", tr.dataset, "Dataset file (default: generate)");
  train_cmd->add_option("--report", tr.report, "Precomputed difficulty report");
  train_cmd->add_option("--run-dir", tr.run_dir, "Run directory");
  train_cmd->add_flag("--resume", tr.resume, "Continue from the latest checkpoint");
  train_cmd->add_flag("--dry-run", tr.dry_run, "Print the schedule and exit");
  train_cmd->add_flag("-q,--quiet", tr.quiet, "No per-step progress");
  train_cmd->add_option("--stop-after", tr.stop_after, "Stop after this many steps");

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Greedy-decoding evaluation of a checkpoint");
  add_config_options(eval_cmd, ev.config, false);
  eval_cmd->add_option("-k,--checkpoint", ev.checkpoint, "Policy file")->required();
  eval_cmd->add_option("-d,--dataset", ev.dataset, "Dataset file");
  eval_cmd->add_option("--report", ev.report, "Difficulty report for per-tier numbers");
  eval_cmd->add_option("--split", ev.split, "train, test or all");
  eval_cmd->add_option("-o,--out", ev.out, "Write the report as JSON");
  eval_cmd->add_option("--threshold", ev.threshold, "IoU hit threshold (default 0.5)");

  AblateOptions ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Sweep one axis and tabulate results");
  add_config_options(ablate_cmd, ab.config, false);
  ablate_cmd->add_option("--axis", ab.axis, "lr, alpha_iou, beta_kl, phase_length or strategy")
      ->required();
  ablate_cmd->add_option("--seeds", ab.seeds, "Seeds per cell")->delimiter(',');
  ablate_cmd->add_option("--values", ab.values, "Custom grid")->delimiter(',');
  ablate_cmd->add_option("-o,--out", ab.out, "CSV path");

  ScheduleOptions sch;
  auto* sched_cmd = app.add_subcommand("schedule", "Dump the schedule as CSV");
  add_config_options(sched_cmd, sch.config, true);
  sched_cmd->add_option("-o,--out", sch.out, "CSV path (default stdout)");
  sched_cmd->add_option("--every", sch.every, "Row stride in steps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen_cmd) return cmd_gen(gen);
    if (*score_cmd) return cmd_score(score);
    if (*train_cmd) return cmd_train(tr);
    if (*eval_cmd) return cmd_eval(ev);
    if (*ablate_cmd) return cmd_ablate(ab);
    if (*sched_cmd) return cmd_schedule(sch);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const HashMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const Incompatible& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
