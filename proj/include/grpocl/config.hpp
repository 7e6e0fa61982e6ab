// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "grpocl/curriculum.hpp"
#include "grpocl/difficulty.hpp"
#include "grpocl/synthetic_env.hpp"
#include "grpocl/trainer.hpp"

namespace grpocl {

/// Bad configuration file or value. Carries the dotted key path when known.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalConfig {
  double threshold = 0.5;
};

/// Fully resolved configuration of a run.
struct RunConfig {
  DatasetSpec dataset;
  bool dataset_easy_only = false;
  CurriculumConfig curriculum;
  TrainConfig train;
  ScoringConfig difficulty;
  bool rescore_every_stage = false;
  EvalConfig eval;
  std::string output_dir = "runs";
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Key tree with every field at its preset default.
inline nlohmann::json default_config_json(TrainPreset preset = TrainPreset::Desk) {
  using nlohmann::json;
  const DatasetSpec ds;
  const CurriculumConfig cc;
  const TrainConfig tc = TrainConfig::for_preset(preset);
  const ScoringConfig sc;
  return json{
      {"dataset",
       {{"seed", ds.seed},
        {"count_a", ds.count_a},
        {"count_b", ds.count_b},
        {"holdout_fraction", ds.holdout_fraction},
        {"bins", ds.bins},
        {"warmup_count", ds.warmup_count},
        {"clutter", ds.clutter},
        {"easy_only", false},
        {"mix_a", ds.mix_a},
        {"mix_b", ds.mix_b}}},
      {"curriculum",
       {{"strategy", to_string(cc.strategy)},
        {"m0", cc.m0},
        {"w", cc.w},
        {"stage_interval", cc.stage_interval},
        {"share_start", cc.share_start},
        {"share_end", cc.share_end}}},
      {"train",
       {{"preset", to_string(preset)},
        {"lr", tc.lr},
        {"batch_groups", tc.batch_groups},
        {"total_steps", tc.total_steps},
        {"warmup_fraction", tc.warmup_fraction},
        {"group_size", tc.group_size},
        {"seed", tc.seed},
        {"adam",
         {{"beta1", tc.adam.beta1},
          {"beta2", tc.adam.beta2},
          {"eps", tc.adam.eps},
          {"weight_decay", tc.adam.weight_decay}}},
        {"ref_refresh_every", tc.ref_refresh_every},
        {"warmup_phase_fraction", tc.warmup_phase_fraction},
        {"temperature", tc.sampler.temperature},
        {"top_p", tc.sampler.top_p},
        {"clip_epsilon", nullptr},
        {"record_wall_clock", tc.record_wall_clock}}},
      {"reward",
       {{"alpha_iou", tc.reward.alpha_iou},
        {"beta_format", tc.reward.beta_format},
        {"beta_kl", tc.reward.beta_kl}}},
      {"difficulty",
       {{"group_size", sc.group_size},
        {"probe_temperature", sc.probe.temperature},
        {"lambda_mean", sc.weights.lambda_mean},
        {"lambda_var", sc.weights.lambda_var},
        {"lambda_sem", sc.weights.lambda_sem},
        {"quantiles", {sc.quantiles.lower, sc.quantiles.upper}},
        {"rescore_every_stage", false},
        {"seed", sc.seed}}},
      {"eval", {{"threshold", 0.5}}},
      {"output_dir", "runs"}};
}

namespace detail {

inline bool json_kinds_match(const nlohmann::json& want, const nlohmann::json& got) {
  if (want.is_null()) return got.is_null() || got.is_number();  // optional numbers
  if (want.is_number_float()) return got.is_number();
  if (want.is_number_integer()) return got.is_number_integer();
  if (want.is_boolean()) return got.is_boolean();
  if (want.is_string()) return got.is_string();
  if (want.is_array()) return got.is_array() && got.size() == want.size();
  if (want.is_object()) return got.is_object();
  return false;
}

inline const char* kind_name(const nlohmann::json& j) {
  if (j.is_null()) return "number or null";
  if (j.is_number_float()) return "number";
  if (j.is_number_integer()) return "integer";
  if (j.is_boolean()) return "boolean";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  return "object";
}

/// Overlays `patch` onto `base`, rejecting keys that `base` lacks and values
/// of the wrong kind.
inline void overlay(nlohmann::json& base, const nlohmann::json& patch, const std::string& path) {
  for (const auto& [key, value] : patch.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError(here + ": unknown key");
    auto& slot = base[key];
    if (!json_kinds_match(slot, value)) {
      throw ConfigError(here + ": expected " + kind_name(slot));
    }
    if (slot.is_object()) {
      overlay(slot, value, here);
    } else if (slot.is_number_float()) {
      slot = value.get<double>();  // 1 and 1.0 hash the same
    } else if (slot.is_array()) {
      for (std::size_t i = 0; i < slot.size(); ++i) {
        if (!json_kinds_match(slot[i], value[i])) {
          throw ConfigError(here + "[" + std::to_string(i) + "]: expected " + kind_name(slot[i]));
        }
        slot[i] = slot[i].is_number_float() ? nlohmann::json(value[i].get<double>()) : value[i];
      }
    } else {
      slot = value;
    }
  }
}

template <class T>
T get_at(const nlohmann::json& root, const std::string& path) {
  const nlohmann::json* cur = &root;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) cur = &cur->at(part);
  return cur->get<T>();
}

}  // namespace detail

/// Parses JSON text (comments allowed). Syntax errors report line and column.
inline nlohmann::json parse_config_text(const std::string& text) {
  try {
    return nlohmann::json::parse(text, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
}

inline nlohmann::json read_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  auto j = parse_config_text(ss.str());
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  return j;
}

/// Resolves a config tree: preset defaults, then the file, then overrides
/// (a dotted-key map given as a JSON object tree). The preset comes from the
/// override tree, else the file, else desk.
inline nlohmann::json resolve_config_json(
    const nlohmann::json& file, const nlohmann::json& overrides = nlohmann::json::object()) {
  std::string preset = "desk";
  for (const auto* src : {&file, &overrides}) {
    if (src->contains("train") && (*src)["train"].contains("preset")) {
      const auto& p = (*src)["train"]["preset"];
      if (!p.is_string()) throw ConfigError("train.preset: expected string");
      preset = p.get<std::string>();
    }
  }
  TrainPreset tp;
  try {
    tp = parse_train_preset(preset);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train.preset: ") + e.what());
  }
  auto tree = default_config_json(tp);
  detail::overlay(tree, file, "");
  detail::overlay(tree, overrides, "");
  return tree;
}

/// Content hash of a resolved tree. Keys are serialized in sorted order, so
/// the hash does not depend on the order keys appear in the file. The output
/// directory does not take part.
inline std::string config_hash(const nlohmann::json& resolved) {
  auto copy = resolved;
  copy.erase("output_dir");
  return hex64(fnv1a64(copy.dump()));
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using detail::get_at;
  RunConfig c;
  try {
    auto& d = c.dataset;
    c.dataset_easy_only = get_at<bool>(j, "dataset.easy_only");
    if (c.dataset_easy_only) {
      d = DatasetSpec::easy_only(get_at<std::uint64_t>(j, "dataset.seed"),
                                 get_at<int>(j, "dataset.count_a"),
                                 get_at<double>(j, "dataset.holdout_fraction"));
    } else {
      d.seed = get_at<std::uint64_t>(j, "dataset.seed");
      d.count_a = get_at<int>(j, "dataset.count_a");
      d.holdout_fraction = get_at<double>(j, "dataset.holdout_fraction");
      d.mix_a = get_at<std::array<double, 3>>(j, "dataset.mix_a");
      d.mix_b = get_at<std::array<double, 3>>(j, "dataset.mix_b");
    }
    d.count_b = c.dataset_easy_only ? 0 : get_at<int>(j, "dataset.count_b");
    d.bins = get_at<int>(j, "dataset.bins");
    d.warmup_count = get_at<int>(j, "dataset.warmup_count");
    d.clutter = get_at<double>(j, "dataset.clutter");

    auto& cc = c.curriculum;
    cc.strategy = parse_strategy(get_at<std::string>(j, "curriculum.strategy"));
    cc.m0 = get_at<double>(j, "curriculum.m0");
    cc.w = get_at<double>(j, "curriculum.w");
    cc.stage_interval = get_at<int>(j, "curriculum.stage_interval");
    cc.share_start = get_at<double>(j, "curriculum.share_start");
    cc.share_end = get_at<double>(j, "curriculum.share_end");

    auto& t = c.train;
    t = TrainConfig::for_preset(parse_train_preset(get_at<std::string>(j, "train.preset")));
    t.lr = get_at<double>(j, "train.lr");
    t.batch_groups = get_at<int>(j, "train.batch_groups");
    t.total_steps = get_at<int>(j, "train.total_steps");
    t.warmup_fraction = get_at<double>(j, "train.warmup_fraction");
    t.group_size = get_at<int>(j, "train.group_size");
    t.seed = get_at<std::uint64_t>(j, "train.seed");
    t.adam.beta1 = get_at<double>(j, "train.adam.beta1");
    t.adam.beta2 = get_at<double>(j, "train.adam.beta2");
    t.adam.eps = get_at<double>(j, "train.adam.eps");
    t.adam.weight_decay = get_at<double>(j, "train.adam.weight_decay");
    t.ref_refresh_every = get_at<int>(j, "train.ref_refresh_every");
    t.warmup_phase_fraction = get_at<double>(j, "train.warmup_phase_fraction");
    t.sampler.temperature = get_at<double>(j, "train.temperature");
    t.sampler.top_p = get_at<double>(j, "train.top_p");
    if (const auto& e = j.at("train").at("clip_epsilon"); !e.is_null()) {
      t.objective.clip_epsilon = e.get<double>();
    }
    t.record_wall_clock = get_at<bool>(j, "train.record_wall_clock");
    t.reward.alpha_iou = get_at<double>(j, "reward.alpha_iou");
    t.reward.beta_format = get_at<double>(j, "reward.beta_format");
    t.reward.beta_kl = get_at<double>(j, "reward.beta_kl");

    auto& s = c.difficulty;
    s.group_size = get_at<int>(j, "difficulty.group_size");
    s.probe.temperature = get_at<double>(j, "difficulty.probe_temperature");
    s.weights.lambda_mean = get_at<double>(j, "difficulty.lambda_mean");
    s.weights.lambda_var = get_at<double>(j, "difficulty.lambda_var");
    s.weights.lambda_sem = get_at<double>(j, "difficulty.lambda_sem");
    const auto q = get_at<std::array<double, 2>>(j, "difficulty.quantiles");
    s.quantiles = {q[0], q[1]};
    s.seed = get_at<std::uint64_t>(j, "difficulty.seed");
    c.rescore_every_stage = get_at<bool>(j, "difficulty.rescore_every_stage");
    c.eval.threshold = get_at<double>(j, "eval.threshold");
    c.output_dir = get_at<std::string>(j, "output_dir");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  try {
    c.dataset.validate();
    c.train.validate();
    c.difficulty.weights.validate();
    c.difficulty.probe.validate();
    c.difficulty.quantiles.validate();
    if (c.difficulty.group_size < 2) {
      throw std::invalid_argument("difficulty.group_size must be >= 2");
    }
    auto cc = c.curriculum;
    cc.total_steps = c.train.curriculum_steps();
    cc.validate();
    if (!(c.eval.threshold > 0.0 && c.eval.threshold <= 1.0)) {
      throw std::invalid_argument("eval.threshold must be in (0, 1]");
    }
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

}  // namespace grpocl
