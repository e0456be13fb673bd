#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pascl/dualnet.hpp"
#include "pascl/longtail.hpp"
#include "pascl/objectives.hpp"

namespace pascl {

enum class OptimizerKind { kSgdMomentum, kAdam };
enum class Schedule { kCosine, kStep, kConstant };

struct TrainConfig {
  std::size_t n1 = 50;  // stage-1 epochs
  std::size_t n2 = 10;  // stage-2 epochs; 0 disables auxiliary branch finetuning
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double lr1 = 1e-3;
  double lr2 = 5e-3;
  AbfScope abf_scope = AbfScope::kBnClf;
  Schedule schedule = Schedule::kCosine;
  double momentum = 0.9;  // SGD only
  std::size_t batch_in = 128;
  std::size_t batch_out = 128;
  LossWeights weights;
  ContrastVariant variant = ContrastVariant::kPascl;
  ScoreFn score = ScoreFn::kMsp;
  std::uint64_t seed = 0;

  void validate() const;
};

// Everything one run needs. Class count and feature dimension live in
// `data` and are mirrored into `net` and `train.weights` by sync().
struct ExperimentConfig {
  DataGenConfig data;
  NetConfig net;
  TrainConfig train;

  void sync();
  void validate() const;
};

// Flat `key = value` text. Blank lines and lines starting with '#' are
// skipped; unknown keys and malformed values raise ConfigError.
ExperimentConfig parse_config_text(std::string_view text);
ExperimentConfig load_config_file(const std::filesystem::path& path);

// Sets one key; the same vocabulary as the config file.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// Canonical text with every key in a fixed order; parse(render(c)) == c.
std::string render_config(const ExperimentConfig& cfg);
// 16 hex digits of FNV-1a over render_config().
std::string config_hash(const ExperimentConfig& cfg);

// Every accepted key, in canonical order.
const std::vector<std::string>& config_keys();

std::string_view optimizer_name(OptimizerKind k);
std::string_view schedule_name(Schedule s);

}  // namespace pascl
