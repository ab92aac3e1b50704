#pragma once

// Run configuration: training hyperparameters, JSON (de)serialization for
// the model/train config pair, and strict config-file parsing (unknown keys
// are errors, reported with their field paths).

#include <cstdint>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "utc/losses.hpp"
#include "utc/model.hpp"

namespace utc {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int kConfigSchemaVersion = 1;

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t total_steps = 200;
  std::size_t warmup_steps = 20;
  double peak_lr = 2e-4;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;  // global-norm clip; <= 0 disables
  std::string ablation_mode = "full";  // individual|elementary|no_cc|no_ac|full
  std::size_t n_negatives = 2;
  double temperature = 0.1;
  std::string denominator = "paper_literal";  // or include_positive
  double alpha = 0.05;
  bool dense_finetune = false;

  void validate() const {
    if (peak_lr <= 0) throw ConfigError("train config: peak_lr must be positive");
    if (total_steps == 0 || warmup_steps >= total_steps)
      throw ConfigError("train config: warmup_steps must be < total_steps");
    if (batch_size == 0) throw ConfigError("train config: batch_size must be positive");
    if (n_negatives == 0) throw ConfigError("train config: n_negatives must be positive");
    if (temperature <= 0) throw ConfigError("train config: temperature must be positive");
    if (alpha < 0) throw ConfigError("train config: alpha must be non-negative");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1 || adam_eps <= 0)
      throw ConfigError("train config: invalid Adam parameters");
    if (ablation_mode != "individual" && ablation_mode != "elementary" &&
        ablation_mode != "no_cc" && ablation_mode != "no_ac" && ablation_mode != "full")
      throw ConfigError("train config: unknown ablation_mode '" + ablation_mode + "'");
    if (denominator != "paper_literal" && denominator != "include_positive")
      throw ConfigError("train config: unknown denominator '" + denominator + "'");
  }

  DenominatorMode denominator_mode() const {
    return denominator == "include_positive" ? DenominatorMode::kIncludePositive
                                             : DenominatorMode::kPaperLiteral;
  }
};

struct AppConfig {
  ModelConfig model;
  TrainConfig train;
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& prefix = "model");
nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& prefix = "train");

nlohmann::json app_config_to_json(const AppConfig& cfg);
AppConfig app_config_from_json(const nlohmann::json& j);
AppConfig load_app_config(const std::string& path);

// Paper-scale hyperparameters, emitted for documentation only.
nlohmann::json paper_profile_json();

}  // namespace utc
