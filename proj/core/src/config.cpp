#include "utc/config.hpp"

#include <fstream>
#include <set>

namespace utc {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& known, const std::string& prefix) {
  if (!j.is_object()) throw ConfigError(prefix + ": expected a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("unknown config key " + prefix + "." + key);
}

template <typename T>
void read_field(const json& j, const char* key, T& out, const std::string& prefix) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config field " + prefix + "." + key + " has the wrong type");
  }
}

}  // namespace

json model_config_to_json(const ModelConfig& c) {
  return json{{"hidden_size", c.hidden_size},
              {"n_encoder_layers", c.n_encoder_layers},
              {"n_decoder_layers", c.n_decoder_layers},
              {"n_heads", c.n_heads},
              {"max_seq_len", c.max_seq_len},
              {"vocab_size", c.vocab_size},
              {"d_img", c.d_img},
              {"n_regions", c.n_regions},
              {"dropout", c.dropout},
              {"common_space_dim", c.common_space_dim},
              {"ffn_mult", c.ffn_mult},
              {"max_answer_len", c.max_answer_len},
              {"tied_mlm_head", c.tied_mlm_head},
              {"bilinear_nsp_head", c.bilinear_nsp_head}};
}

ModelConfig model_config_from_json(const json& j, const std::string& prefix) {
  static const std::set<std::string> known{
      "hidden_size", "n_encoder_layers", "n_decoder_layers", "n_heads",
      "max_seq_len", "vocab_size",       "d_img",            "n_regions",
      "dropout",     "common_space_dim", "ffn_mult",         "max_answer_len",
      "tied_mlm_head", "bilinear_nsp_head"};
  check_keys(j, known, prefix);
  ModelConfig c;
  read_field(j, "hidden_size", c.hidden_size, prefix);
  read_field(j, "n_encoder_layers", c.n_encoder_layers, prefix);
  read_field(j, "n_decoder_layers", c.n_decoder_layers, prefix);
  read_field(j, "n_heads", c.n_heads, prefix);
  read_field(j, "max_seq_len", c.max_seq_len, prefix);
  read_field(j, "vocab_size", c.vocab_size, prefix);
  read_field(j, "d_img", c.d_img, prefix);
  read_field(j, "n_regions", c.n_regions, prefix);
  read_field(j, "dropout", c.dropout, prefix);
  read_field(j, "common_space_dim", c.common_space_dim, prefix);
  read_field(j, "ffn_mult", c.ffn_mult, prefix);
  read_field(j, "max_answer_len", c.max_answer_len, prefix);
  read_field(j, "tied_mlm_head", c.tied_mlm_head, prefix);
  read_field(j, "bilinear_nsp_head", c.bilinear_nsp_head, prefix);
  return c;
}

json train_config_to_json(const TrainConfig& c) {
  return json{{"batch_size", c.batch_size},
              {"total_steps", c.total_steps},
              {"warmup_steps", c.warmup_steps},
              {"peak_lr", c.peak_lr},
              {"seed", c.seed},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"clip_norm", c.clip_norm},
              {"ablation_mode", c.ablation_mode},
              {"n_negatives", c.n_negatives},
              {"temperature", c.temperature},
              {"denominator", c.denominator},
              {"alpha", c.alpha},
              {"dense_finetune", c.dense_finetune}};
}

TrainConfig train_config_from_json(const json& j, const std::string& prefix) {
  static const std::set<std::string> known{
      "batch_size", "total_steps", "warmup_steps", "peak_lr",     "seed",
      "beta1",      "beta2",       "adam_eps",     "clip_norm",   "ablation_mode",
      "n_negatives", "temperature", "denominator", "alpha",       "dense_finetune"};
  check_keys(j, known, prefix);
  TrainConfig c;
  read_field(j, "batch_size", c.batch_size, prefix);
  read_field(j, "total_steps", c.total_steps, prefix);
  read_field(j, "warmup_steps", c.warmup_steps, prefix);
  read_field(j, "peak_lr", c.peak_lr, prefix);
  read_field(j, "seed", c.seed, prefix);
  read_field(j, "beta1", c.beta1, prefix);
  read_field(j, "beta2", c.beta2, prefix);
  read_field(j, "adam_eps", c.adam_eps, prefix);
  read_field(j, "clip_norm", c.clip_norm, prefix);
  read_field(j, "ablation_mode", c.ablation_mode, prefix);
  read_field(j, "n_negatives", c.n_negatives, prefix);
  read_field(j, "temperature", c.temperature, prefix);
  read_field(j, "denominator", c.denominator, prefix);
  read_field(j, "alpha", c.alpha, prefix);
  read_field(j, "dense_finetune", c.dense_finetune, prefix);
  return c;
}

json app_config_to_json(const AppConfig& cfg) {
  return json{{"schema_version", kConfigSchemaVersion},
              {"model", model_config_to_json(cfg.model)},
              {"train", train_config_to_json(cfg.train)}};
}

AppConfig app_config_from_json(const json& j) {
  check_keys(j, {"schema_version", "model", "train"}, "config");
  if (!j.contains("schema_version"))
    throw ConfigError("config.schema_version is required");
  int v = 0;
  read_field(j, "schema_version", v, "config");
  if (v != kConfigSchemaVersion)
    throw ConfigError("config.schema_version " + std::to_string(v) + " is unsupported");
  AppConfig cfg;
  if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
  return cfg;
}

AppConfig load_app_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  AppConfig cfg = app_config_from_json(j);
  cfg.train.validate();
  return cfg;
}

json paper_profile_json() {
  // Published scale, for reference only; the desk-scale defaults are what CI
  // actually runs.
  return json{{"schema_version", kConfigSchemaVersion},
              {"model",
               {{"hidden_size", 768},
                {"n_encoder_layers", 12},
                {"n_decoder_layers", 12},
                {"n_heads", 16},
                {"max_seq_len", 256},
                {"vocab_size", 30522},
                {"d_img", 2048},
                {"n_regions", 36},
                {"dropout", 0.1},
                {"common_space_dim", 1024},
                {"ffn_mult", 4},
                {"max_answer_len", 24},
                {"tied_mlm_head", true},
                {"bilinear_nsp_head", false}}},
              {"train",
               {{"batch_size", 120},
                {"total_steps", 20000},
                {"warmup_steps", 2000},
                {"peak_lr", 2e-4},
                {"seed", 0},
                {"beta1", 0.9},
                {"beta2", 0.999},
                {"adam_eps", 1e-8},
                {"clip_norm", 1.0},
                {"ablation_mode", "full"},
                {"n_negatives", 119},
                {"temperature", 0.1},
                {"denominator", "paper_literal"},
                {"alpha", 0.05},
                {"dense_finetune", false}}}};
}

}  // namespace utc
