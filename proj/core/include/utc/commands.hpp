#pragma once

// The work behind each CLI subcommand, kept in the library so tests can run
// them in-process. All functions throw on failure; the binary maps exception
// classes to exit codes.

#include <cstdint>
#include <string>

namespace utc {

struct GendataArgs {
  std::uint64_t seed = 0;
  std::size_t images = 10;
  std::size_t rounds = 3;
  std::size_t candidates = 100;
  std::size_t regions = 9;
  std::size_t d_img = 32;
  double feature_noise = 0.1;
  std::string out;
};

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string mode;               // empty keeps the config file's ablation_mode
  std::string dense_annotations;  // switches to dense finetuning
  std::string resume;             // full resume (parameters + optimizer + step)
  std::string init;               // parameter-only warm start
  std::string log;                // defaults to <out>.log.csv
};

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string split = "all";
  std::string setting = "disc";  // disc|gen
  std::string out;
  std::string predictions;  // defaults to <out>.predictions.jsonl
};

struct AblateArgs {
  std::string config;
  std::string data;
  std::string out;
  std::size_t seeds = 1;
};

struct AttnArgs {
  std::string ckpt;
  std::string data;
  int image_id = 0;
  std::size_t round = 0;
  std::string out;
};

void cmd_gendata(const GendataArgs& args);
void cmd_train(const TrainArgs& args);
void cmd_eval(const EvalArgs& args);
void cmd_ablate(const AblateArgs& args);
void cmd_attn(const AttnArgs& args);

}  // namespace utc
