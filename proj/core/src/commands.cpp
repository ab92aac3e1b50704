#include "utc/commands.hpp"

#include <array>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "utc/config.hpp"
#include "utc/inference.hpp"
#include "utc/metrics.hpp"
#include "utc/trainer.hpp"

namespace utc {

namespace {

using nlohmann::json;

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream os(path, mode);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  return os;
}

// Rebuilds a model from a checkpoint's embedded config and parameter
// records. Joint checkpoints store unprefixed names; individual-mode ones
// carry "disc."/"gen." twins and the caller picks a side.
Model<float> model_from_checkpoint(const Checkpoint& ck, const std::string& setting) {
  ModelConfig mcfg = model_config_from_json(ck.meta.at("model"));
  Model<float> m(mcfg, 0);
  std::string prefix;
  if (!ck.records.count("emb.tok")) prefix = setting == "gen" ? "gen." : "disc.";
  for (auto& [name, p] : m.parameters()) {
    auto it = ck.records.find(prefix + name);
    if (it == ck.records.end())
      throw CheckpointError("checkpoint is missing record " + prefix + name);
    load_record_into(it->second, p, prefix + name);
  }
  return m;
}

std::vector<RankingInstance> evaluate_setting(Model<float>& m, const Corpus& corpus,
                                              const std::string& setting,
                                              std::vector<std::string>* prediction_lines) {
  std::vector<RankingInstance> insts;
  for (const Dialog& d : corpus.dialogs)
    for (std::size_t t = 0; t < d.rounds.size(); ++t) {
      CandidateScores cs = setting == "gen" ? score_candidates_loglik(m, corpus, d, t)
                                            : rank_discriminative(m, corpus, d, t);
      RankingInstance inst;
      inst.scores = cs.scores;
      inst.gt_index = d.rounds[t].gt_index;
      inst.relevance = d.rounds[t].dense_relevance;
      insts.push_back(std::move(inst));
      if (prediction_lines) {
        json line{{"image_id", d.image_id}, {"round_id", t}, {"scores", cs.scores}};
        prediction_lines->push_back(line.dump());
      }
    }
  return insts;
}

}  // namespace

void cmd_gendata(const GendataArgs& args) {
  SyntheticConfig cfg;
  cfg.seed = args.seed;
  cfg.n_images = args.images;
  cfg.rounds_per_dialog = args.rounds;
  cfg.n_candidates = args.candidates;
  cfg.n_regions = args.regions;
  cfg.d_img = args.d_img;
  cfg.feature_noise = args.feature_noise;
  save_corpus(generate_synthetic_corpus(cfg), args.out);
}

void cmd_train(const TrainArgs& args) {
  AppConfig cfg = load_app_config(args.config);
  Corpus corpus = load_corpus(args.data);
  if (cfg.model.vocab_size == 0) cfg.model.vocab_size = corpus.vocab.size();
  if (!args.mode.empty()) cfg.train.ablation_mode = args.mode;
  if (!args.dense_annotations.empty()) {
    load_dense_json(corpus, args.dense_annotations);
    cfg.train.dense_finetune = true;
  }
  cfg.train.validate();
  cfg.model.validate();

  Trainer<float> tr(corpus, cfg.model, cfg.train);
  if (!args.init.empty()) tr.load_params_only(args.init);
  bool resumed = false;
  if (!args.resume.empty()) {
    tr.load(args.resume);
    resumed = true;
  }
  std::string log_path = args.log.empty() ? args.out + ".log.csv" : args.log;
  std::ofstream log = open_out(log_path, resumed ? std::ios::app : std::ios::trunc);
  tr.run(&log);
  tr.save(args.out);
}

void cmd_eval(const EvalArgs& args) {
  if (args.setting != "disc" && args.setting != "gen")
    throw ConfigError("eval setting must be disc or gen, got '" + args.setting + "'");
  if (args.split != "all")
    throw ConfigError("synthetic corpora carry no splits; only --split all is valid");
  Checkpoint ck = read_checkpoint(args.ckpt);
  Model<float> m = model_from_checkpoint(ck, args.setting);
  Corpus corpus = load_corpus(args.data);
  if (corpus.vocab.size() != m.config().vocab_size)
    throw CheckpointError("checkpoint vocabulary does not match the data directory");

  std::vector<std::string> lines;
  std::vector<RankingInstance> insts = evaluate_setting(m, corpus, args.setting, &lines);
  std::string pred_path =
      args.predictions.empty() ? args.out + ".predictions.jsonl" : args.predictions;
  {
    std::ofstream os = open_out(pred_path);
    for (const auto& l : lines) os << l << "\n";
  }
  open_out(args.out) << metrics_to_json(compute_metrics(insts)) << "\n";
}

void cmd_ablate(const AblateArgs& args) {
  AppConfig cfg = load_app_config(args.config);
  Corpus corpus = load_corpus(args.data);
  if (cfg.model.vocab_size == 0) cfg.model.vocab_size = corpus.vocab.size();
  if (args.seeds == 0) throw ConfigError("ablate needs at least one seed");

  static const std::array<const char*, 5> kModes{"individual", "elementary", "no_cc", "no_ac",
                                                 "full"};
  std::ofstream os = open_out(args.out);
  os << "mode,disc_r1,disc_r5,disc_r10,disc_mrr,disc_mean,disc_ndcg,"
        "gen_r1,gen_r5,gen_r10,gen_mrr,gen_mean,gen_ndcg\n";
  for (const char* mode : kModes) {
    std::array<double, 12> acc{};
    for (std::size_t s = 0; s < args.seeds; ++s) {
      TrainConfig tcfg = cfg.train;
      tcfg.ablation_mode = mode;
      tcfg.seed = cfg.train.seed + s;
      Trainer<float> tr(corpus, cfg.model, tcfg);
      tr.run();
      MetricsReport disc =
          compute_metrics(evaluate_setting(tr.model(), corpus, "disc", nullptr));
      MetricsReport gen =
          compute_metrics(evaluate_setting(tr.generative_model(), corpus, "gen", nullptr));
      std::array<double, 12> cell{disc.r1,  disc.r5,       disc.r10, disc.mrr,
                                  disc.mean_rank, disc.ndcg, gen.r1,   gen.r5,
                                  gen.r10,  gen.mrr,       gen.mean_rank, gen.ndcg};
      for (std::size_t i = 0; i < 12; ++i) acc[i] += cell[i];
    }
    os << mode;
    for (double v : acc) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), ",%.10g", v / static_cast<double>(args.seeds));
      os << buf;
    }
    os << "\n";
  }
}

void cmd_attn(const AttnArgs& args) {
  Checkpoint ck = read_checkpoint(args.ckpt);
  Model<float> m = model_from_checkpoint(ck, "disc");
  Corpus corpus = load_corpus(args.data);
  const Dialog* dialog = nullptr;
  for (const Dialog& d : corpus.dialogs)
    if (d.image_id == args.image_id) dialog = &d;
  if (!dialog) throw CorpusError("no dialog with image_id " + std::to_string(args.image_id));
  if (args.round >= dialog->rounds.size())
    throw CorpusError("dialog has no round " + std::to_string(args.round));
  EncodedPair p = encode_pair(corpus, *dialog, args.round, m.config().max_seq_len);
  Graph<float> g;
  auto enc = m.encode(g, p.disc_tokens, p.segment_ids, corpus.features_for(dialog->image_id));
  std::ofstream os = open_out(args.out);
  export_attention(enc, os);
}

}  // namespace utc
