// Microbenchmarks for the hot paths: encoder forward, candidate ranking,
// and a full optimizer step.

#include <benchmark/benchmark.h>

#include "utc/corpus.hpp"
#include "utc/inference.hpp"
#include "utc/model.hpp"
#include "utc/trainer.hpp"

namespace {

utc::Corpus& corpus() {
  static utc::Corpus c = [] {
    utc::SyntheticConfig cfg;
    cfg.seed = 7;
    cfg.n_images = 16;
    cfg.rounds_per_dialog = 2;
    cfg.n_candidates = 8;
    cfg.n_regions = 6;
    cfg.d_img = 16;
    return utc::generate_synthetic_corpus(cfg);
  }();
  return c;
}

utc::ModelConfig model_cfg() {
  utc::ModelConfig m;
  m.vocab_size = corpus().vocab.size();
  m.hidden_size = 32;
  m.n_encoder_layers = 2;
  m.n_decoder_layers = 2;
  m.n_heads = 4;
  m.d_img = 16;
  m.n_regions = 6;
  m.max_seq_len = 48;
  m.common_space_dim = 32;
  m.ffn_mult = 2;
  m.dropout = 0.0;
  m.max_answer_len = 4;
  return m;
}

void bench_encode(benchmark::State& state) {
  utc::Model<float> m(model_cfg(), 1);
  const utc::Dialog& d = corpus().dialogs.front();
  utc::EncodedPair p = utc::encode_pair(corpus(), d, 0, m.config().max_seq_len);
  const utc::ImageFeatures& feats = corpus().features_for(d.image_id);
  for (auto _ : state) {
    utc::Graph<float> g(false);
    auto enc = m.encode(g, p.disc_tokens, p.segment_ids, feats);
    benchmark::DoNotOptimize(enc.text_hidden);
  }
}
BENCHMARK(bench_encode);

void bench_rank_candidates(benchmark::State& state) {
  utc::Model<float> m(model_cfg(), 1);
  const utc::Dialog& d = corpus().dialogs.front();
  for (auto _ : state) {
    utc::CandidateScores cs = utc::rank_discriminative(m, corpus(), d, 0);
    benchmark::DoNotOptimize(cs.scores);
  }
}
BENCHMARK(bench_rank_candidates);

void bench_train_step(benchmark::State& state) {
  utc::TrainConfig t;
  t.batch_size = 4;
  t.total_steps = 1u << 20;
  t.warmup_steps = 1u << 10;
  t.seed = 1;
  utc::Trainer<float> tr(corpus(), model_cfg(), t);
  for (auto _ : state) {
    utc::StepLog log = tr.step();
    benchmark::DoNotOptimize(log.total);
  }
}
BENCHMARK(bench_train_step)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
