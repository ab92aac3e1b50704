#pragma once

// Optimization loop: Adam with warmup + linear-decay schedule, per-step
// batch assembly running both encoding paths, in-batch contrastive
// negatives, ablation modes, CSV step logging, and checkpointing with full
// optimizer state. All per-step randomness is derived from (seed, step), so
// a resumed run replays the interrupted trajectory exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "utc/checkpoint.hpp"
#include "utc/config.hpp"
#include "utc/corpus.hpp"
#include "utc/losses.hpp"
#include "utc/model.hpp"
#include "utc/rng.hpp"
#include "utc/tensor.hpp"

namespace utc {

struct TrainerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Linear 0 -> peak over [0, warmup], then linear peak -> 0 over the rest.
inline double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (step > cfg.total_steps)
    throw TrainerError("lr_at: step " + std::to_string(step) + " beyond total_steps");
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps)
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  return cfg.peak_lr * static_cast<double>(cfg.total_steps - step) /
         static_cast<double>(cfg.total_steps - cfg.warmup_steps);
}

template <typename T>
struct AdamState {
  std::size_t t = 0;
  std::map<std::string, std::vector<T>> m, v;
};

template <typename T>
void adam_step(std::map<std::string, Tensor<T>>& params, AdamState<T>& st,
               const TrainConfig& cfg, double lr) {
  double norm2 = 0;
  for (auto& [name, p] : params) {
    p.ensure_grad();
    for (T gv : p.grad()) {
      if (!std::isfinite(gv)) throw TrainerError("non-finite gradient in parameter " + name);
      norm2 += static_cast<double>(gv) * static_cast<double>(gv);
    }
  }
  double scale = 1.0;
  if (cfg.clip_norm > 0) {
    double norm = std::sqrt(norm2);
    if (norm > cfg.clip_norm) scale = cfg.clip_norm / norm;
  }
  st.t += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  for (auto& [name, p] : params) {
    auto& m = st.m[name];
    auto& v = st.v[name];
    if (m.size() != p.size()) m.assign(p.size(), T(0));
    if (v.size() != p.size()) v.assign(p.size(), T(0));
    for (std::size_t i = 0; i < p.size(); ++i) {
      double g = static_cast<double>(p.grad()[i]) * scale;
      double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
      double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      double update = lr * (static_cast<double>(m[i]) / bc1) /
                      (std::sqrt(static_cast<double>(v[i]) / bc2) + cfg.adam_eps);
      p.data()[i] = static_cast<T>(static_cast<double>(p.data()[i]) - update);
    }
  }
}

struct StepLog {
  std::size_t step = 0;
  double lr = 0, mlm = 0, nsp = 0, gen = 0, ac = 0, cc = 0, total = 0;
};

inline void write_log_header(std::ostream& os) {
  os << "step,lr,l_mlm,l_nsp,l_g,l_ac,l_cc,l_total\n";
}

inline void write_log_row(std::ostream& os, const StepLog& s) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%.8e,%.8e,%.8e,%.8e,%.8e,%.8e,%.8e\n", s.step, s.lr, s.mlm,
                s.nsp, s.gen, s.ac, s.cc, s.total);
  os << buf;
}

template <typename T>
class Trainer {
 public:
  Trainer(const Corpus& corpus, ModelConfig mcfg, TrainConfig tcfg)
      : corpus_(&corpus), mcfg_(std::move(mcfg)), tcfg_(std::move(tcfg)) {
    mcfg_.validate();
    tcfg_.validate();
    if (mcfg_.vocab_size != corpus.vocab.size())
      throw TrainerError("model vocab_size does not match the corpus vocabulary");
    if (individual()) {
      disc_model_ = std::make_unique<Model<T>>(mcfg_, tcfg_.seed);
      gen_model_ = std::make_unique<Model<T>>(mcfg_, tcfg_.seed + 1);
    } else {
      model_ = std::make_unique<Model<T>>(mcfg_, tcfg_.seed);
    }
    for (std::size_t di = 0; di < corpus.dialogs.size(); ++di)
      for (std::size_t ri = 0; ri < corpus.dialogs[di].rounds.size(); ++ri) {
        if (tcfg_.dense_finetune && !corpus.dialogs[di].rounds[ri].dense_relevance) continue;
        examples_.emplace_back(di, ri);
      }
    if (examples_.empty())
      throw TrainerError(tcfg_.dense_finetune ? "no rounds carry dense relevance annotations"
                                              : "corpus holds no rounds");
  }

  bool individual() const { return tcfg_.ablation_mode == "individual"; }
  Model<T>& model() { return individual() ? *disc_model_ : *model_; }
  Model<T>& generative_model() { return individual() ? *gen_model_ : *model_; }
  const TrainConfig& train_config() const { return tcfg_; }
  const ModelConfig& model_config() const { return mcfg_; }
  std::size_t step_count() const { return step_; }
  std::size_t example_count() const { return examples_.size(); }

  StepLog step() {
    if (step_ >= tcfg_.total_steps) throw TrainerError("training already ran to total_steps");
    std::size_t s = step_;
    Rng rng = Rng(tcfg_.seed).fork(0x57E9ull * 0x100000000ull + s);
    double lr = lr_at(s + 1, tcfg_);

    std::size_t n = examples_.size();
    std::size_t bsz = std::min(tcfg_.batch_size, n);
    std::vector<std::size_t> batch = rng.sample_without_replacement(n, bsz);

    StepLog log;
    log.step = s;
    log.lr = lr;
    if (tcfg_.dense_finetune)
      dense_step(batch, rng, lr, log);
    else if (individual())
      individual_step(batch, rng, lr, log);
    else
      joint_step(batch, rng, lr, log);
    ++step_;
    return log;
  }

  std::vector<StepLog> run(std::ostream* log_os = nullptr) {
    std::vector<StepLog> logs;
    if (log_os && step_ == 0) write_log_header(*log_os);
    while (step_ < tcfg_.total_steps) {
      StepLog l = step();
      if (log_os) write_log_row(*log_os, l);
      logs.push_back(l);
    }
    return logs;
  }

  void save(const std::string& path) const {
    nlohmann::json meta;
    meta["format"] = "utc-checkpoint";
    meta["model"] = model_config_to_json(mcfg_);
    meta["train"] = train_config_to_json(tcfg_);
    meta["step"] = step_;
    std::vector<std::pair<std::string, TensorRecord>> records;
    auto emit = [&](const std::string& prefix, const Model<T>& m, const AdamState<T>& st) {
      for (const auto& [name, p] : m.parameters()) {
        records.emplace_back(prefix + name, to_record(p));
        auto mi = st.m.find(name);
        auto vi = st.v.find(name);
        if (mi != st.m.end()) {
          TensorRecord rm{p.shape(), {mi->second.begin(), mi->second.end()}};
          records.emplace_back("adam.m." + prefix + name, std::move(rm));
        }
        if (vi != st.v.end()) {
          TensorRecord rv{p.shape(), {vi->second.begin(), vi->second.end()}};
          records.emplace_back("adam.v." + prefix + name, std::move(rv));
        }
      }
    };
    if (individual()) {
      meta["adam_t"] = disc_state_.t;
      meta["adam_t_gen"] = gen_state_.t;
      emit("disc.", *disc_model_, disc_state_);
      emit("gen.", *gen_model_, gen_state_);
    } else {
      meta["adam_t"] = state_.t;
      emit("", *model_, state_);
    }
    write_checkpoint(path, meta, records);
  }

  // Full resume: configs must match exactly; optimizer state restored.
  void load(const std::string& path) {
    Checkpoint ck = read_checkpoint(path);
    if (ck.meta.value("model", nlohmann::json()) != model_config_to_json(mcfg_))
      throw CheckpointError("checkpoint model config does not match this trainer");
    if (ck.meta.value("train", nlohmann::json()) != train_config_to_json(tcfg_))
      throw CheckpointError("checkpoint train config does not match this trainer");
    step_ = ck.meta.at("step").get<std::size_t>();
    auto absorb = [&](const std::string& prefix, Model<T>& m, AdamState<T>& st,
                      std::size_t t_val) {
      st.t = t_val;
      for (auto& [name, p] : m.parameters()) {
        load_named(ck, prefix + name, p);
        load_moment(ck, "adam.m." + prefix + name, p, st.m[name]);
        load_moment(ck, "adam.v." + prefix + name, p, st.v[name]);
      }
    };
    if (individual()) {
      absorb("disc.", *disc_model_, disc_state_, ck.meta.at("adam_t").get<std::size_t>());
      absorb("gen.", *gen_model_, gen_state_, ck.meta.at("adam_t_gen").get<std::size_t>());
    } else {
      absorb("", *model_, state_, ck.meta.at("adam_t").get<std::size_t>());
    }
  }

  // Parameter-only init (e.g. finetuning from a pretraining checkpoint):
  // model configs must match, optimizer starts fresh.
  void load_params_only(const std::string& path) {
    Checkpoint ck = read_checkpoint(path);
    if (ck.meta.value("model", nlohmann::json()) != model_config_to_json(mcfg_))
      throw CheckpointError("checkpoint model config does not match this trainer");
    std::string src_mode = ck.meta.value("train", nlohmann::json()).value("ablation_mode", "");
    bool src_individual = src_mode == "individual";
    if (src_individual != individual())
      throw CheckpointError("checkpoint mode (individual vs joint) does not match this trainer");
    if (individual()) {
      for (auto& [name, p] : disc_model_->parameters()) load_named(ck, "disc." + name, p);
      for (auto& [name, p] : gen_model_->parameters()) load_named(ck, "gen." + name, p);
    } else {
      for (auto& [name, p] : model_->parameters()) load_named(ck, name, p);
    }
  }

 private:
  const Corpus* corpus_;
  ModelConfig mcfg_;
  TrainConfig tcfg_;
  std::unique_ptr<Model<T>> model_, disc_model_, gen_model_;
  AdamState<T> state_, disc_state_, gen_state_;
  std::vector<std::pair<std::size_t, std::size_t>> examples_;
  std::size_t step_ = 0;

  static void load_named(const Checkpoint& ck, const std::string& name, Tensor<T>& p) {
    auto it = ck.records.find(name);
    if (it == ck.records.end()) throw CheckpointError("checkpoint is missing record " + name);
    load_record_into(it->second, p, name);
  }

  static void load_moment(const Checkpoint& ck, const std::string& name, const Tensor<T>& p,
                          std::vector<T>& out) {
    auto it = ck.records.find(name);
    if (it == ck.records.end()) throw CheckpointError("checkpoint is missing record " + name);
    if (it->second.data.size() != p.size())
      throw CheckpointError("checkpoint record " + name + " has the wrong size");
    out.assign(it->second.data.begin(), it->second.data.end());
  }

  LossWeights mode_weights() const {
    LossWeights w;
    w.alpha = tcfg_.alpha;
    const std::string& m = tcfg_.ablation_mode;
    if (m == "elementary" || m == "no_ac") w.use_ac = false;
    if (m == "elementary" || m == "no_cc") w.use_cc = false;
    return w;
  }

  ForwardOptions<T> train_opts(Rng& rng) const {
    ForwardOptions<T> o;
    o.train = true;
    o.rng = &rng;
    return o;
  }

  struct Slot {
    const Dialog* dialog = nullptr;
    std::size_t round = 0;
    const ImageFeatures* feats = nullptr;
    EncodedPair gt_pair;
    EncodedPair disc_pair;  // gt_pair when the NSP draw is positive
    int nsp_label = 1;
    MaskingPlan plan;
  };

  // All random draws happen here, in slot order, before any forward pass.
  std::vector<Slot> sample_slots(const std::vector<std::size_t>& batch, Rng& rng) const {
    std::vector<Slot> slots;
    slots.reserve(batch.size());
    for (std::size_t idx : batch) {
      auto [di, ri] = examples_[idx];
      Slot sl;
      sl.dialog = &corpus_->dialogs[di];
      sl.round = ri;
      sl.feats = &corpus_->features_for(sl.dialog->image_id);
      sl.gt_pair = encode_pair(*corpus_, *sl.dialog, ri, mcfg_.max_seq_len);
      const Round& round = sl.dialog->rounds[ri];
      sl.nsp_label = rng.bernoulli(0.5) ? 1 : 0;
      if (sl.nsp_label == 1) {
        sl.disc_pair = sl.gt_pair;
      } else {
        std::size_t nc = round.candidates.size();
        if (nc < 2) throw TrainerError("round needs at least two candidates for NSP negatives");
        std::size_t k = (round.gt_index + 1 + rng.uniform_index(nc - 1)) % nc;
        const Words& neg = corpus_->answers[static_cast<std::size_t>(round.candidates[k])];
        sl.disc_pair = encode_discriminative(*corpus_, *sl.dialog, ri, neg, mcfg_.max_seq_len);
      }
      sl.plan = apply_mlm_masks(sl.disc_pair, *sl.feats, rng.next_u64());
      sl.disc_pair.mlm_plan = sl.plan;
      slots.push_back(std::move(sl));
    }
    return slots;
  }

  std::vector<int> gt_answer_ids(const Slot& sl) const {
    return {sl.gt_pair.disc_tokens.begin() + static_cast<std::ptrdiff_t>(sl.gt_pair.answer_start),
            sl.gt_pair.disc_tokens.begin() + static_cast<std::ptrdiff_t>(sl.gt_pair.answer_end)};
  }

  Tensor<T> mean_of(Graph<T>& g, std::vector<Tensor<T>>& parts) const {
    if (parts.empty()) return Tensor<T>::scalar(T(0));
    Tensor<T> acc = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) acc = g.add(acc, parts[i]);
    return g.scale(acc, T(1) / static_cast<T>(parts.size()));
  }

  void joint_step(const std::vector<std::size_t>& batch, Rng& rng, double lr, StepLog& log) {
    LossWeights w = mode_weights();
    ContrastiveConfig ccfg{tcfg_.temperature, tcfg_.n_negatives, tcfg_.denominator_mode()};
    std::vector<Slot> slots = sample_slots(batch, rng);

    std::vector<AnchorInfo> anchors;
    for (const Slot& sl : slots) {
      const Round& r = sl.dialog->rounds[sl.round];
      anchors.push_back({r.candidates, r.gt_index, r.dense_relevance});
    }
    std::vector<NegativeSet> negsets;
    bool contrastive = w.use_ac || w.use_cc;
    if (contrastive)
      negsets = build_negative_sets(anchors, rng.next_u64(), tcfg_.n_negatives, false);

    Graph<T> g;
    Model<T>& m = *model_;
    std::vector<Tensor<T>> mlms, nsps, gens, acs, ccs;
    std::vector<EncoderOutput<T>> enc_disc(slots.size());
    std::vector<Tensor<T>> c_disc(slots.size());
    std::vector<HiddenSplit<T>> splits(slots.size());
    std::vector<bool> anchored(slots.size(), false);

    for (std::size_t i = 0; i < slots.size(); ++i) {
      Slot& sl = slots[i];
      std::vector<int> disc_in = masked_tokens(sl.disc_pair);
      ImageFeatures disc_feats = masked_features(*sl.feats, sl.plan);
      enc_disc[i] = m.encode(g, disc_in, sl.disc_pair.segment_ids, disc_feats, train_opts(rng));
      c_disc[i] =
          pool_span(g, enc_disc[i].text_hidden, disc_in, 0, sl.disc_pair.answer_start);

      if (!sl.plan.empty())
        mlms.push_back(mlm_loss(g, m.mlm_logits(g, enc_disc[i], sl.plan), sl.plan, *sl.feats).total);
      nsps.push_back(nsp_loss(g, m.nsp_score(g, enc_disc[i]), sl.nsp_label));

      auto enc_gen =
          m.encode(g, sl.gt_pair.gen_tokens, sl.gt_pair.segment_ids, *sl.feats, train_opts(rng));
      auto cs = m.project_common_space(g, enc_gen);
      std::vector<int> answer = gt_answer_ids(sl);
      if (answer.size() + 1 > mcfg_.max_answer_len + 2)
        throw TrainerError("gt answer longer than the decoder's max_answer_len");
      std::vector<int> prefix{Vocab::kMask};
      prefix.insert(prefix.end(), answer.begin(), answer.end());
      auto dec = m.decode(g, cs, prefix, train_opts(rng));
      std::vector<int> targets = answer;
      targets.push_back(Vocab::kSep);
      gens.push_back(generative_loss(g, dec, targets));

      if (contrastive && sl.nsp_label == 1) {
        anchored[i] = true;
        splits[i] = split_and_pool(g, enc_disc[i], enc_gen, dec, sl.gt_pair);
        splits[i].a_gen = m.map_decoder_to_encoder_space(g, splits[i].a_gen);
      }
    }

    // Answer-negative representations: the negative candidate appended to
    // its own slot's context through the discriminative encoder, pooled
    // over the answer span. Cached per (slot, candidate).
    std::map<std::pair<std::size_t, std::size_t>, Tensor<T>> neg_cache;
    auto answer_negative = [&](std::size_t slot_i, std::size_t cand_k) {
      auto key = std::make_pair(slot_i, cand_k);
      auto it = neg_cache.find(key);
      if (it != neg_cache.end()) return it->second;
      const Slot& sl = slots[slot_i];
      const Round& r = sl.dialog->rounds[sl.round];
      const Words& text = corpus_->answers[static_cast<std::size_t>(r.candidates[cand_k])];
      EncodedPair np =
          encode_discriminative(*corpus_, *sl.dialog, sl.round, text, mcfg_.max_seq_len);
      auto enc = m.encode(g, np.disc_tokens, np.segment_ids, *sl.feats, train_opts(rng));
      Tensor<T> vec =
          pool_span(g, enc.text_hidden, np.disc_tokens, np.answer_start, np.answer_end);
      neg_cache.emplace(key, vec);
      return vec;
    };

    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (!anchored[i]) continue;
      if (w.use_ac) {
        std::vector<Tensor<T>> negs;
        for (auto [si, ck] : negsets[i].answer_negatives) negs.push_back(answer_negative(si, ck));
        acs.push_back(answer_contrastive_loss(g, splits[i], negs, ccfg));
      }
      if (w.use_cc) {
        std::vector<Tensor<T>> negs;
        for (std::size_t si : negsets[i].context_negatives) negs.push_back(c_disc[si]);
        ContrastiveConfig cc_cfg = ccfg;
        cc_cfg.n_negatives = negs.size();
        ccs.push_back(context_contrastive_loss(g, splits[i], negs, cc_cfg));
      }
    }

    LossComponents<T> comps;
    comps.mlm = mean_of(g, mlms);
    comps.nsp = mean_of(g, nsps);
    comps.gen = mean_of(g, gens);
    comps.ac = mean_of(g, acs);
    comps.cc = mean_of(g, ccs);
    Tensor<T> total = combined_loss(g, comps, w);

    auto& params = m.parameters();
    for (auto& [name, p] : params) p.zero_grad();
    g.backward(total);
    adam_step(params, state_, tcfg_, lr);

    log.mlm = static_cast<double>(comps.mlm.item());
    log.nsp = static_cast<double>(comps.nsp.item());
    log.gen = static_cast<double>(comps.gen.item());
    log.ac = w.use_ac ? static_cast<double>(comps.ac.item()) : 0.0;
    log.cc = w.use_cc ? static_cast<double>(comps.cc.item()) : 0.0;
    log.total = static_cast<double>(total.item());
  }

  void individual_step(const std::vector<std::size_t>& batch, Rng& rng, double lr, StepLog& log) {
    std::vector<Slot> slots = sample_slots(batch, rng);

    {
      Graph<T> g;
      std::vector<Tensor<T>> mlms, nsps;
      for (Slot& sl : slots) {
        std::vector<int> disc_in = masked_tokens(sl.disc_pair);
        ImageFeatures disc_feats = masked_features(*sl.feats, sl.plan);
        auto enc =
            disc_model_->encode(g, disc_in, sl.disc_pair.segment_ids, disc_feats, train_opts(rng));
        if (!sl.plan.empty())
          mlms.push_back(
              mlm_loss(g, disc_model_->mlm_logits(g, enc, sl.plan), sl.plan, *sl.feats).total);
        nsps.push_back(nsp_loss(g, disc_model_->nsp_score(g, enc), sl.nsp_label));
      }
      Tensor<T> mlm = mean_of(g, mlms);
      Tensor<T> nsp = mean_of(g, nsps);
      Tensor<T> total = g.add(mlm, nsp);
      for (auto& [name, p] : disc_model_->parameters()) p.zero_grad();
      g.backward(total);
      adam_step(disc_model_->parameters(), disc_state_, tcfg_, lr);
      log.mlm = static_cast<double>(mlm.item());
      log.nsp = static_cast<double>(nsp.item());
    }
    {
      Graph<T> g;
      std::vector<Tensor<T>> gens;
      for (Slot& sl : slots) {
        auto enc = gen_model_->encode(g, sl.gt_pair.gen_tokens, sl.gt_pair.segment_ids, *sl.feats,
                                      train_opts(rng));
        auto cs = gen_model_->project_common_space(g, enc);
        std::vector<int> answer = gt_answer_ids(sl);
        std::vector<int> prefix{Vocab::kMask};
        prefix.insert(prefix.end(), answer.begin(), answer.end());
        auto dec = gen_model_->decode(g, cs, prefix, train_opts(rng));
        std::vector<int> targets = answer;
        targets.push_back(Vocab::kSep);
        gens.push_back(generative_loss(g, dec, targets));
      }
      Tensor<T> gen = mean_of(g, gens);
      for (auto& [name, p] : gen_model_->parameters()) p.zero_grad();
      g.backward(gen);
      adam_step(gen_model_->parameters(), gen_state_, tcfg_, lr);
      log.gen = static_cast<double>(gen.item());
    }
    log.total = log.mlm + log.nsp + tcfg_.alpha * log.gen;
  }

  void dense_step(const std::vector<std::size_t>& batch, Rng& rng, double lr, StepLog& log) {
    Graph<T> g;
    Model<T>& m = *model_;
    std::vector<Tensor<T>> losses;
    for (std::size_t idx : batch) {
      auto [di, ri] = examples_[idx];
      const Dialog& d = corpus_->dialogs[di];
      const Round& round = d.rounds[ri];
      const ImageFeatures& feats = corpus_->features_for(d.image_id);
      std::vector<Tensor<T>> logits;
      for (std::size_t k = 0; k < round.candidates.size(); ++k) {
        const Words& text = corpus_->answers[static_cast<std::size_t>(round.candidates[k])];
        EncodedPair p = encode_discriminative(*corpus_, d, ri, text, mcfg_.max_seq_len);
        auto enc = m.encode(g, p.disc_tokens, p.segment_ids, feats, train_opts(rng));
        logits.push_back(m.nsp_logit(g, enc));
      }
      losses.push_back(
          dense_finetune_loss(g, g.stack_scalars(logits), *round.dense_relevance));
    }
    Tensor<T> total = mean_of(g, losses);
    for (auto& [name, p] : m.parameters()) p.zero_grad();
    g.backward(total);
    adam_step(m.parameters(), state_, tcfg_, lr);
    log.total = static_cast<double>(total.item());
  }
};

}  // namespace utc
