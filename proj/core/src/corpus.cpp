#include "utc/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "utc/rng.hpp"

namespace utc {

using nlohmann::json;

// ---- Vocab ----

Vocab Vocab::with_words(const std::vector<std::string>& words) {
  Vocab v;
  v.words_ = {"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[IMG]", "[UNK]"};
  for (const auto& w : words) {
    if (v.ids_.count(w) || std::find(v.words_.begin(), v.words_.end(), w) != v.words_.end())
      continue;
    v.words_.push_back(w);
  }
  for (std::size_t i = 0; i < v.words_.size(); ++i) v.ids_[v.words_[i]] = static_cast<int>(i);
  if (v.ids_.size() != v.words_.size()) throw CorpusError("vocab mapping is not bijective");
  return v;
}

int Vocab::id(const std::string& word) const {
  auto it = ids_.find(word);
  if (it == ids_.end()) throw CorpusError("out-of-vocabulary word: " + word);
  return it->second;
}

int Vocab::id_or_unk(const std::string& word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size())
    throw CorpusError("vocab id out of range: " + std::to_string(id));
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const Words& w) const {
  std::vector<int> out;
  out.reserve(w.size());
  for (const auto& s : w) out.push_back(id(s));
  return out;
}

Words Vocab::decode(const std::vector<int>& ids) const {
  Words out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(word(i));
  return out;
}

const ImageFeatures& Corpus::features_for(int image_id) const {
  for (const auto& f : features)
    if (f.image_id == image_id) return f;
  throw CorpusError("no features for image_id " + std::to_string(image_id));
}

// ---- sequence assembly ----

namespace {

// [CLS] C_ap [SEP] Q_1 [SEP] A_1 [SEP] ... Q_t [SEP], i.e. everything up to
// and including the separator before the appended answer.
std::vector<int> context_tokens(const Corpus& corpus, const Dialog& d, std::size_t t) {
  if (t >= d.rounds.size())
    throw CorpusError("round index " + std::to_string(t) + " out of range");
  const Vocab& v = corpus.vocab;
  std::vector<int> toks{Vocab::kCls};
  for (const auto& w : d.caption) toks.push_back(v.id(w));
  toks.push_back(Vocab::kSep);
  for (std::size_t r = 0; r < t; ++r) {
    for (const auto& w : d.rounds[r].question) toks.push_back(v.id(w));
    toks.push_back(Vocab::kSep);
    for (const auto& w : d.rounds[r].gt_answer) toks.push_back(v.id(w));
    toks.push_back(Vocab::kSep);
  }
  for (const auto& w : d.rounds[t].question) toks.push_back(v.id(w));
  toks.push_back(Vocab::kSep);
  return toks;
}

void check_len(std::size_t len, std::size_t max_seq_len) {
  if (len > max_seq_len)
    throw CorpusError("sequence length " + std::to_string(len) + " exceeds max_seq_len " +
                      std::to_string(max_seq_len));
}

}  // namespace

EncodedPair encode_discriminative(const Corpus& corpus, const Dialog& d, std::size_t t,
                                  const Words& answer, std::size_t max_seq_len) {
  EncodedPair p;
  p.image_id = d.image_id;
  p.round_id = static_cast<int>(t);
  p.disc_tokens = context_tokens(corpus, d, t);
  p.answer_start = p.disc_tokens.size();
  for (const auto& w : answer) p.disc_tokens.push_back(corpus.vocab.id(w));
  p.answer_end = p.disc_tokens.size();
  p.disc_tokens.push_back(Vocab::kSep);
  check_len(p.disc_tokens.size(), max_seq_len);
  p.segment_ids.assign(p.disc_tokens.size(), 0);
  for (std::size_t i = p.answer_start; i < p.disc_tokens.size(); ++i) p.segment_ids[i] = 1;
  p.context_start = 0;
  return p;
}

EncodedPair encode_generative(const Corpus& corpus, const Dialog& d, std::size_t t,
                              GenMode mode, std::size_t max_seq_len) {
  EncodedPair p;
  p.image_id = d.image_id;
  p.round_id = static_cast<int>(t);
  p.gen_tokens = context_tokens(corpus, d, t);
  p.answer_start = p.gen_tokens.size();
  if (mode == GenMode::kTrain) {
    const Words& gt = d.rounds[t].gt_answer;
    for (std::size_t i = 0; i < gt.size(); ++i) p.gen_tokens.push_back(Vocab::kMask);
    p.answer_end = p.gen_tokens.size();
    p.gen_tokens.push_back(Vocab::kSep);
    p.gen_has_answer_span = true;
  } else {
    p.answer_end = p.answer_start;
    p.gen_has_answer_span = false;
  }
  check_len(p.gen_tokens.size(), max_seq_len);
  p.segment_ids.assign(p.gen_tokens.size(), 0);
  for (std::size_t i = p.answer_start; i < p.gen_tokens.size(); ++i) p.segment_ids[i] = 1;
  return p;
}

EncodedPair encode_pair(const Corpus& corpus, const Dialog& d, std::size_t t,
                        std::size_t max_seq_len) {
  EncodedPair p = encode_discriminative(corpus, d, t, d.rounds[t].gt_answer, max_seq_len);
  EncodedPair g = encode_generative(corpus, d, t, GenMode::kTrain, max_seq_len);
  p.gen_tokens = std::move(g.gen_tokens);
  p.gen_has_answer_span = true;
  return p;
}

// ---- masking ----

MaskingPlan apply_mlm_masks(const EncodedPair& pair, const ImageFeatures& features,
                            std::uint64_t seed, const MaskRates& rates) {
  MaskingPlan plan;
  Rng rng = Rng(seed).fork(0xA5A5);
  for (std::size_t i = 0; i < pair.disc_tokens.size(); ++i) {
    int id = pair.disc_tokens[i];
    if (id == Vocab::kCls || id == Vocab::kSep || id == Vocab::kPad) continue;
    if (rng.bernoulli(rates.text)) {
      plan.text_positions.push_back(i);
      plan.original_ids.push_back(id);
    }
  }
  for (std::size_t r = 0; r < features.n_regions; ++r)
    if (rng.bernoulli(rates.region)) plan.region_indices.push_back(r);
  return plan;
}

std::vector<int> masked_tokens(const EncodedPair& pair) {
  std::vector<int> toks = pair.disc_tokens;
  for (std::size_t p : pair.mlm_plan.text_positions) toks.at(p) = Vocab::kMask;
  return toks;
}

ImageFeatures masked_features(const ImageFeatures& features, const MaskingPlan& plan) {
  ImageFeatures out = features;
  for (std::size_t r : plan.region_indices) {
    if (r >= out.n_regions) throw CorpusError("masked region index out of range");
    std::fill(out.data.begin() + r * out.d_img, out.data.begin() + (r + 1) * out.d_img, 0.0f);
  }
  return out;
}

// ---- negative sampling ----

std::vector<NegativeSet> build_negative_sets(const std::vector<AnchorInfo>& batch,
                                             std::uint64_t seed, std::size_t n_neg,
                                             bool use_dense_filter) {
  std::vector<NegativeSet> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const AnchorInfo& a = batch[i];
    if (a.gt_index >= a.candidates.size())
      throw CorpusError("build_negative_sets: gt_index out of range");
    std::set<int> excluded_ids{a.candidates[a.gt_index]};
    if (use_dense_filter && a.dense_relevance) {
      const auto& rel = *a.dense_relevance;
      if (rel.size() != a.candidates.size())
        throw CorpusError("build_negative_sets: dense relevance length mismatch");
      for (std::size_t k = 0; k < rel.size(); ++k)
        if (rel[k] > 0) excluded_ids.insert(a.candidates[k]);
    }

    std::vector<std::pair<std::size_t, std::size_t>> pool;
    for (std::size_t j = 0; j < batch.size(); ++j) {
      for (std::size_t k = 0; k < batch[j].candidates.size(); ++k) {
        if (j == i && k == a.gt_index) continue;
        if (excluded_ids.count(batch[j].candidates[k])) continue;
        pool.emplace_back(j, k);
      }
    }
    if (pool.size() < n_neg)
      throw CorpusError("answer-negative pool for anchor " + std::to_string(i) + " has " +
                        std::to_string(pool.size()) + " entries, need " + std::to_string(n_neg));

    Rng rng = Rng(seed).fork(0xB0B0 + i);
    auto pick = rng.sample_without_replacement(pool.size(), n_neg);
    for (std::size_t p : pick) out[i].answer_negatives.push_back(pool[p]);

    std::vector<std::size_t> ctx_pool;
    for (std::size_t j = 0; j < batch.size(); ++j)
      if (j != i) ctx_pool.push_back(j);
    if (ctx_pool.empty())
      throw CorpusError("context-negative pool for anchor " + std::to_string(i) +
                        " is empty; batch must hold at least two rounds");
    // The context pool is at most batch-1 rounds, so the requested count is
    // capped at what the batch can supply.
    std::size_t n_ctx = std::min(n_neg, ctx_pool.size());
    auto cpick = rng.sample_without_replacement(ctx_pool.size(), n_ctx);
    for (std::size_t p : cpick) out[i].context_negatives.push_back(ctx_pool[p]);
  }
  return out;
}

// ---- synthetic generation ----

const std::vector<std::string>& color_words() {
  static const std::vector<std::string> v{"red", "blue", "green", "yellow", "black", "white"};
  return v;
}
const std::vector<std::string>& shape_words() {
  static const std::vector<std::string> v{"ball", "box", "cat", "dog", "car", "tree", "cup", "hat"};
  return v;
}
const std::vector<std::string>& count_words() {
  static const std::vector<std::string> v{"one", "two", "three", "four"};
  return v;
}

namespace {

struct SceneObject {
  std::size_t shape;
  std::size_t color;
  std::size_t count;
};

struct Scene {
  std::vector<SceneObject> objects;
};

Scene make_scene(Rng& rng, std::size_t n_regions) {
  Scene s;
  std::size_t n_obj = std::min<std::size_t>({3, shape_words().size(), std::max<std::size_t>(1, n_regions)});
  auto shapes = rng.sample_without_replacement(shape_words().size(), n_obj);
  for (std::size_t i = 0; i < n_obj; ++i) {
    SceneObject o;
    o.shape = shapes[i];
    o.color = rng.uniform_index(color_words().size());
    o.count = rng.uniform_index(count_words().size());
    s.objects.push_back(o);
  }
  return s;
}

std::size_t scene_dominant_color(const Scene& s, std::size_t n_regions) {
  std::vector<std::size_t> freq(color_words().size(), 0);
  for (std::size_t r = 0; r < n_regions; ++r)
    freq[s.objects[r % s.objects.size()].color]++;
  std::size_t best = 0;
  for (std::size_t c = 1; c < freq.size(); ++c)
    if (freq[c] > freq[best]) best = c;
  return best;
}

struct AttributeEmbeddings {
  std::vector<std::vector<float>> color, shape, count;
};

AttributeEmbeddings make_attr_embeddings(std::uint64_t seed, std::size_t d_img) {
  AttributeEmbeddings e;
  Rng rng = Rng(seed).fork(0xE1E1);
  auto draw = [&](std::size_t n) {
    std::vector<std::vector<float>> v(n, std::vector<float>(d_img));
    for (auto& row : v)
      for (auto& x : row) x = static_cast<float>(rng.normal());
    return v;
  };
  e.color = draw(color_words().size());
  e.shape = draw(shape_words().size());
  e.count = draw(count_words().size());
  return e;
}

// All global answer texts; includes every single-word attribute answer plus
// composite distractors so n_candidates can go up to 100.
std::vector<Words> make_global_answers() {
  std::vector<Words> answers;
  for (const auto& c : color_words()) answers.push_back({c});
  for (const auto& c : count_words()) answers.push_back({c});
  answers.push_back({"yes"});
  answers.push_back({"no"});
  for (const auto& c : color_words())
    for (const auto& s : shape_words()) answers.push_back({c, s});
  for (const auto& k : count_words())
    for (const auto& s : shape_words()) answers.push_back({k, s});
  return answers;
}

enum class QType { kColor, kCount, kPresence };

}  // namespace

std::vector<std::size_t> dominant_colors(const SyntheticConfig& cfg) {
  std::vector<std::size_t> out;
  for (std::size_t img = 0; img < cfg.n_images; ++img) {
    Rng rng = Rng(cfg.seed).fork(0x5C00 + img);
    Scene s = make_scene(rng, cfg.n_regions);
    out.push_back(scene_dominant_color(s, cfg.n_regions));
  }
  return out;
}

Corpus generate_synthetic_corpus(const SyntheticConfig& cfg) {
  if (cfg.n_images == 0 || cfg.rounds_per_dialog == 0 || cfg.n_candidates < 2 ||
      cfg.n_regions == 0 || cfg.d_img == 0)
    throw CorpusError("generate_synthetic_corpus: invalid counts");

  Corpus corpus;
  corpus.answers = make_global_answers();
  if (cfg.n_candidates > corpus.answers.size())
    throw CorpusError("n_candidates exceeds global answer list size " +
                      std::to_string(corpus.answers.size()));

  auto find_answer = [&](const Words& w) -> int {
    for (std::size_t i = 0; i < corpus.answers.size(); ++i)
      if (corpus.answers[i] == w) return static_cast<int>(i);
    throw CorpusError("answer text missing from global list");
  };

  AttributeEmbeddings emb = make_attr_embeddings(cfg.seed, cfg.d_img);

  std::set<std::size_t> color_ids, count_ids;
  for (const auto& c : color_words()) color_ids.insert(static_cast<std::size_t>(find_answer({c})));
  for (const auto& c : count_words()) count_ids.insert(static_cast<std::size_t>(find_answer({c})));

  for (std::size_t img = 0; img < cfg.n_images; ++img) {
    Rng scene_rng = Rng(cfg.seed).fork(0x5C00 + img);
    Scene scene = make_scene(scene_rng, cfg.n_regions);
    Rng rng = Rng(cfg.seed).fork(0xD1A0 + img);

    ImageFeatures feats;
    feats.image_id = static_cast<int>(img);
    feats.n_regions = cfg.n_regions;
    feats.d_img = cfg.d_img;
    feats.data.resize(cfg.n_regions * cfg.d_img);
    for (std::size_t r = 0; r < cfg.n_regions; ++r) {
      const SceneObject& o = scene.objects[r % scene.objects.size()];
      for (std::size_t j = 0; j < cfg.d_img; ++j)
        feats.data[r * cfg.d_img + j] =
            emb.shape[o.shape][j] + emb.color[o.color][j] + emb.count[o.count][j] +
            static_cast<float>(cfg.feature_noise * rng.normal());
    }
    corpus.features.push_back(std::move(feats));

    Dialog d;
    d.image_id = static_cast<int>(img);
    d.caption = {"a", "photo", "of", "a", color_words()[scene.objects[0].color],
                 shape_words()[scene.objects[0].shape]};
    if (scene.objects.size() > 1) {
      d.caption.push_back("and");
      d.caption.push_back("a");
      d.caption.push_back(color_words()[scene.objects[1].color]);
      d.caption.push_back(shape_words()[scene.objects[1].shape]);
    }

    for (std::size_t t = 0; t < cfg.rounds_per_dialog; ++t) {
      Round round;
      QType qt = static_cast<QType>(rng.uniform_index(3));
      const SceneObject& o = scene.objects[rng.uniform_index(scene.objects.size())];
      switch (qt) {
        case QType::kColor:
          round.question = {"what", "color", "is", "the", shape_words()[o.shape]};
          round.gt_answer = {color_words()[o.color]};
          break;
        case QType::kCount:
          round.question = {"how", "many", shape_words()[o.shape], "are", "there"};
          round.gt_answer = {count_words()[o.count]};
          break;
        case QType::kPresence: {
          std::size_t sh = rng.uniform_index(shape_words().size());
          round.question = {"is", "there", "a", shape_words()[sh]};
          bool present = false;
          for (const auto& ob : scene.objects) present = present || ob.shape == sh;
          round.gt_answer = {present ? "yes" : "no"};
          break;
        }
      }

      int gt_id = find_answer(round.gt_answer);
      std::vector<std::size_t> pool;
      for (std::size_t k = 0; k < corpus.answers.size(); ++k)
        if (static_cast<int>(k) != gt_id) pool.push_back(k);
      rng.shuffle(pool);
      round.candidates.assign(cfg.n_candidates, 0);
      std::size_t gt_pos = rng.uniform_index(cfg.n_candidates);
      std::size_t pi = 0;
      for (std::size_t k = 0; k < cfg.n_candidates; ++k)
        round.candidates[k] = (k == gt_pos) ? gt_id : static_cast<int>(pool[pi++]);
      round.gt_index = gt_pos;

      // Synthetic dense relevance: gt fully relevant, same-type single-word
      // answers partially relevant.
      const std::set<std::size_t>* type_set = nullptr;
      if (qt == QType::kColor) type_set = &color_ids;
      if (qt == QType::kCount) type_set = &count_ids;
      std::vector<double> rel(cfg.n_candidates, 0.0);
      rel[gt_pos] = 1.0;
      if (type_set) {
        for (std::size_t k = 0; k < cfg.n_candidates; ++k) {
          if (k == gt_pos) continue;
          if (type_set->count(static_cast<std::size_t>(round.candidates[k]))) rel[k] = 0.4;
        }
      }
      round.dense_relevance = std::move(rel);
      d.rounds.push_back(std::move(round));
    }
    corpus.dialogs.push_back(std::move(d));
  }

  // Vocabulary covers every word the generator can emit.
  std::vector<std::string> words{"a",    "photo", "of",  "and",  "what", "color",
                                 "is",   "the",   "how", "many", "are",  "there",
                                 "yes",  "no"};
  for (const auto& w : color_words()) words.push_back(w);
  for (const auto& w : shape_words()) words.push_back(w);
  for (const auto& w : count_words()) words.push_back(w);
  corpus.vocab = Vocab::with_words(words);
  return corpus;
}

// ---- file I/O ----

namespace {

std::string join_words(const Words& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? " " : "") + w[i];
  return s;
}

Words split_words(const std::string& s) {
  Words out;
  std::istringstream is(s);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CorpusError("cannot write " + path);
  os << content;
  if (!os) throw CorpusError("write failed for " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CorpusError("cannot read " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace

void save_dialogs_json(const Corpus& corpus, const std::string& path) {
  // Deduplicated layout: global question/answer string lists plus index records.
  std::vector<std::string> questions;
  std::map<std::string, int> qid;
  json dialogs = json::array();
  for (const auto& d : corpus.dialogs) {
    json jd;
    jd["image_id"] = d.image_id;
    jd["caption"] = join_words(d.caption);
    json rounds = json::array();
    for (const auto& r : d.rounds) {
      std::string q = join_words(r.question);
      auto it = qid.find(q);
      if (it == qid.end()) {
        it = qid.emplace(q, static_cast<int>(questions.size())).first;
        questions.push_back(q);
      }
      json jr;
      jr["question"] = it->second;
      jr["answer"] = r.candidates.at(r.gt_index);
      jr["answer_options"] = r.candidates;
      jr["gt_index"] = r.gt_index;
      rounds.push_back(std::move(jr));
    }
    jd["dialog"] = std::move(rounds);
    dialogs.push_back(std::move(jd));
  }
  json root;
  root["questions"] = questions;
  std::vector<std::string> answers;
  for (const auto& a : corpus.answers) answers.push_back(join_words(a));
  root["answers"] = answers;
  root["dialogs"] = std::move(dialogs);
  write_file(path, root.dump());
}

void save_features_blob(const std::vector<ImageFeatures>& features, const std::string& path) {
  json header;
  std::size_t offset = 0;  // byte offset into the blob
  for (const auto& f : features) {
    header[std::to_string(f.image_id)] = {offset, f.n_regions, f.d_img};
    offset += f.data.size() * sizeof(float);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CorpusError("cannot write " + path);
  os << header.dump() << "\n";
  for (const auto& f : features)
    os.write(reinterpret_cast<const char*>(f.data.data()),
             static_cast<std::streamsize>(f.data.size() * sizeof(float)));
  if (!os) throw CorpusError("write failed for " + path);
}

std::vector<ImageFeatures> load_features_blob(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CorpusError("cannot read " + path);
  std::string header_line;
  if (!std::getline(is, header_line)) throw CorpusError("features file missing header: " + path);
  json header = json::parse(header_line);
  std::streampos blob_start = is.tellg();
  std::vector<ImageFeatures> out;
  std::vector<std::pair<int, json>> entries;
  for (auto it = header.begin(); it != header.end(); ++it)
    entries.emplace_back(std::stoi(it.key()), it.value());
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [image_id, meta] : entries) {
    ImageFeatures f;
    f.image_id = image_id;
    std::size_t offset = meta.at(0).get<std::size_t>();
    f.n_regions = meta.at(1).get<std::size_t>();
    f.d_img = meta.at(2).get<std::size_t>();
    f.data.resize(f.n_regions * f.d_img);
    is.seekg(blob_start + static_cast<std::streamoff>(offset));
    is.read(reinterpret_cast<char*>(f.data.data()),
            static_cast<std::streamsize>(f.data.size() * sizeof(float)));
    if (!is) throw CorpusError("truncated features blob: " + path);
    for (float v : f.data)
      if (!std::isfinite(v)) throw CorpusError("non-finite region feature in " + path);
    out.push_back(std::move(f));
  }
  return out;
}

void save_vocab_json(const Vocab& vocab, const std::string& path) {
  json root;
  root["words"] = vocab.words();
  write_file(path, root.dump());
}

void save_dense_json(const Corpus& corpus, const std::string& path) {
  json root = json::array();
  for (const auto& d : corpus.dialogs)
    for (std::size_t t = 0; t < d.rounds.size(); ++t) {
      if (!d.rounds[t].dense_relevance) continue;
      json e;
      e["image_id"] = d.image_id;
      e["round_id"] = t;
      e["gt_relevance"] = *d.rounds[t].dense_relevance;
      root.push_back(std::move(e));
    }
  write_file(path, root.dump());
}

void load_dense_json(Corpus& corpus, const std::string& path) {
  json root = json::parse(read_file(path));
  for (auto& d : corpus.dialogs)
    for (auto& r : d.rounds) r.dense_relevance.reset();
  for (const auto& e : root) {
    int image_id = e.at("image_id").get<int>();
    std::size_t round_id = e.at("round_id").get<std::size_t>();
    for (auto& d : corpus.dialogs) {
      if (d.image_id != image_id) continue;
      if (round_id >= d.rounds.size())
        throw CorpusError("dense annotation round_id out of range for image " +
                          std::to_string(image_id));
      auto rel = e.at("gt_relevance").get<std::vector<double>>();
      auto& round = d.rounds[round_id];
      if (rel.size() != round.candidates.size())
        throw CorpusError("dense annotation length mismatch for image " +
                          std::to_string(image_id));
      if (rel[round.gt_index] <= 0)
        throw CorpusError("dense annotation gives gt zero relevance for image " +
                          std::to_string(image_id));
      round.dense_relevance = std::move(rel);
    }
  }
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_dialogs_json(corpus, dir + "/dialogs.json");
  save_features_blob(corpus.features, dir + "/features.bin");
  save_vocab_json(corpus.vocab, dir + "/vocab.json");
  save_dense_json(corpus, dir + "/dense.json");
}

Corpus load_corpus(const std::string& dir) {
  Corpus corpus;
  json vj = json::parse(read_file(dir + "/vocab.json"));
  auto words = vj.at("words").get<std::vector<std::string>>();
  if (words.size() < Vocab::kNumReserved) throw CorpusError("vocab file too small");
  corpus.vocab = Vocab::with_words(
      std::vector<std::string>(words.begin() + Vocab::kNumReserved, words.end()));
  if (corpus.vocab.words() != words) throw CorpusError("vocab file reserved ids corrupt");

  json root = json::parse(read_file(dir + "/dialogs.json"));
  auto questions = root.at("questions").get<std::vector<std::string>>();
  auto answers = root.at("answers").get<std::vector<std::string>>();
  for (const auto& a : answers) corpus.answers.push_back(split_words(a));
  for (const auto& jd : root.at("dialogs")) {
    Dialog d;
    d.image_id = jd.at("image_id").get<int>();
    d.caption = split_words(jd.at("caption").get<std::string>());
    for (const auto& jr : jd.at("dialog")) {
      Round r;
      r.question = split_words(questions.at(jr.at("question").get<std::size_t>()));
      r.candidates = jr.at("answer_options").get<std::vector<int>>();
      r.gt_index = jr.at("gt_index").get<std::size_t>();
      if (r.gt_index >= r.candidates.size())
        throw CorpusError("gt_index out of range in dialogs file");
      int gt = jr.at("answer").get<int>();
      if (r.candidates[r.gt_index] != gt)
        throw CorpusError("answer/gt_index mismatch in dialogs file");
      if (gt < 0 || static_cast<std::size_t>(gt) >= corpus.answers.size())
        throw CorpusError("answer index out of range in dialogs file");
      r.gt_answer = corpus.answers[static_cast<std::size_t>(gt)];
      d.rounds.push_back(std::move(r));
    }
    corpus.dialogs.push_back(std::move(d));
  }
  corpus.features = load_features_blob(dir + "/features.bin");
  if (std::filesystem::exists(dir + "/dense.json")) load_dense_json(corpus, dir + "/dense.json");
  return corpus;
}

}  // namespace utc
