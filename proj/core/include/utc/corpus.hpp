#pragma once

// Synthetic visual-dialog corpus: generation, tokenization, sequence
// assembly for the discriminative and generative settings, masking plans
// and in-batch negative sampling, plus the on-disk formats.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace utc {

struct CorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Words = std::vector<std::string>;

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kSep = 2;
  static constexpr int kMask = 3;
  static constexpr int kImg = 4;
  static constexpr int kUnk = 5;
  static constexpr int kNumReserved = 6;

  // Builds [PAD],[CLS],[SEP],[MASK],[PAD? no] reserved ids followed by words.
  static Vocab with_words(const std::vector<std::string>& words);

  int id(const std::string& word) const;          // throws on OOV
  int id_or_unk(const std::string& word) const;   // maps OOV to [UNK]
  const std::string& word(int id) const;
  bool contains(const std::string& word) const { return ids_.count(word) > 0; }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  std::vector<int> encode(const Words& w) const;
  Words decode(const std::vector<int>& ids) const;

  static bool is_reserved(int id) { return id >= 0 && id < kNumReserved; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

struct Round {
  Words question;
  Words gt_answer;
  std::vector<int> candidates;  // indices into the corpus' global answer list
  std::size_t gt_index = 0;     // index into candidates
  std::optional<std::vector<double>> dense_relevance;
};

struct Dialog {
  int image_id = 0;
  Words caption;
  std::vector<Round> rounds;
};

struct ImageFeatures {
  int image_id = 0;
  std::size_t n_regions = 0;
  std::size_t d_img = 0;
  std::vector<float> data;  // row-major, n_regions x d_img

  const float* region(std::size_t r) const { return data.data() + r * d_img; }
};

struct Corpus {
  Vocab vocab;
  std::vector<Words> answers;  // global answer texts
  std::vector<Dialog> dialogs;
  std::vector<ImageFeatures> features;

  const ImageFeatures& features_for(int image_id) const;
  const Words& candidate_text(const Round& r, std::size_t k) const {
    return answers.at(static_cast<std::size_t>(r.candidates.at(k)));
  }
};

struct MaskingPlan {
  std::vector<std::size_t> text_positions;  // positions in disc_tokens
  std::vector<int> original_ids;            // same length as text_positions
  std::vector<std::size_t> region_indices;

  bool empty() const { return text_positions.empty() && region_indices.empty(); }
};

// The two token sequences of one training example. The generative side is
// the same layout with the answer span fully replaced by [MASK] (train
// mode) or cut off entirely (infer mode).
struct EncodedPair {
  std::vector<int> disc_tokens;
  std::vector<int> gen_tokens;
  std::vector<int> segment_ids;     // per disc position: 0 context, 1 answer
  std::size_t answer_start = 0;     // [answer_start, answer_end) in disc_tokens
  std::size_t answer_end = 0;
  std::size_t context_start = 0;    // [context_start, answer_start)
  bool gen_has_answer_span = true;  // false for infer-mode gen sequences
  MaskingPlan mlm_plan;
  int image_id = 0;
  int round_id = 0;
};

enum class GenMode { kTrain, kInfer };

// Eq.-1 layout: [CLS] C_ap [SEP] Q_1 [SEP] A_1 [SEP] ... Q_t [SEP] answer [SEP].
// Errors (no silent truncation) if the sequence exceeds max_seq_len.
EncodedPair encode_discriminative(const Corpus& corpus, const Dialog& d, std::size_t t,
                                  const Words& answer, std::size_t max_seq_len);

// Same layout with the gt answer fully masked (train) or absent (infer).
EncodedPair encode_generative(const Corpus& corpus, const Dialog& d, std::size_t t,
                              GenMode mode, std::size_t max_seq_len);

// Both sides at once with the gt answer appended on the disc side.
EncodedPair encode_pair(const Corpus& corpus, const Dialog& d, std::size_t t,
                        std::size_t max_seq_len);

struct MaskRates {
  double text = 0.10;
  double region = 0.15;
};

// Independent Bernoulli masking over eligible disc-side text tokens and
// region slots. Reserved tokens ([CLS]/[SEP]/[PAD]) are never masked.
MaskingPlan apply_mlm_masks(const EncodedPair& pair, const ImageFeatures& features,
                            std::uint64_t seed, const MaskRates& rates = {});

// disc_tokens with the plan's text positions replaced by [MASK].
std::vector<int> masked_tokens(const EncodedPair& pair);
// Copy of features with the plan's region rows zeroed.
ImageFeatures masked_features(const ImageFeatures& features, const MaskingPlan& plan);

// One batch slot for negative sampling.
struct AnchorInfo {
  std::vector<int> candidates;  // global answer ids
  std::size_t gt_index = 0;
  std::optional<std::vector<double>> dense_relevance;
};

struct NegativeSet {
  // (batch slot, candidate index within that slot) per answer negative.
  std::vector<std::pair<std::size_t, std::size_t>> answer_negatives;
  std::vector<std::size_t> context_negatives;  // batch slots
};

// Per-anchor negative sets: answer negatives from the union of (own
// candidates minus gt) and all candidates of other batch slots; context
// negatives from all other slots. With dense filtering, candidates whose
// relevance for the anchor's round is > 0 are excluded from the answer
// pool. Deterministic in seed; errors if a pool is smaller than n_neg.
std::vector<NegativeSet> build_negative_sets(const std::vector<AnchorInfo>& batch,
                                             std::uint64_t seed, std::size_t n_neg,
                                             bool use_dense_filter);

struct SyntheticConfig {
  std::uint64_t seed = 0;
  std::size_t n_images = 10;
  std::size_t rounds_per_dialog = 3;
  std::size_t n_candidates = 100;
  std::size_t n_regions = 9;
  std::size_t d_img = 32;
  double feature_noise = 0.1;
};

// Latent attribute scenes: each image holds objects with shape/color/count;
// region features are seeded attribute embeddings plus noise; questions are
// templated over attributes and gt answers read off the scene.
Corpus generate_synthetic_corpus(const SyntheticConfig& cfg);

// Scene attribute helpers used by the generator and by learnability probes.
const std::vector<std::string>& color_words();
const std::vector<std::string>& shape_words();
const std::vector<std::string>& count_words();

// Dominant color index of an image's latent scene (most frequent region
// color, ties to the lowest color index). Regenerated from the corpus seed.
std::vector<std::size_t> dominant_colors(const SyntheticConfig& cfg);

// ---- on-disk formats ----

void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

void save_dialogs_json(const Corpus& corpus, const std::string& path);
void save_features_blob(const std::vector<ImageFeatures>& features, const std::string& path);
void save_vocab_json(const Vocab& vocab, const std::string& path);
void save_dense_json(const Corpus& corpus, const std::string& path);

std::vector<ImageFeatures> load_features_blob(const std::string& path);

// Loads {"image_id","round_id","gt_relevance"} records into matching rounds.
void load_dense_json(Corpus& corpus, const std::string& path);

}  // namespace utc
