#pragma once

// Two-stream co-attention encoder over a token sequence and an image-region
// sequence, a causal cross-attention decoder operating in a common space,
// and the prediction heads (binary answer head, masked-token recovery,
// masked-region regression).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "utc/corpus.hpp"
#include "utc/rng.hpp"
#include "utc/tensor.hpp"

namespace utc {

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  std::size_t hidden_size = 64;
  std::size_t n_encoder_layers = 2;
  std::size_t n_decoder_layers = 2;
  std::size_t n_heads = 4;
  std::size_t max_seq_len = 96;
  std::size_t vocab_size = 0;
  std::size_t d_img = 32;
  std::size_t n_regions = 9;
  double dropout = 0.1;
  std::size_t common_space_dim = 64;  // decoder width; may differ from hidden_size
  std::size_t ffn_mult = 4;
  std::size_t max_answer_len = 8;
  bool tied_mlm_head = true;
  bool bilinear_nsp_head = false;

  void validate() const {
    auto req = [](bool ok, const char* msg) {
      if (!ok) throw ModelError(std::string("model config: ") + msg);
    };
    req(hidden_size > 0 && n_encoder_layers > 0 && n_decoder_layers > 0 && n_heads > 0,
        "sizes must be positive");
    req(max_seq_len > 0 && vocab_size > 0 && d_img > 0 && n_regions > 0, "sizes must be positive");
    req(common_space_dim > 0 && ffn_mult > 0 && max_answer_len > 0, "sizes must be positive");
    req(hidden_size % n_heads == 0, "hidden_size must be divisible by n_heads");
    req(common_space_dim % n_heads == 0, "common_space_dim must be divisible by n_heads");
    req(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0,1)");
  }
};

// Closed-form parameter count; regression-tested against the live registry.
inline std::size_t expected_parameter_count(const ModelConfig& c) {
  std::size_t h = c.hidden_size, cs = c.common_space_dim, V = c.vocab_size;
  auto attn = [](std::size_t d) { return 4 * d * d + 4 * d + 2 * d; };
  auto ffn = [&](std::size_t d) {
    std::size_t f = c.ffn_mult * d;
    return d * f + f + f * d + d + 2 * d;
  };
  std::size_t n = 0;
  n += V * h + c.max_seq_len * h + 2 * h + 2 * h;                    // text embeddings + ln
  n += c.d_img * h + h + (c.n_regions + 1) * h + 2 * h;              // region proj + pos + ln
  n += c.n_encoder_layers * 2 * (2 * attn(h) + ffn(h));              // two streams, self+cross
  n += V * cs + (c.max_answer_len + 2) * cs + 2 * cs;                // decoder embeddings + ln
  n += c.n_decoder_layers * (2 * attn(cs) + ffn(cs));
  n += cs * V + V;                                                   // decoder output head
  n += h * h + h + 2 * h + (c.tied_mlm_head ? V : h * V + V);        // mlm transform + head
  n += h * c.d_img + c.d_img;                                        // region regression head
  if (c.bilinear_nsp_head) n += h * h;
  n += 2 * (h * cs + cs);                                            // common-space projections
  if (cs != h) n += cs * h + h;                                      // decoder->encoder map
  return n;
}

template <typename T>
struct EncoderOutput {
  Tensor<T> text_hidden;    // [seq, hidden]; row 0 is the [CLS] state
  Tensor<T> visual_hidden;  // [n_regions+1, hidden]; row 0 is the [IMG] state
  // Final-layer attention probabilities, kept for export/diagnostics.
  Tensor<T> text_self_attn, img_self_attn, text_cross_attn, img_cross_attn;
};

template <typename T>
struct MlmOutput {
  Tensor<T> text_logits;   // [masked tokens, vocab]; undefined if no text masks
  Tensor<T> region_recon;  // [masked regions, d_img]; undefined if no region masks
};

template <typename T>
struct CommonSpace {
  Tensor<T> text;    // [seq, common]
  Tensor<T> visual;  // [n_regions+1, common]
};

template <typename T>
struct DecoderOutput {
  Tensor<T> hidden;    // [prefix, common]
  Tensor<T> logits;    // [prefix, vocab]
  Tensor<T> embedded;  // [prefix, common] token+position sum, pre-norm
  Tensor<T> self_attn, cross_attn;
};

template <typename T>
struct ForwardOptions {
  bool train = false;
  Rng* rng = nullptr;  // required when train and dropout > 0
};

template <typename T>
class Model {
 public:
  using Params = std::map<std::string, Tensor<T>>;

  Model(ModelConfig config, std::uint64_t seed) : cfg_(std::move(config)) {
    cfg_.validate();
    Rng rng(seed);
    build_params(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  Params& parameters() { return params_; }
  const Params& parameters() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
  }

  Tensor<T>& param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ModelError("unknown parameter " + name);
    return it->second;
  }
  const Tensor<T>& param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ModelError("unknown parameter " + name);
    return it->second;
  }

  // Mean of the projected region vectors; the [IMG] slot's input embedding.
  Tensor<T> init_img_token(Graph<T>& g, const ImageFeatures& feats) {
    return g.reshape(g.mean_rows(project_regions(g, feats)), {cfg_.hidden_size});
  }

  EncoderOutput<T> encode(Graph<T>& g, const std::vector<int>& tokens,
                          const std::vector<int>& segments, const ImageFeatures& feats,
                          const ForwardOptions<T>& opts = {}) {
    if (tokens.empty() || tokens.size() > cfg_.max_seq_len)
      throw ModelError("encode: sequence length " + std::to_string(tokens.size()) +
                       " outside [1," + std::to_string(cfg_.max_seq_len) + "]");
    if (segments.size() != tokens.size())
      throw ModelError("encode: segment/token length mismatch");

    std::size_t s = tokens.size();
    auto keep_text = std::make_shared<std::vector<std::uint8_t>>(s);
    for (std::size_t i = 0; i < s; ++i)
      (*keep_text)[i] = tokens[i] != Vocab::kPad ? 1 : 0;

    Tensor<T> xt = g.embedding(param("emb.tok"), tokens);
    xt = g.add(xt, g.slice_rows(param("emb.pos"), 0, s));
    xt = g.add(xt, g.embedding(param("emb.seg"), segments));
    xt = g.layer_norm(xt, param("emb.ln.g"), param("emb.ln.b"), kEps);
    xt = maybe_drop(g, xt, opts);

    Tensor<T> proj = project_regions(g, feats);
    std::size_t nv = feats.n_regions + 1;
    Tensor<T> xi = g.concat_rows(g.reshape(g.mean_rows(proj), {1, cfg_.hidden_size}), proj);
    xi = g.add(xi, g.slice_rows(param("img.pos"), 0, nv));
    xi = g.layer_norm(xi, param("img.ln.g"), param("img.ln.b"), kEps);
    xi = maybe_drop(g, xi, opts);

    EncoderOutput<T> out;
    for (std::size_t l = 0; l < cfg_.n_encoder_layers; ++l) {
      std::string p = "enc" + std::to_string(l);
      auto ts = attention(g, p + ".txt.self", xt, xt, cfg_.hidden_size, keep_text, false, opts);
      auto is = attention(g, p + ".img.self", xi, xi, cfg_.hidden_size, nullptr, false, opts);
      Tensor<T> t1 = residual_ln(g, xt, ts.out, p + ".txt.ln1", opts);
      Tensor<T> i1 = residual_ln(g, xi, is.out, p + ".img.ln1", opts);
      auto tc = attention(g, p + ".txt.cross", t1, i1, cfg_.hidden_size, nullptr, false, opts);
      auto ic = attention(g, p + ".img.cross", i1, t1, cfg_.hidden_size, keep_text, false, opts);
      xt = residual_ln(g, t1, tc.out, p + ".txt.ln2", opts);
      xi = residual_ln(g, i1, ic.out, p + ".img.ln2", opts);
      xt = residual_ln(g, xt, ffn(g, p + ".txt.ffn", xt), p + ".txt.ln3", opts);
      xi = residual_ln(g, xi, ffn(g, p + ".img.ffn", xi), p + ".img.ln3", opts);
      if (l + 1 == cfg_.n_encoder_layers) {
        out.text_self_attn = ts.probs;
        out.img_self_attn = is.probs;
        out.text_cross_attn = tc.probs;
        out.img_cross_attn = ic.probs;
      }
    }
    out.text_hidden = xt;
    out.visual_hidden = xi;
    return out;
  }

  // logistic(dot(L_d, I_d)/sqrt(hidden)); bilinear variant uses a learned map.
  Tensor<T> nsp_logit(Graph<T>& g, const EncoderOutput<T>& enc) {
    Tensor<T> ld = g.reshape(g.slice_rows(enc.text_hidden, 0, 1), {cfg_.hidden_size});
    Tensor<T> id = g.reshape(g.slice_rows(enc.visual_hidden, 0, 1), {cfg_.hidden_size});
    if (cfg_.bilinear_nsp_head) {
      Tensor<T> mapped = g.reshape(
          g.matmul(g.reshape(ld, {1, cfg_.hidden_size}), param("nsp.w")), {cfg_.hidden_size});
      return g.dot(mapped, id);
    }
    return g.scale(g.dot(ld, id), T(1) / std::sqrt(static_cast<T>(cfg_.hidden_size)));
  }

  Tensor<T> nsp_score(Graph<T>& g, const EncoderOutput<T>& enc) {
    return g.sigmoid(nsp_logit(g, enc));
  }

  MlmOutput<T> mlm_logits(Graph<T>& g, const EncoderOutput<T>& enc, const MaskingPlan& plan) {
    MlmOutput<T> out;
    if (!plan.text_positions.empty()) {
      for (std::size_t p : plan.text_positions)
        if (p >= enc.text_hidden.dim(0)) throw ModelError("mlm_logits: position out of range");
      Tensor<T> hm = g.gather_rows(enc.text_hidden, plan.text_positions);
      Tensor<T> t = g.gelu(g.add_bias(g.matmul(hm, param("mlm.t.w")), param("mlm.t.b")));
      t = g.layer_norm(t, param("mlm.ln.g"), param("mlm.ln.b"), kEps);
      out.text_logits =
          cfg_.tied_mlm_head
              ? g.add_bias(g.matmul(t, g.transpose(param("emb.tok"))), param("mlm.out.b"))
              : g.add_bias(g.matmul(t, param("mlm.out.w")), param("mlm.out.b"));
    }
    if (!plan.region_indices.empty()) {
      std::vector<std::size_t> rows;
      for (std::size_t r : plan.region_indices) {
        if (r + 1 >= enc.visual_hidden.dim(0)) throw ModelError("mlm_logits: region out of range");
        rows.push_back(r + 1);
      }
      Tensor<T> hv = g.gather_rows(enc.visual_hidden, rows);
      out.region_recon = g.add_bias(g.matmul(hv, param("mlm.v.w")), param("mlm.v.b"));
    }
    return out;
  }

  CommonSpace<T> project_common_space(Graph<T>& g, const EncoderOutput<T>& enc) {
    CommonSpace<T> out;
    out.text = g.add_bias(g.matmul(enc.text_hidden, param("common.txt.w")), param("common.txt.b"));
    out.visual =
        g.add_bias(g.matmul(enc.visual_hidden, param("common.img.w")), param("common.img.b"));
    return out;
  }

  // Causal self-attention over the answer prefix, cross-attention to the
  // concatenated common-space context. Position p's logits depend only on
  // prefix[0..p] and the context.
  DecoderOutput<T> decode(Graph<T>& g, const CommonSpace<T>& ctx, const std::vector<int>& prefix,
                          const ForwardOptions<T>& opts = {},
                          std::shared_ptr<const std::vector<std::uint8_t>> ctx_keep = nullptr) {
    if (prefix.empty() || prefix.size() > cfg_.max_answer_len + 2)
      throw ModelError("decode: prefix length " + std::to_string(prefix.size()) + " outside [1," +
                       std::to_string(cfg_.max_answer_len + 2) + "]");
    std::size_t p = prefix.size(), cs = cfg_.common_space_dim;
    DecoderOutput<T> out;
    out.embedded = g.add(g.embedding(param("dec.emb.tok"), prefix),
                         g.slice_rows(param("dec.emb.pos"), 0, p));
    Tensor<T> x = g.layer_norm(out.embedded, param("dec.emb.ln.g"), param("dec.emb.ln.b"), kEps);
    x = maybe_drop(g, x, opts);

    Tensor<T> mem = g.concat_rows(ctx.text, ctx.visual);
    std::shared_ptr<std::vector<std::uint8_t>> mem_keep;
    if (ctx_keep) {
      if (ctx_keep->size() != mem.dim(0)) throw ModelError("decode: context mask length mismatch");
      mem_keep = std::make_shared<std::vector<std::uint8_t>>(*ctx_keep);
    }
    auto causal = std::make_shared<std::vector<std::uint8_t>>(p * p, 0);
    for (std::size_t q = 0; q < p; ++q)
      for (std::size_t k = 0; k <= q; ++k) (*causal)[q * p + k] = 1;

    for (std::size_t l = 0; l < cfg_.n_decoder_layers; ++l) {
      std::string pre = "dec" + std::to_string(l);
      auto sa = attention(g, pre + ".self", x, x, cs, causal, true, opts);
      x = residual_ln(g, x, sa.out, pre + ".ln1", opts);
      auto ca = attention(g, pre + ".cross", x, mem, cs, mem_keep, false, opts);
      x = residual_ln(g, x, ca.out, pre + ".ln2", opts);
      x = residual_ln(g, x, ffn(g, pre + ".ffn", x), pre + ".ln3", opts);
      if (l + 1 == cfg_.n_decoder_layers) {
        out.self_attn = sa.probs;
        out.cross_attn = ca.probs;
      }
    }
    out.hidden = x;
    out.logits = g.add_bias(g.matmul(x, param("dec.out.w")), param("dec.out.b"));
    return out;
  }

  // Maps decoder-space vectors into encoder space for pooled comparisons;
  // identity when the widths already agree.
  Tensor<T> map_decoder_to_encoder_space(Graph<T>& g, Tensor<T> v) {
    if (cfg_.common_space_dim == cfg_.hidden_size) return v;
    bool vec = v.rank() == 1;
    if (vec) v = g.reshape(v, {1, cfg_.common_space_dim});
    Tensor<T> out = g.add_bias(g.matmul(v, param("contrast.proj.w")), param("contrast.proj.b"));
    return vec ? g.reshape(out, {cfg_.hidden_size}) : out;
  }

 private:
  static constexpr T kEps = static_cast<T>(1e-5);

  ModelConfig cfg_;
  Params params_;

  void add_weight(Rng& rng, const std::string& name, Shape shape) {
    params_.emplace(name, Tensor<T>::randn(std::move(shape), rng, static_cast<T>(0.02), true));
  }
  void add_const(const std::string& name, Shape shape, T value) {
    Tensor<T> t = Tensor<T>::zeros(std::move(shape), true);
    std::fill(t.data().begin(), t.data().end(), value);
    params_.emplace(name, t);
  }
  void add_ln(const std::string& name, std::size_t d) {
    add_const(name + ".g", {d}, T(1));
    add_const(name + ".b", {d}, T(0));
  }
  void add_attn(Rng& rng, const std::string& name, std::size_t d) {
    for (const char* w : {".wq", ".wk", ".wv", ".wo"}) add_weight(rng, name + w, {d, d});
    for (const char* b : {".bq", ".bk", ".bv", ".bo"}) add_const(name + b, {d}, T(0));
  }
  void add_ffn(Rng& rng, const std::string& name, std::size_t d) {
    std::size_t f = cfg_.ffn_mult * d;
    add_weight(rng, name + ".w1", {d, f});
    add_const(name + ".b1", {f}, T(0));
    add_weight(rng, name + ".w2", {f, d});
    add_const(name + ".b2", {d}, T(0));
  }

  void build_params(Rng& rng) {
    std::size_t h = cfg_.hidden_size, cs = cfg_.common_space_dim, V = cfg_.vocab_size;
    add_weight(rng, "emb.tok", {V, h});
    add_weight(rng, "emb.pos", {cfg_.max_seq_len, h});
    add_weight(rng, "emb.seg", {2, h});
    add_ln("emb.ln", h);
    add_weight(rng, "img.proj.w", {cfg_.d_img, h});
    add_const("img.proj.b", {h}, T(0));
    add_weight(rng, "img.pos", {cfg_.n_regions + 1, h});
    add_ln("img.ln", h);
    for (std::size_t l = 0; l < cfg_.n_encoder_layers; ++l) {
      std::string p = "enc" + std::to_string(l);
      for (const char* st : {".txt", ".img"}) {
        add_attn(rng, p + st + ".self", h);
        add_attn(rng, p + st + ".cross", h);
        add_ffn(rng, p + st + ".ffn", h);
        add_ln(p + st + ".ln1", h);
        add_ln(p + st + ".ln2", h);
        add_ln(p + st + ".ln3", h);
      }
    }
    add_weight(rng, "dec.emb.tok", {V, cs});
    add_weight(rng, "dec.emb.pos", {cfg_.max_answer_len + 2, cs});
    add_ln("dec.emb.ln", cs);
    for (std::size_t l = 0; l < cfg_.n_decoder_layers; ++l) {
      std::string p = "dec" + std::to_string(l);
      add_attn(rng, p + ".self", cs);
      add_attn(rng, p + ".cross", cs);
      add_ffn(rng, p + ".ffn", cs);
      add_ln(p + ".ln1", cs);
      add_ln(p + ".ln2", cs);
      add_ln(p + ".ln3", cs);
    }
    add_weight(rng, "dec.out.w", {cs, V});
    add_const("dec.out.b", {V}, T(0));
    add_weight(rng, "mlm.t.w", {h, h});
    add_const("mlm.t.b", {h}, T(0));
    add_ln("mlm.ln", h);
    if (!cfg_.tied_mlm_head) add_weight(rng, "mlm.out.w", {h, V});
    add_const("mlm.out.b", {V}, T(0));
    add_weight(rng, "mlm.v.w", {h, cfg_.d_img});
    add_const("mlm.v.b", {cfg_.d_img}, T(0));
    if (cfg_.bilinear_nsp_head) add_weight(rng, "nsp.w", {h, h});
    add_weight(rng, "common.txt.w", {h, cs});
    add_const("common.txt.b", {cs}, T(0));
    add_weight(rng, "common.img.w", {h, cs});
    add_const("common.img.b", {cs}, T(0));
    if (cs != h) {
      add_weight(rng, "contrast.proj.w", {cs, h});
      add_const("contrast.proj.b", {h}, T(0));
    }
  }

  Tensor<T> project_regions(Graph<T>& g, const ImageFeatures& feats) {
    if (feats.n_regions == 0) throw ModelError("image features: empty region list");
    if (feats.d_img != cfg_.d_img || feats.n_regions > cfg_.n_regions)
      throw ModelError("image features: dimensions do not match model config");
    std::vector<T> raw(feats.data.begin(), feats.data.end());
    Tensor<T> x = Tensor<T>::from({feats.n_regions, cfg_.d_img}, std::move(raw));
    return g.add_bias(g.matmul(x, param("img.proj.w")), param("img.proj.b"));
  }

  Tensor<T> maybe_drop(Graph<T>& g, Tensor<T> x, const ForwardOptions<T>& opts) {
    if (!opts.train || cfg_.dropout <= 0.0) return x;
    if (!opts.rng) throw ModelError("dropout requires an rng in training mode");
    return g.dropout(x, static_cast<T>(cfg_.dropout), *opts.rng);
  }

  Tensor<T> residual_ln(Graph<T>& g, Tensor<T> x, Tensor<T> sub, const std::string& ln,
                        const ForwardOptions<T>& opts) {
    return g.layer_norm(g.add(x, maybe_drop(g, sub, opts)), param(ln + ".g"), param(ln + ".b"),
                        kEps);
  }

  Tensor<T> ffn(Graph<T>& g, const std::string& name, Tensor<T> x) {
    Tensor<T> hdn = g.gelu(g.add_bias(g.matmul(x, param(name + ".w1")), param(name + ".b1")));
    return g.add_bias(g.matmul(hdn, param(name + ".w2")), param(name + ".b2"));
  }

  struct Attn {
    Tensor<T> out;    // [sq, d]
    Tensor<T> probs;  // [heads, sq, sk]
  };

  // keep masks key columns (size sk) or full (q,k) grids (size sq*sk, used
  // for causal masking); masked columns get exactly zero weight and grad.
  Attn attention(Graph<T>& g, const std::string& name, Tensor<T> q_in, Tensor<T> kv_in,
                 std::size_t d, std::shared_ptr<const std::vector<std::uint8_t>> keep, bool,
                 const ForwardOptions<T>& opts) {
    std::size_t sq = q_in.dim(0), sk = kv_in.dim(0);
    std::size_t heads = cfg_.n_heads, dh = d / heads;
    auto split = [&](Tensor<T> x, std::size_t s) {
      return g.permute(g.reshape(x, {s, heads, dh}), {1, 0, 2});
    };
    Tensor<T> q = split(g.add_bias(g.matmul(q_in, param(name + ".wq")), param(name + ".bq")), sq);
    Tensor<T> k = split(g.add_bias(g.matmul(kv_in, param(name + ".wk")), param(name + ".bk")), sk);
    Tensor<T> v = split(g.add_bias(g.matmul(kv_in, param(name + ".wv")), param(name + ".bv")), sk);
    Tensor<T> scores =
        g.scale(g.bmm(q, g.permute(k, {0, 2, 1})), T(1) / std::sqrt(static_cast<T>(dh)));
    Tensor<T> probs = keep ? g.masked_softmax_last(scores, keep) : g.softmax(scores, 2);
    Tensor<T> ctx = g.reshape(g.permute(g.bmm(probs, v), {1, 0, 2}), {sq, d});
    Attn a;
    a.out = g.add_bias(g.matmul(ctx, param(name + ".wo")), param(name + ".bo"));
    a.probs = probs;
    return a;
  }
};

}  // namespace utc
