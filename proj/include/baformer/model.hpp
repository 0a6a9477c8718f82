#pragma once

// BaFormer forward pass: a dilated-convolution frame decoder producing frame
// embeddings plus a feature pyramid, a stack of mask-attention Transformer
// layers over learned instance queries, and shared output heads yielding
// per-layer class, mask, and boundary probabilities.

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "baformer/numeric.hpp"
#include "baformer/optim.hpp"
#include "baformer/rng.hpp"
#include "baformer/tape.hpp"

namespace baformer {

enum class FeatureConnection { multi_level, single_level };
enum class GlobalQueryMode { mlp_aggregate, class_token, mean_pool };

inline const char* to_string(FeatureConnection c) {
  return c == FeatureConnection::multi_level ? "multi_level" : "single_level";
}

inline const char* to_string(GlobalQueryMode m) {
  switch (m) {
    case GlobalQueryMode::mlp_aggregate: return "mlp_aggregate";
    case GlobalQueryMode::class_token: return "class_token";
    case GlobalQueryMode::mean_pool: return "mean_pool";
  }
  return "?";
}

struct ModelConfig {
  int queries = 20;        // M
  int classes = 5;         // K; the class head emits K+1 logits (no-action last)
  int hidden = 64;         // C
  int input_dim = 32;      // C0
  int frame_layers = 6;    // dilated residual blocks, dilation 2^l
  int decoder_layers = 5;  // Transformer decoder depth
  int heads = 2;
  int ffn_hidden = 128;
  FeatureConnection feature_connection = FeatureConnection::multi_level;
  GlobalQueryMode global_query = GlobalQueryMode::mlp_aggregate;

  void validate() const {
    if (queries < 1) throw std::invalid_argument("model: queries must be >= 1");
    if (classes < 1) throw std::invalid_argument("model: classes must be >= 1");
    if (hidden < 1) throw std::invalid_argument("model: hidden must be >= 1");
    if (input_dim < 1) throw std::invalid_argument("model: input_dim must be >= 1");
    if (frame_layers < 1) throw std::invalid_argument("model: frame_layers must be >= 1");
    if (decoder_layers < 1) throw std::invalid_argument("model: decoder_layers must be >= 1");
    if (decoder_layers > frame_layers)
      throw std::invalid_argument("model: decoder_layers must be <= frame_layers");
    if (heads < 1 || hidden % heads != 0)
      throw std::invalid_argument("model: heads must divide hidden (" + std::to_string(heads) +
                                  " vs " + std::to_string(hidden) + ")");
    if (ffn_hidden < 1) throw std::invalid_argument("model: ffn_hidden must be >= 1");
  }
};

// Per-layer predictions, final layer last.
struct ModelOutputs {
  std::vector<Matrix> class_probs;     // M x (K+1), rows sum to 1
  std::vector<Matrix> mask_probs;      // M x T, entries in (0,1)
  std::vector<Matrix> boundary_probs;  // 1 x T, entries in (0,1)

  int layers() const { return static_cast<int>(class_probs.size()); }
  const Matrix& final_class() const { return class_probs.back(); }
  const Matrix& final_mask() const { return mask_probs.back(); }
  const Matrix& final_boundary() const { return boundary_probs.back(); }
};

class Model {
 public:
  using Var = Tape::Var;
  using Binding = std::vector<Var>;  // leaf per parameter, parameter order

  struct ForwardResult {
    Binding params;
    Var frame_embed = -1;                // F_d, T x C
    std::vector<Var> class_probs;        // per layer
    std::vector<Var> mask_probs;         // per layer, M x T
    std::vector<Var> boundary_probs;     // per layer, 1 x T
  };

  Model(ModelConfig cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int C = cfg_.hidden;
    const int K1 = cfg_.classes + 1;

    query_embed_ = gaussian_param("queries.embed", cfg_.queries, C, rng);
    if (cfg_.global_query == GlobalQueryMode::class_token)
      class_token_ = gaussian_param("queries.class_token", 1, C, rng);

    frame_in_ = linear_param("frame.in_proj", cfg_.input_dim, C, rng);
    frame_blocks_.resize(cfg_.frame_layers);
    for (int l = 0; l < cfg_.frame_layers; ++l) {
      const std::string p = "frame.block" + std::to_string(l);
      FrameBlockIdx& blk = frame_blocks_[l];
      blk.conv_left = gaussian_param(p + ".conv.w_left", C, C, rng);
      blk.conv_center = gaussian_param(p + ".conv.w_center", C, C, rng);
      blk.conv_right = gaussian_param(p + ".conv.w_right", C, C, rng);
      blk.conv_bias = zeros_param(p + ".conv.b", 1, C);
      blk.pw = linear_param(p + ".pw", C, C, rng);
      blk.norm = norm_param(p + ".norm", C);
    }
    frame_out_ = linear_param("frame.out", C, C, rng);

    dec_layers_.resize(cfg_.decoder_layers);
    for (int i = 0; i < cfg_.decoder_layers; ++i) {
      const std::string p = "dec" + std::to_string(i);
      DecLayerIdx& d = dec_layers_[i];
      d.ma = attn_param(p + ".ma", C, rng);
      d.sa = attn_param(p + ".sa", C, rng);
      d.ffn1 = linear_param(p + ".ffn1", C, cfg_.ffn_hidden, rng);
      d.ffn2 = linear_param(p + ".ffn2", cfg_.ffn_hidden, C, rng);
      d.norm1 = norm_param(p + ".norm1", C);
      d.norm2 = norm_param(p + ".norm2", C);
      d.norm3 = norm_param(p + ".norm3", C);
    }

    head_class_ = linear_param("head.class", C, K1, rng);
    head_mask_[0] = linear_param("head.mask.l1", C, C, rng);
    head_mask_[1] = linear_param("head.mask.l2", C, C, rng);
    head_mask_[2] = linear_param("head.mask.l3", C, C, rng);
    if (cfg_.global_query == GlobalQueryMode::mlp_aggregate) {
      head_boundary_[0] = linear_param("head.boundary.l1", C, C, rng);
      head_boundary_[1] = linear_param("head.boundary.l2", C, C, rng);
      head_boundary_[2] = linear_param("head.boundary.l3", C, C, rng);
      boundary_agg_ = linear_param("head.boundary.agg", cfg_.queries, 1, rng);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  // Number of query rows flowing through the decoder (M, +1 in token mode).
  int decoder_rows() const {
    return cfg_.queries + (cfg_.global_query == GlobalQueryMode::class_token ? 1 : 0);
  }

  Binding bind(Tape& t) const {
    Binding b;
    b.reserve(params_.size());
    for (const Parameter& p : params_) b.push_back(t.leaf(p.value, true));
    return b;
  }

  struct FrameDecodeResult {
    Var frame_embed = -1;       // F_d
    std::vector<Var> pyramid;   // f_i per decoder layer
    std::vector<Var> blocks;    // raw block outputs, for probes
  };

  // Input projection, dilated residual blocks (dilation doubling per block),
  // and the output linear layer. The pyramid maps the deepest decoder_layers
  // blocks onto decoder layers; single_level aliases the last block.
  FrameDecodeResult frame_decode(Tape& t, const Binding& b, const Matrix& features) const {
    if (features.cols != cfg_.input_dim)
      throw std::invalid_argument("frame_decode: features are " + features.shape_str() +
                                  ", expected C0=" + std::to_string(cfg_.input_dim));
    if (features.rows < 1) throw std::invalid_argument("frame_decode: empty sequence");
    FrameDecodeResult out;
    Var x = linear(t, b, frame_in_, t.constant(features));
    for (int l = 0; l < cfg_.frame_layers; ++l) {
      const FrameBlockIdx& blk = frame_blocks_[l];
      const int d = 1 << l;
      Var h = t.add(t.matmul(t.time_shift(x, d), b[blk.conv_left.w]),
                    t.matmul(x, b[blk.conv_center.w]));
      h = t.add(h, t.matmul(t.time_shift(x, -d), b[blk.conv_right.w]));
      h = t.add_rowvec(h, b[blk.conv_bias]);
      h = t.relu(h);
      h = linear(t, b, blk.pw, h);
      x = norm(t, b, blk.norm, t.add(x, h));
      out.blocks.push_back(x);
    }
    out.frame_embed = linear(t, b, frame_out_, x);
    out.pyramid.resize(cfg_.decoder_layers);
    for (int i = 0; i < cfg_.decoder_layers; ++i) {
      const int block = cfg_.feature_connection == FeatureConnection::multi_level
                            ? i + cfg_.frame_layers - cfg_.decoder_layers
                            : cfg_.frame_layers - 1;
      out.pyramid[i] = out.blocks[block];
    }
    return out;
  }

  // Soft mask attention: logits are the elementwise product of the previous
  // mask probabilities (scaled by 1/sqrt(C)) with per-head query-key scores;
  // the output linear plus the residual onto the incoming queries.
  Var mask_attention(Tape& t, const Binding& b, int layer, Var q_prev, Var frame_feat,
                     Var mask_prev) const {
    check_attention_shapes(t, q_prev, frame_feat, mask_prev);
    const AttnIdx& a = dec_layers_[layer].ma;
    Var qh = linear(t, b, a.q, q_prev);
    Var kh = linear(t, b, a.k, frame_feat);
    Var vh = linear(t, b, a.v, frame_feat);
    Var mod = t.scale(mask_prev, 1.0 / std::sqrt(static_cast<double>(cfg_.hidden)));
    std::vector<Var> heads;
    const int dh = cfg_.hidden / cfg_.heads;
    for (int h = 0; h < cfg_.heads; ++h) {
      Var qs = t.col_slice(qh, h * dh, (h + 1) * dh);
      Var ks = t.col_slice(kh, h * dh, (h + 1) * dh);
      Var vs = t.col_slice(vh, h * dh, (h + 1) * dh);
      Var logits = t.hadamard(mod, t.matmul(qs, t.transpose(ks)));
      heads.push_back(t.matmul(t.row_softmax(logits), vs));
    }
    Var o = linear(t, b, a.o, t.concat_cols(heads));
    return t.add(o, q_prev);
  }

  // One Transformer layer: mask attention, self-attention, feed-forward,
  // each followed by layer normalization (residuals included).
  Var decoder_layer(Tape& t, const Binding& b, int layer, Var q_prev, Var frame_feat,
                    Var mask_prev) const {
    const DecLayerIdx& d = dec_layers_[layer];
    Var x = norm(t, b, d.norm1, mask_attention(t, b, layer, q_prev, frame_feat, mask_prev));
    x = norm(t, b, d.norm2, t.add(x, self_attention(t, b, layer, x)));
    Var ff = linear(t, b, d.ffn2, t.relu(linear(t, b, d.ffn1, x)));
    return norm(t, b, d.norm3, t.add(x, ff));
  }

  struct HeadResult {
    Var class_probs = -1;     // M x (K+1)
    Var mask_probs = -1;      // M x T (reported)
    Var mask_probs_full = -1; // decoder_rows x T (attention input for the next layer)
    Var boundary_probs = -1;  // 1 x T
  };

  HeadResult output_heads(Tape& t, const Binding& b, Var q_full, Var frame_embed) const {
    const int M = cfg_.queries;
    const bool token = cfg_.global_query == GlobalQueryMode::class_token;
    Var q_inst = token ? t.row_slice(q_full, 0, M) : q_full;

    HeadResult r;
    r.class_probs = t.row_softmax(linear(t, b, head_class_, q_inst));
    Var embed_full = mlp3(t, b, head_mask_, q_full);
    r.mask_probs_full = t.sigmoid(t.matmul(embed_full, t.transpose(frame_embed)));
    r.mask_probs = token ? t.row_slice(r.mask_probs_full, 0, M) : r.mask_probs_full;

    Var global_q;  // 1 x C
    switch (cfg_.global_query) {
      case GlobalQueryMode::mlp_aggregate: {
        Var g = mlp3(t, b, head_boundary_, q_inst);  // M x C
        Var agg = t.add_rowvec(t.matmul(t.transpose(g), b[boundary_agg_.w]),
                               b[boundary_agg_.b]);  // C x 1
        global_q = t.transpose(agg);
        break;
      }
      case GlobalQueryMode::class_token:
        global_q = t.row_slice(q_full, M, M + 1);
        break;
      case GlobalQueryMode::mean_pool:
        global_q = t.matmul(t.constant(Matrix::full(1, M, 1.0 / M)), q_inst);
        break;
    }
    r.boundary_probs = t.sigmoid(t.matmul(global_q, t.transpose(frame_embed)));
    return r;
  }

  // Full pass: frame decoding, decoder_layers mask-attention layers seeded
  // with the mask head applied to the initial queries, heads at every layer.
  ForwardResult forward(Tape& t, const Matrix& features) const {
    ForwardResult fr;
    fr.params = bind(t);
    FrameDecodeResult fd = frame_decode(t, fr.params, features);
    fr.frame_embed = fd.frame_embed;

    Var q = fr.params[query_embed_];
    if (cfg_.global_query == GlobalQueryMode::class_token)
      q = t.concat_rows({q, fr.params[class_token_]});

    Var embed0 = mlp3(t, fr.params, head_mask_, q);
    Var mask_prev = t.sigmoid(t.matmul(embed0, t.transpose(fd.frame_embed)));

    for (int i = 0; i < cfg_.decoder_layers; ++i) {
      q = decoder_layer(t, fr.params, i, q, fd.pyramid[i], mask_prev);
      HeadResult h = output_heads(t, fr.params, q, fd.frame_embed);
      fr.class_probs.push_back(h.class_probs);
      fr.mask_probs.push_back(h.mask_probs);
      fr.boundary_probs.push_back(h.boundary_probs);
      mask_prev = h.mask_probs_full;
    }
    return fr;
  }

  static ModelOutputs materialize(const Tape& t, const ForwardResult& fr) {
    ModelOutputs out;
    for (size_t i = 0; i < fr.class_probs.size(); ++i) {
      out.class_probs.push_back(t.value(fr.class_probs[i]));
      out.mask_probs.push_back(t.value(fr.mask_probs[i]));
      out.boundary_probs.push_back(t.value(fr.boundary_probs[i]));
    }
    return out;
  }

  // Value-only forward on a throwaway tape.
  ModelOutputs run(const Matrix& features) const {
    Tape t;
    return materialize(t, forward(t, features));
  }

  void zero_grad() {
    for (Parameter& p : params_) p.zero_grad();
  }

  // Accumulate tape gradients into Parameter::grad after backward().
  void add_grads_from(Tape& t, const ForwardResult& fr) {
    for (size_t i = 0; i < params_.size(); ++i) {
      const Matrix& g = t.grad(fr.params[i]);
      for (size_t k = 0; k < g.size(); ++k) params_[i].grad.data[k] += g.data[k];
    }
  }

  void scale_grads(double s) {
    for (Parameter& p : params_)
      for (double& v : p.grad.data) v *= s;
  }

  // Replace parameter values from a name -> Matrix map; every parameter must
  // be present with a matching shape and no extras are allowed.
  void load_state(const std::map<std::string, Matrix>& tensors) {
    if (tensors.size() != params_.size())
      throw std::runtime_error("load_state: checkpoint has " + std::to_string(tensors.size()) +
                               " tensors, model has " + std::to_string(params_.size()));
    for (Parameter& p : params_) {
      auto it = tensors.find(p.name);
      if (it == tensors.end())
        throw std::runtime_error("load_state: missing tensor " + p.name);
      if (!it->second.same_shape(p.value))
        throw std::runtime_error("load_state: shape mismatch for " + p.name + " (" +
                                 it->second.shape_str() + " vs " + p.value.shape_str() + ")");
      p.value = it->second;
    }
  }

 private:
  struct LinearIdx {
    int w = -1, b = -1;
  };
  struct NormIdx {
    int gain = -1, bias = -1;
  };
  struct FrameBlockIdx {
    LinearIdx conv_left, conv_center, conv_right;
    int conv_bias = -1;
    LinearIdx pw;
    NormIdx norm;
  };
  struct AttnIdx {
    LinearIdx q, k, v, o;
  };
  struct DecLayerIdx {
    AttnIdx ma, sa;
    LinearIdx ffn1, ffn2;
    NormIdx norm1, norm2, norm3;
  };

  int add_param(const std::string& name, Matrix value) {
    params_.emplace_back(name, std::move(value));
    return static_cast<int>(params_.size() - 1);
  }

  int gaussian_param(const std::string& name, int r, int c, Rng& rng) {
    Matrix m(r, c);
    for (double& v : m.data) v = rng.gaussian(0.0, 0.02);
    return add_param(name, std::move(m));
  }

  int zeros_param(const std::string& name, int r, int c) {
    return add_param(name, Matrix::zeros(r, c));
  }

  // Weight + zero bias; the LinearIdx wraps both.
  LinearIdx linear_param(const std::string& prefix, int in, int out, Rng& rng) {
    LinearIdx idx;
    idx.w = gaussian_param(prefix + ".w", in, out, rng);
    idx.b = zeros_param(prefix + ".b", 1, out);
    return idx;
  }

  NormIdx norm_param(const std::string& prefix, int c) {
    NormIdx idx;
    idx.gain = add_param(prefix + ".gain", Matrix::full(1, c, 1.0));
    idx.bias = zeros_param(prefix + ".bias", 1, c);
    return idx;
  }

  AttnIdx attn_param(const std::string& prefix, int c, Rng& rng) {
    AttnIdx idx;
    idx.q = linear_param(prefix + ".q", c, c, rng);
    idx.k = linear_param(prefix + ".k", c, c, rng);
    idx.v = linear_param(prefix + ".v", c, c, rng);
    idx.o = linear_param(prefix + ".o", c, c, rng);
    return idx;
  }

  static Var linear(Tape& t, const Binding& b, LinearIdx idx, Var x) {
    return t.add_rowvec(t.matmul(x, b[idx.w]), b[idx.b]);
  }

  static Var norm(Tape& t, const Binding& b, NormIdx idx, Var x) {
    return t.add_rowvec(t.mul_rowvec(t.layer_norm(x), b[idx.gain]), b[idx.bias]);
  }

  Var mlp3(Tape& t, const Binding& b, const LinearIdx (&layers)[3], Var x) const {
    Var h = t.relu(linear(t, b, layers[0], x));
    h = t.relu(linear(t, b, layers[1], h));
    return linear(t, b, layers[2], h);
  }

  Var self_attention(Tape& t, const Binding& b, int layer, Var x) const {
    const AttnIdx& a = dec_layers_[layer].sa;
    Var qh = linear(t, b, a.q, x);
    Var kh = linear(t, b, a.k, x);
    Var vh = linear(t, b, a.v, x);
    const int dh = cfg_.hidden / cfg_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> heads;
    for (int h = 0; h < cfg_.heads; ++h) {
      Var qs = t.col_slice(qh, h * dh, (h + 1) * dh);
      Var ks = t.col_slice(kh, h * dh, (h + 1) * dh);
      Var vs = t.col_slice(vh, h * dh, (h + 1) * dh);
      Var logits = t.scale(t.matmul(qs, t.transpose(ks)), scale);
      heads.push_back(t.matmul(t.row_softmax(logits), vs));
    }
    return linear(t, b, a.o, t.concat_cols(heads));
  }

  void check_attention_shapes(const Tape& t, Var q, Var f, Var m) const {
    const Matrix& qv = t.value(q);
    const Matrix& fv = t.value(f);
    const Matrix& mv = t.value(m);
    if (qv.cols != cfg_.hidden || fv.cols != cfg_.hidden)
      throw std::invalid_argument("mask_attention: hidden dim mismatch (" + qv.shape_str() +
                                  ", " + fv.shape_str() + ")");
    if (mv.rows != qv.rows || mv.cols != fv.rows)
      throw std::invalid_argument("mask_attention: mask is " + mv.shape_str() + ", expected " +
                                  std::to_string(qv.rows) + "x" + std::to_string(fv.rows));
  }

  ModelConfig cfg_;
  std::vector<Parameter> params_;

  int query_embed_ = -1;
  int class_token_ = -1;
  LinearIdx frame_in_, frame_out_;
  std::vector<FrameBlockIdx> frame_blocks_;
  std::vector<DecLayerIdx> dec_layers_;
  LinearIdx head_class_;
  LinearIdx head_mask_[3];
  LinearIdx head_boundary_[3];
  LinearIdx boundary_agg_;
};

}  // namespace baformer
