#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "capgen/autodiff.hpp"
#include "capgen/textpipe.hpp"
#include "capgen/vision.hpp"

namespace capgen {

struct ModelConfig {
  std::size_t d_model = 128;
  std::size_t heads = 8;
  std::size_t layers_enc = 2;
  std::size_t layers_dec = 2;
  std::size_t d_ff = 512;
  std::size_t vocab_size = 0;
  std::size_t max_len = 24;
  /// Feature sources in registration order with their input dimensionality. The tiny CNN
  /// source always has dimension d_model.
  std::vector<std::pair<std::string, std::size_t>> sources;

  std::size_t head_dim() const { return d_model / heads; }
  bool uses_tinycnn() const;
  void validate() const;

  nlohmann::ordered_json to_json() const;
  /// Reads the model keys of `j`; unknown keys are ignored so train configs can embed it.
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Exact parameter count implied by a configuration.
std::size_t parameter_count(const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Parameter structures, templated on the storage type: Tensor<S> for owned weights and
// Var<S> for weights bound to a tape.

template <typename T>
struct AttentionParams {
  std::vector<T> w_q;  // per head [d_model, d_k]
  std::vector<T> w_k;  // per head [d_model, d_k]
  std::vector<T> w_v;  // per head [d_model, d_v]
  T w_o;               // [heads * d_v, d_model]

  std::size_t heads() const { return w_q.size(); }
};

template <typename T>
struct LayerNormParams {
  T gain;
  T bias;
};

template <typename T>
struct FeedForwardParams {
  T w1, b1, w2, b2;
};

template <typename T>
struct EncoderLayerParams {
  AttentionParams<T> self_attn;
  LayerNormParams<T> norm1;
  FeedForwardParams<T> ffn;
  LayerNormParams<T> norm2;
};

template <typename T>
struct DecoderLayerParams {
  AttentionParams<T> self_attn;
  LayerNormParams<T> norm1;
  AttentionParams<T> cross_attn;
  LayerNormParams<T> norm2;
  FeedForwardParams<T> ffn;
  LayerNormParams<T> norm3;
};

template <typename T>
struct LinearParams {
  T weight, bias;
};

template <typename T>
struct ModelParams {
  T token_embedding;     // [vocab, d_model]
  T position_embedding;  // [max_len, d_model]
  std::map<std::string, LinearParams<T>> input_proj;
  std::optional<TinyCnnParams<T>> cnn;
  std::vector<EncoderLayerParams<T>> encoder;
  std::vector<DecoderLayerParams<T>> decoder;
  LinearParams<T> output;  // [d_model, vocab], [vocab]
};

template <typename F, typename... P>
void visit_parameters(F&& f, const std::string& prefix, AttentionParams<P>&... p) {
  const std::size_t heads = std::get<0>(std::tie(p...)).w_q.size();
  for (std::size_t h = 0; h < heads; ++h) {
    const std::string hp = prefix + "head" + std::to_string(h) + ".";
    f(hp + "w_q", p.w_q[h]...);
    f(hp + "w_k", p.w_k[h]...);
    f(hp + "w_v", p.w_v[h]...);
  }
  f(prefix + "w_o", p.w_o...);
}

template <typename F, typename... P>
void visit_parameters(F&& f, const std::string& prefix, LayerNormParams<P>&... p) {
  f(prefix + "gain", p.gain...);
  f(prefix + "bias", p.bias...);
}

template <typename F, typename... P>
void visit_parameters(F&& f, const std::string& prefix, FeedForwardParams<P>&... p) {
  f(prefix + "w1", p.w1...);
  f(prefix + "b1", p.b1...);
  f(prefix + "w2", p.w2...);
  f(prefix + "b2", p.b2...);
}

template <typename F, typename... P>
void visit_parameters(F&& f, const std::string& prefix, LinearParams<P>&... p) {
  f(prefix + "weight", p.weight...);
  f(prefix + "bias", p.bias...);
}

/// Calls f(name, param...) for every parameter, in a fixed order, across structurally identical
/// parameter sets.
template <typename F, typename... P>
void visit_parameters(F&& f, ModelParams<P>&... p) {
  auto& first = std::get<0>(std::tie(p...));
  f("token_embedding", p.token_embedding...);
  f("position_embedding", p.position_embedding...);
  for (auto& [name, _] : first.input_proj) {
    visit_parameters(f, "input_proj." + name + ".", p.input_proj.at(name)...);
  }
  if (first.cnn) visit_parameters(f, "cnn.", *p.cnn...);
  for (std::size_t i = 0; i < first.encoder.size(); ++i) {
    const std::string lp = "encoder." + std::to_string(i) + ".";
    visit_parameters(f, lp + "self_attn.", p.encoder[i].self_attn...);
    visit_parameters(f, lp + "norm1.", p.encoder[i].norm1...);
    visit_parameters(f, lp + "ffn.", p.encoder[i].ffn...);
    visit_parameters(f, lp + "norm2.", p.encoder[i].norm2...);
  }
  for (std::size_t i = 0; i < first.decoder.size(); ++i) {
    const std::string lp = "decoder." + std::to_string(i) + ".";
    visit_parameters(f, lp + "self_attn.", p.decoder[i].self_attn...);
    visit_parameters(f, lp + "norm1.", p.decoder[i].norm1...);
    visit_parameters(f, lp + "cross_attn.", p.decoder[i].cross_attn...);
    visit_parameters(f, lp + "norm2.", p.decoder[i].norm2...);
    visit_parameters(f, lp + "ffn.", p.decoder[i].ffn...);
    visit_parameters(f, lp + "norm3.", p.decoder[i].norm3...);
  }
  visit_parameters(f, "output.", p.output...);
}

/// Empty parameter set with the same structure (head counts, layers, sources) as `src`.
template <typename U, typename T>
ModelParams<U> structure_like(const ModelParams<T>& src) {
  const auto attn = [](const AttentionParams<T>& a) {
    AttentionParams<U> out;
    out.w_q.resize(a.w_q.size());
    out.w_k.resize(a.w_k.size());
    out.w_v.resize(a.w_v.size());
    return out;
  };
  ModelParams<U> out;
  for (const auto& [name, _] : src.input_proj) out.input_proj[name];
  if (src.cnn) out.cnn.emplace();
  for (const auto& l : src.encoder) {
    out.encoder.emplace_back();
    out.encoder.back().self_attn = attn(l.self_attn);
  }
  for (const auto& l : src.decoder) {
    out.decoder.emplace_back();
    out.decoder.back().self_attn = attn(l.self_attn);
    out.decoder.back().cross_attn = attn(l.cross_attn);
  }
  return out;
}

template <typename Scalar>
struct CaptionModel {
  ModelConfig config;
  ModelParams<Tensor<Scalar>> params;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    auto& self = const_cast<ModelParams<Tensor<Scalar>>&>(params);
    visit_parameters([&](const std::string&, const Tensor<Scalar>& t) { n += t.size(); }, self);
    return n;
  }

  template <typename Other>
  CaptionModel<Other> cast() const {
    CaptionModel<Other> out{config, structure_like<Tensor<Other>>(params)};
    auto& self = const_cast<ModelParams<Tensor<Scalar>>&>(params);
    visit_parameters([](const std::string&, Tensor<Scalar>& a, Tensor<Other>& b) { b = a.template cast<Other>(); },
                     self, out.params);
    return out;
  }
};

/// Freshly initialised float model; every parameter has requires_grad set.
CaptionModel<float> init_model(const ModelConfig& cfg, std::uint32_t seed);

// ---------------------------------------------------------------------------
// Graph construction

/// Blocked positions of an [m, n] attention score matrix.
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> blocked;

  static AttentionMask causal(std::size_t n) {
    AttentionMask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) m.blocked[i * n + j] = 1;
    return m;
  }
};

inline constexpr double kMaskBias = -1e9;

/// softmax(Q K^T / sqrt(d_k) + mask_bias) V. Blocked entries receive a -1e9 bias.
template <typename Scalar>
Var<Scalar> scaled_dot_attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v,
                                 const AttentionMask* mask = nullptr) {
  const Shape qs = q.shape();
  const Shape ks = k.shape();
  const Shape vs = v.shape();
  if (qs.size() != 2 || ks.size() != 2 || vs.size() != 2 || qs[1] != ks[1] || ks[0] != vs[0]) {
    throw Error(ErrorCode::kShapeMismatch, "attention Q" + shape_string(qs) + " K" + shape_string(ks) + " V" +
                                               shape_string(vs));
  }
  const Scalar inv_sqrt_dk = Scalar(1) / std::sqrt(static_cast<Scalar>(ks[1]));
  auto scores = scale(matmul(q, transpose_last_two(k)), inv_sqrt_dk);
  if (mask) {
    if (mask->rows != qs[0] || mask->cols != ks[0]) {
      throw Error(ErrorCode::kShapeMismatch, "attention mask does not match score matrix");
    }
    Tensor<Scalar> bias({mask->rows, mask->cols});
    for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = mask->blocked[i] ? Scalar(kMaskBias) : Scalar(0);
    scores = add(scores, q.tape()->constant(std::move(bias)));
  }
  return matmul(softmax_rows(scores), v);
}

/// Per-head projections, scaled dot attention, concatenation, output projection.
template <typename Scalar>
Var<Scalar> multi_head_attention(const Var<Scalar>& x_q, const Var<Scalar>& x_kv,
                                 const AttentionParams<Var<Scalar>>& p, const AttentionMask* mask = nullptr) {
  if (p.heads() == 0 || p.w_k.size() != p.heads() || p.w_v.size() != p.heads()) {
    throw Error(ErrorCode::kShapeMismatch, "attention parameters need equal, non-zero head counts");
  }
  std::vector<Var<Scalar>> heads;
  heads.reserve(p.heads());
  for (std::size_t h = 0; h < p.heads(); ++h) {
    heads.push_back(scaled_dot_attention(matmul(x_q, p.w_q[h]), matmul(x_kv, p.w_k[h]), matmul(x_kv, p.w_v[h]),
                                         mask));
  }
  return matmul(concat_last_axis(heads), p.w_o);
}

template <typename Scalar>
Var<Scalar> feed_forward(const Var<Scalar>& x, const FeedForwardParams<Var<Scalar>>& p) {
  return add_bias(matmul(relu(add_bias(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

template <typename Scalar>
Var<Scalar> add_and_norm(const Var<Scalar>& residual, const Var<Scalar>& sub, const LayerNormParams<Var<Scalar>>& n) {
  return layer_norm(add(residual, sub), n.gain, n.bias);
}

/// Parameters of a model bound to a tape for one forward pass.
template <typename Scalar>
struct BoundModel {
  const ModelConfig* config = nullptr;
  Tape<Scalar>* tape = nullptr;
  ModelParams<Var<Scalar>> p;
};

/// Binds trainable parameters; gradients flow back into `model` on backward().
template <typename Scalar>
BoundModel<Scalar> bind(Tape<Scalar>& tape, CaptionModel<Scalar>& model) {
  BoundModel<Scalar> b{&model.config, &tape, structure_like<Var<Scalar>>(model.params)};
  visit_parameters([&](const std::string&, Tensor<Scalar>& t, Var<Scalar>& v) { v = tape.parameter(t); },
                   model.params, b.p);
  return b;
}

/// Binds parameters as constants (inference).
template <typename Scalar>
BoundModel<Scalar> bind_frozen(Tape<Scalar>& tape, const CaptionModel<Scalar>& model) {
  auto& params = const_cast<ModelParams<Tensor<Scalar>>&>(model.params);
  BoundModel<Scalar> b{&model.config, &tape, structure_like<Var<Scalar>>(params)};
  visit_parameters([&](const std::string&, Tensor<Scalar>& t, Var<Scalar>& v) { v = tape.reference(t); }, params,
                   b.p);
  return b;
}

/// One visual source position: a [1, dim] feature row and its registered source name.
template <typename Scalar>
struct SourceInput {
  Var<Scalar> feature;
  std::string source;
};

/// Projects each source to d_model, adds position embeddings and runs the encoder stack.
/// Result is [n_src, d_model].
template <typename Scalar>
Var<Scalar> encode(const BoundModel<Scalar>& m, std::span<const SourceInput<Scalar>> sources) {
  const ModelConfig& cfg = *m.config;
  if (sources.empty()) throw Error(ErrorCode::kInvalidArgument, "encoder needs at least one source");
  if (sources.size() > cfg.max_len) {
    throw Error(ErrorCode::kTooManySources, std::to_string(sources.size()) + " sources exceed max_len " +
                                                std::to_string(cfg.max_len));
  }
  std::vector<Var<Scalar>> rows;
  rows.reserve(sources.size());
  for (const auto& s : sources) {
    auto it = m.p.input_proj.find(s.source);
    if (it == m.p.input_proj.end()) {
      throw Error(ErrorCode::kInvalidArgument, "model has no input projection for source '" + s.source + "'");
    }
    auto f = s.feature;
    if (f.value().rank() != 2) f = reshape(f, {1, f.value().size()});
    rows.push_back(add_bias(matmul(f, it->second.weight), it->second.bias));
  }
  auto x = add(stack_rows(rows), slice_rows(m.p.position_embedding, 0, rows.size()));
  for (const auto& layer : m.p.encoder) {
    x = add_and_norm(x, multi_head_attention(x, x, layer.self_attn), layer.norm1);
    x = add_and_norm(x, feed_forward(x, layer.ffn), layer.norm2);
  }
  return x;
}

/// Teacher-forced decoder pass: logits [ids.size(), vocab] where row i predicts token i+1.
template <typename Scalar>
Var<Scalar> decode_logits(const BoundModel<Scalar>& m, const Var<Scalar>& memory, std::span<const TokenId> ids) {
  const ModelConfig& cfg = *m.config;
  if (ids.empty()) throw Error(ErrorCode::kInvalidArgument, "decoder prefix is empty");
  if (ids.size() > cfg.max_len) {
    throw Error(ErrorCode::kPrefixTooLong, "prefix of " + std::to_string(ids.size()) + " exceeds max_len " +
                                               std::to_string(cfg.max_len));
  }
  const AttentionMask causal = AttentionMask::causal(ids.size());
  auto y = add(embedding_lookup(m.p.token_embedding, ids), slice_rows(m.p.position_embedding, 0, ids.size()));
  for (const auto& layer : m.p.decoder) {
    y = add_and_norm(y, multi_head_attention(y, y, layer.self_attn, &causal), layer.norm1);
    y = add_and_norm(y, multi_head_attention(y, memory, layer.cross_attn), layer.norm2);
    y = add_and_norm(y, feed_forward(y, layer.ffn), layer.norm3);
  }
  return add_bias(matmul(y, m.p.output.weight), m.p.output.bias);
}

// ---------------------------------------------------------------------------
// Inference helpers on float models

/// Encoder output for precomputed feature maps, one source position each.
Tensor<float> encode(const CaptionModel<float>& model, std::span<const FeatureMap> features);

/// Encoder output for the tiny-CNN source of `model` applied to `img` (already prepared).
Tensor<float> encode_image(const CaptionModel<float>& model, const Image& img);

/// Logits of the token following `prefix` (the non-pad part of it). The prefix must start with
/// the start id.
std::vector<float> decode_step(const CaptionModel<float>& model, const Tensor<float>& memory,
                               const TokenSequence& prefix);
std::vector<float> decode_step(const CaptionModel<float>& model, const Tensor<float>& memory,
                               std::span<const TokenId> prefix);

}  // namespace capgen
