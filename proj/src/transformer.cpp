#include "capgen/transformer.hpp"

#include "capgen/init.hpp"

namespace capgen {

bool ModelConfig::uses_tinycnn() const {
  for (const auto& [name, _] : sources)
    if (name == kTinyCnnSource) return true;
  return false;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidArgument, "model config: " + msg); };
  if (d_model == 0 || heads == 0 || layers_enc == 0 || layers_dec == 0 || d_ff == 0 || vocab_size == 0 ||
      max_len == 0) {
    fail("all sizes must be positive");
  }
  if (d_model % heads != 0) fail("d_model must be divisible by heads");
  if (vocab_size < kNumSpecials) fail("vocab_size must cover the 4 special tokens");
  if (sources.empty()) fail("at least one feature source is required");
  std::map<std::string, int> seen;
  for (const auto& [name, dim] : sources) {
    if (!is_registered_source(name)) fail("unknown source '" + name + "'");
    if (seen[name]++) fail("source '" + name + "' listed twice");
    if (dim == 0) fail("source '" + name + "' has zero dimension");
    if (name == kTinyCnnSource && dim != d_model) fail("tinycnn source dimension must equal d_model");
  }
}

nlohmann::ordered_json ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["d_model"] = d_model;
  j["heads"] = heads;
  j["layers_enc"] = layers_enc;
  j["layers_dec"] = layers_dec;
  j["d_ff"] = d_ff;
  j["vocab_size"] = vocab_size;
  j["max_len"] = max_len;
  nlohmann::ordered_json src = nlohmann::ordered_json::array();
  for (const auto& [name, dim] : sources) src.push_back({{"name", name}, {"dim", dim}});
  j["sources"] = std::move(src);
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.d_model = j.value("d_model", c.d_model);
    c.heads = j.value("heads", c.heads);
    c.layers_enc = j.value("layers_enc", c.layers_enc);
    c.layers_dec = j.value("layers_dec", c.layers_dec);
    c.d_ff = j.value("d_ff", 4 * c.d_model);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_len = j.value("max_len", c.max_len);
    if (j.contains("sources")) {
      for (const auto& s : j["sources"]) {
        c.sources.emplace_back(s.at("name").get<std::string>(), s.at("dim").get<std::size_t>());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("model config: ") + e.what());
  }
  return c;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model, f = cfg.d_ff, v = cfg.vocab_size;
  std::size_t n = v * d + cfg.max_len * d;
  for (const auto& [name, dim] : cfg.sources) n += dim * d + d;
  if (cfg.uses_tinycnn()) {
    n += kTinyCnnWidth1 * 27 + kTinyCnnWidth1;
    n += kTinyCnnWidth2 * kTinyCnnWidth1 * 9 + kTinyCnnWidth2;
    n += kTinyCnnWidth2 * d + d;
  }
  const std::size_t attention = 4 * d * d;
  const std::size_t ffn = 2 * d * f + f + d;
  const std::size_t norm = 2 * d;
  n += cfg.layers_enc * (attention + ffn + 2 * norm);
  n += cfg.layers_dec * (2 * attention + ffn + 3 * norm);
  n += d * v + v;
  return n;
}

namespace {

AttentionParams<Tensor<float>> init_attention(const ModelConfig& cfg, std::mt19937& rng) {
  const std::size_t d = cfg.d_model, dk = cfg.head_dim();
  AttentionParams<Tensor<float>> a;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    a.w_q.push_back(glorot_uniform({d, dk}, d, dk, rng));
    a.w_k.push_back(glorot_uniform({d, dk}, d, dk, rng));
    a.w_v.push_back(glorot_uniform({d, dk}, d, dk, rng));
  }
  a.w_o = glorot_uniform({cfg.heads * dk, d}, cfg.heads * dk, d, rng);
  return a;
}

LayerNormParams<Tensor<float>> init_norm(std::size_t d) { return {Tensor<float>({d}, 1.0f), Tensor<float>({d})}; }

FeedForwardParams<Tensor<float>> init_ffn(const ModelConfig& cfg, std::mt19937& rng) {
  const std::size_t d = cfg.d_model, f = cfg.d_ff;
  return {glorot_uniform({d, f}, d, f, rng), Tensor<float>({f}), glorot_uniform({f, d}, f, d, rng),
          Tensor<float>({d})};
}

}  // namespace

CaptionModel<float> init_model(const ModelConfig& cfg, std::uint32_t seed) {
  cfg.validate();
  std::mt19937 rng(seed);
  const std::size_t d = cfg.d_model;
  CaptionModel<float> m;
  m.config = cfg;
  auto& p = m.params;
  p.token_embedding = normal_fill({cfg.vocab_size, d}, 1.0f / std::sqrt(static_cast<float>(d)), rng);
  p.position_embedding = normal_fill({cfg.max_len, d}, 0.1f, rng);
  for (const auto& [name, dim] : cfg.sources) {
    p.input_proj[name] = {glorot_uniform({dim, d}, dim, d, rng), Tensor<float>({d})};
  }
  if (cfg.uses_tinycnn()) p.cnn = init_tinycnn(d, rng);
  for (std::size_t i = 0; i < cfg.layers_enc; ++i) {
    EncoderLayerParams<Tensor<float>> l;
    l.self_attn = init_attention(cfg, rng);
    l.norm1 = init_norm(d);
    l.ffn = init_ffn(cfg, rng);
    l.norm2 = init_norm(d);
    p.encoder.push_back(std::move(l));
  }
  for (std::size_t i = 0; i < cfg.layers_dec; ++i) {
    DecoderLayerParams<Tensor<float>> l;
    l.self_attn = init_attention(cfg, rng);
    l.norm1 = init_norm(d);
    l.cross_attn = init_attention(cfg, rng);
    l.norm2 = init_norm(d);
    l.ffn = init_ffn(cfg, rng);
    l.norm3 = init_norm(d);
    p.decoder.push_back(std::move(l));
  }
  p.output = {glorot_uniform({d, cfg.vocab_size}, d, cfg.vocab_size, rng), Tensor<float>({cfg.vocab_size})};
  visit_parameters([](const std::string&, Tensor<float>& t) { t.set_requires_grad(true); }, p);
  return m;
}

Tensor<float> encode(const CaptionModel<float>& model, std::span<const FeatureMap> features) {
  Tape<float> tape;
  auto bound = bind_frozen(tape, model);
  std::vector<SourceInput<float>> inputs;
  for (const auto& f : features) {
    inputs.push_back({tape.constant(Tensor<float>({1, f.dim()}, f.values)), f.source});
  }
  auto out = encode(bound, std::span<const SourceInput<float>>(inputs));
  return Tensor<float>(out.shape(), out.value().storage());
}

Tensor<float> encode_image(const CaptionModel<float>& model, const Image& img) {
  if (!model.params.cnn) throw Error(ErrorCode::kInvalidArgument, "model has no tinycnn source");
  Tape<float> tape;
  auto bound = bind_frozen(tape, model);
  const SourceInput<float> input{tinycnn_forward(tape.constant(image_to_chw(img)), *bound.p.cnn),
                                 std::string(kTinyCnnSource)};
  auto out = encode(bound, std::span<const SourceInput<float>>(&input, 1));
  return Tensor<float>(out.shape(), out.value().storage());
}

std::vector<float> decode_step(const CaptionModel<float>& model, const Tensor<float>& memory,
                               std::span<const TokenId> prefix) {
  if (prefix.empty() || prefix.front() != kStartId) {
    throw Error(ErrorCode::kInvalidArgument, "decoder prefix must begin with the start id");
  }
  if (prefix.size() > model.config.max_len) {
    throw Error(ErrorCode::kPrefixTooLong, "prefix of " + std::to_string(prefix.size()) + " exceeds max_len");
  }
  Tape<float> tape;
  auto bound = bind_frozen(tape, model);
  auto logits = decode_logits(bound, tape.reference(memory), prefix);
  const auto& v = logits.value();
  const std::size_t vocab = v.cols();
  const auto last = v.data().subspan((v.rows() - 1) * vocab, vocab);
  return {last.begin(), last.end()};
}

std::vector<float> decode_step(const CaptionModel<float>& model, const Tensor<float>& memory,
                               const TokenSequence& prefix) {
  return decode_step(model, memory, std::span<const TokenId>(prefix.ids.data(), prefix.length));
}

}  // namespace capgen
