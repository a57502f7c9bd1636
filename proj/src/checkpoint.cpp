#include "capgen/checkpoint.hpp"

#include <cstring>
#include <map>
#include <string>

#include "binary_io.hpp"

namespace capgen {

std::vector<std::uint8_t> save_checkpoint(const CaptionModel<float>& model) {
  std::vector<std::uint8_t> out = {'C', 'A', 'P', 'M'};
  io::put<std::uint32_t>(out, kCapmVersion);
  const std::string cfg = model.config.to_json().dump();
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out.insert(out.end(), cfg.begin(), cfg.end());
  auto& params = const_cast<ModelParams<Tensor<float>>&>(model.params);
  visit_parameters(
      [&](const std::string& name, const Tensor<float>& t) {
        io::put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.shape()) io::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (float v : t.data()) io::put_f32(out, v);
      },
      params);
  return out;
}

CaptionModel<float> load_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "CAPM", 4) != 0) {
    throw Error(ErrorCode::kBadMagic, "not a CAPM checkpoint");
  }
  io::ByteReader in(bytes);
  in.take(4);
  const auto version = in.read<std::uint32_t>();
  if (version != kCapmVersion) throw Error(ErrorCode::kUnsupportedVersion, "CAPM version " + std::to_string(version));
  const auto cfg_len = in.read<std::uint32_t>();
  const auto cfg_bytes = in.take(cfg_len);
  nlohmann::json cfg_json;
  try {
    cfg_json = nlohmann::json::parse(cfg_bytes.begin(), cfg_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMalformedHeader, std::string("checkpoint config: ") + e.what());
  }
  CaptionModel<float> model = init_model(ModelConfig::from_json(cfg_json), 0);

  std::map<std::string, Tensor<float>> stored;
  while (!in.done()) {
    const auto name_len = in.read<std::uint16_t>();
    const auto nb = in.take(name_len);
    std::string name(nb.begin(), nb.end());
    const auto rank = in.read<std::uint8_t>();
    Shape shape;
    for (std::uint8_t i = 0; i < rank; ++i) shape.push_back(in.read<std::uint32_t>());
    if (rank == 0 || element_count(shape) == 0 || in.remaining() / 4 < element_count(shape)) {
      throw Error(ErrorCode::kTruncatedPayload, "tensor '" + name + "' payload");
    }
    std::vector<float> data(element_count(shape));
    for (auto& v : data) v = in.read_f32();
    if (!stored.emplace(name, Tensor<float>(shape, std::move(data))).second) {
      throw Error(ErrorCode::kMalformedHeader, "tensor '" + name + "' stored twice");
    }
  }
  visit_parameters(
      [&](const std::string& name, Tensor<float>& t) {
        auto it = stored.find(name);
        if (it == stored.end()) throw Error(ErrorCode::kMalformedHeader, "checkpoint lacks tensor '" + name + "'");
        if (it->second.shape() != t.shape()) {
          throw Error(ErrorCode::kShapeMismatch, "tensor '" + name + "' has shape " +
                                                     shape_string(it->second.shape()) + ", config implies " +
                                                     shape_string(t.shape()));
        }
        t = std::move(it->second);
        t.set_requires_grad(true);
        stored.erase(it);
      },
      model.params);
  if (!stored.empty()) {
    throw Error(ErrorCode::kMalformedHeader, "unexpected tensor '" + stored.begin()->first + "' in checkpoint");
  }
  return model;
}

}  // namespace capgen
