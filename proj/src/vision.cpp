#include "capgen/vision.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cstring>
#include <string>

#include "binary_io.hpp"
#include "capgen/init.hpp"

namespace capgen {

using io::ByteReader;
using io::put;

namespace {

constexpr std::array<std::string_view, 9> kSources = {
    "resnet50", "resnet101", "efficientnetv2", "vgg16", "vgg19",
    "efficientnetb4", "resnet152", "regnetx120", "tinycnn"};

}  // namespace

std::span<const std::string_view> registered_sources() { return kSources; }

bool is_registered_source(std::string_view name) {
  return std::find(kSources.begin(), kSources.end(), name) != kSources.end();
}

Image load_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&](const char* what) {
    skip_space();
    std::size_t v = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos]) && digits < 9) {
      v = v * 10 + (bytes[pos++] - '0');
      ++digits;
    }
    if (digits == 0) throw Error(ErrorCode::kMalformedHeader, std::string("missing ") + what);
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw Error(ErrorCode::kMalformedHeader, "expected binary PPM magic P6");
  }
  pos = 2;
  Image img;
  img.width = read_uint("width");
  img.height = read_uint("height");
  const std::size_t maxval = read_uint("maxval");
  if (img.width == 0 || img.height == 0) throw Error(ErrorCode::kMalformedHeader, "zero image dimension");
  if (maxval != 255) throw Error(ErrorCode::kMalformedHeader, "only maxval 255 is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw Error(ErrorCode::kMalformedHeader, "header must end with one whitespace byte");
  }
  ++pos;
  const std::size_t n = img.width * img.height * Image::kChannels;
  if (bytes.size() - pos < n) throw Error(ErrorCode::kTruncatedPayload, "pixel data shorter than header claims");
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) img.pixels[i] = static_cast<float>(bytes[pos + i]) / 255.0f;
  return img;
}

std::vector<std::uint8_t> save_ppm(const Image& img) {
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (float v : img.pixels) {
    out.push_back(static_cast<std::uint8_t>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f));
  }
  return out;
}

Image augment_hflip(const Image& img) {
  Image out = img;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < Image::kChannels; ++c)
        out.pixels[(y * img.width + x) * Image::kChannels + c] = img.at(img.width - 1 - x, y, c);
  return out;
}

Image prepare_image(const Image& img, std::size_t side) {
  const std::size_t sq = std::min(img.width, img.height);
  const std::size_t x0 = (img.width - sq) / 2, y0 = (img.height - sq) / 2;
  Image out;
  out.width = out.height = side;
  out.pixels.resize(side * side * Image::kChannels);
  for (std::size_t y = 0; y < side; ++y) {
    const std::size_t sy = y0 + y * sq / side;
    for (std::size_t x = 0; x < side; ++x) {
      const std::size_t sx = x0 + x * sq / side;
      for (std::size_t c = 0; c < Image::kChannels; ++c)
        out.pixels[(y * side + x) * Image::kChannels + c] = img.at(sx, sy, c);
    }
  }
  return out;
}

Tensor<float> image_to_chw(const Image& img) {
  Tensor<float> t({Image::kChannels, img.height, img.width});
  for (std::size_t c = 0; c < Image::kChannels; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) t[(c * img.height + y) * img.width + x] = img.at(x, y, c);
  return t;
}

void FeatureTable::insert(std::string image_id, FeatureMap fm) {
  if (index_.count(image_id)) throw Error(ErrorCode::kDuplicateImageId, "image id '" + image_id + "' repeated");
  index_.emplace(image_id, entries_.size());
  entries_.emplace_back(std::move(image_id), std::move(fm));
}

const FeatureMap* FeatureTable::find(std::string_view image_id) const {
  auto it = index_.find(image_id);
  return it == index_.end() ? nullptr : &entries_[it->second].second;
}

const FeatureMap& FeatureTable::at(std::string_view image_id) const {
  const FeatureMap* fm = find(image_id);
  if (!fm) throw Error(ErrorCode::kInvalidArgument, "no features for image '" + std::string(image_id) + "'");
  return *fm;
}

std::vector<std::uint8_t> write_feature_file(const FeatureTable& table) {
  std::vector<std::uint8_t> out = {'C', 'A', 'P', 'F'};
  put<std::uint32_t>(out, kCapfVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(table.size()));
  for (const auto& [id, fm] : table.entries()) {
    if (id.size() > 0xFFFF) throw Error(ErrorCode::kInvalidArgument, "image id longer than 65535 bytes");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(id.size()));
    out.insert(out.end(), id.begin(), id.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(fm.values.size()));
    for (float v : fm.values) io::put_f32(out, v);
  }
  return out;
}

FeatureTable read_feature_file(std::span<const std::uint8_t> bytes, std::string_view source) {
  if (!is_registered_source(source)) {
    throw Error(ErrorCode::kInvalidArgument, "unknown feature source '" + std::string(source) + "'");
  }
  ByteReader in(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "CAPF", 4) != 0) {
    throw Error(ErrorCode::kBadMagic, "not a CAPF feature file");
  }
  in.take(4);
  const auto version = in.read<std::uint32_t>();
  if (version != kCapfVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, "CAPF version " + std::to_string(version));
  }
  const auto count = in.read<std::uint32_t>();
  FeatureTable table;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto name_len = in.read<std::uint16_t>();
    auto name_bytes = in.take(name_len);
    std::string id(name_bytes.begin(), name_bytes.end());
    const auto dim = in.read<std::uint32_t>();
    if (dim == 0) throw Error(ErrorCode::kInvalidArgument, "zero-dimensional feature for '" + id + "'");
    FeatureMap fm{std::string(source), {}};
    if (in.remaining() / 4 < dim) throw Error(ErrorCode::kTruncatedPayload, "feature payload too short");
    fm.values.reserve(dim);
    for (std::uint32_t i = 0; i < dim; ++i) {
      const float v = in.read_f32();
      if (!std::isfinite(v)) throw Error(ErrorCode::kNonFinite, "feature value for '" + id + "'");
      fm.values.push_back(v);
    }
    table.insert(std::move(id), std::move(fm));
  }
  if (!in.done()) throw Error(ErrorCode::kMalformedHeader, "trailing bytes after last CAPF entry");
  return table;
}

TinyCnnParams<Tensor<float>> init_tinycnn(std::size_t d_model, std::mt19937& rng) {
  TinyCnnParams<Tensor<float>> p;
  p.conv1_w = glorot_uniform({kTinyCnnWidth1, 3, 3, 3}, 27, 9 * kTinyCnnWidth1, rng);
  p.conv1_b = Tensor<float>({kTinyCnnWidth1});
  p.conv2_w = glorot_uniform({kTinyCnnWidth2, kTinyCnnWidth1, 3, 3}, 9 * kTinyCnnWidth1, 9 * kTinyCnnWidth2, rng);
  p.conv2_b = Tensor<float>({kTinyCnnWidth2});
  p.proj_w = glorot_uniform({kTinyCnnWidth2, d_model}, kTinyCnnWidth2, d_model, rng);
  p.proj_b = Tensor<float>({d_model});
  return p;
}

FeatureMap tinycnn_forward(const Image& img, TinyCnnParams<Tensor<float>>& p) {
  Tape<float> tape;
  TinyCnnParams<Var<float>> bound;
  visit_parameters([&](const std::string&, Tensor<float>& t, Var<float>& v) { v = tape.parameter(t); }, "", p,
                   bound);
  auto out = tinycnn_forward(tape.constant(image_to_chw(img)), bound);
  const auto& v = out.value();
  return FeatureMap{std::string(kTinyCnnSource), std::vector<float>(v.data().begin(), v.data().end())};
}

}  // namespace capgen
