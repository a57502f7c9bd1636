#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "capgen/autodiff.hpp"

namespace capgen {

/// RGB image, pixels in [0,1], row-major with interleaved channels.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> pixels;

  static constexpr std::size_t kChannels = 3;

  float at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * kChannels + c]; }
  friend bool operator==(const Image&, const Image&) = default;
};

/// Names accepted as FeatureMap sources: the eight backbones plus the built-in CNN.
std::span<const std::string_view> registered_sources();
bool is_registered_source(std::string_view name);
inline constexpr std::string_view kTinyCnnSource = "tinycnn";

struct FeatureMap {
  std::string source;
  std::vector<float> values;

  std::size_t dim() const noexcept { return values.size(); }
  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

/// Binary PPM (P6, maxval 255). Comments after '#' in the header are allowed.
Image load_ppm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> save_ppm(const Image& img);

Image augment_hflip(const Image& img);

/// Center-crop to a square, then nearest-neighbour resample to side x side.
Image prepare_image(const Image& img, std::size_t side = 32);

/// [3, H, W] planar tensor of an image.
Tensor<float> image_to_chw(const Image& img);

/// Insertion-ordered image_id -> FeatureMap table; the order is what a CAPF file stores.
class FeatureTable {
 public:
  void insert(std::string image_id, FeatureMap fm);
  const FeatureMap* find(std::string_view image_id) const;
  const FeatureMap& at(std::string_view image_id) const;
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<std::pair<std::string, FeatureMap>>& entries() const noexcept { return entries_; }

  friend bool operator==(const FeatureTable& a, const FeatureTable& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<std::pair<std::string, FeatureMap>> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// CAPF: "CAPF", u32 version=1, u32 count, then per entry u16 name_len, name, u32 dim, dim x f32.
// All integers and floats little-endian.
inline constexpr std::uint32_t kCapfVersion = 1;
std::vector<std::uint8_t> write_feature_file(const FeatureTable& table);
FeatureTable read_feature_file(std::span<const std::uint8_t> bytes, std::string_view source);

inline constexpr std::size_t kTinyCnnWidth1 = 8;
inline constexpr std::size_t kTinyCnnWidth2 = 16;
inline constexpr std::size_t kTinyCnnMinSide = 8;

/// Two 3x3 conv stages followed by a projection to d_model.
template <typename T>
struct TinyCnnParams {
  T conv1_w;  // [8, 3, 3, 3]
  T conv1_b;  // [8]
  T conv2_w;  // [16, 8, 3, 3]
  T conv2_b;  // [16]
  T proj_w;   // [16, d_model]
  T proj_b;   // [d_model]
};

template <typename F, typename... P>
void visit_parameters(F&& f, const std::string& prefix, TinyCnnParams<P>&... p) {
  f(prefix + "conv1.weight", p.conv1_w...);
  f(prefix + "conv1.bias", p.conv1_b...);
  f(prefix + "conv2.weight", p.conv2_w...);
  f(prefix + "conv2.bias", p.conv2_b...);
  f(prefix + "proj.weight", p.proj_w...);
  f(prefix + "proj.bias", p.proj_b...);
}

TinyCnnParams<Tensor<float>> init_tinycnn(std::size_t d_model, std::mt19937& rng);

/// conv3x3 -> ReLU -> maxpool2 -> conv3x3 -> ReLU -> maxpool2 -> global average pool -> linear.
/// `image` is a [3, H, W] tensor; the result is [1, d_model].
template <typename Scalar>
Var<Scalar> tinycnn_forward(const Var<Scalar>& image, const TinyCnnParams<Var<Scalar>>& p) {
  const auto& s = image.shape();
  if (s.size() != 3 || s[1] < kTinyCnnMinSide || s[2] < kTinyCnnMinSide) {
    throw Error(ErrorCode::kImageTooSmall, "tiny CNN needs at least 8x8 input, got " + shape_string(s));
  }
  auto x = maxpool2x2(relu(conv2d_3x3(image, p.conv1_w, p.conv1_b)));
  x = maxpool2x2(relu(conv2d_3x3(x, p.conv2_w, p.conv2_b)));
  return add_bias(matmul(global_avg_pool(x), p.proj_w), p.proj_b);
}

/// Inference convenience: runs the CNN on one image and returns a "tinycnn" FeatureMap.
FeatureMap tinycnn_forward(const Image& img, TinyCnnParams<Tensor<float>>& p);

}  // namespace capgen
