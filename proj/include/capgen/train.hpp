#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "capgen/autodiff.hpp"
#include "capgen/textpipe.hpp"
#include "capgen/transformer.hpp"
#include "capgen/vision.hpp"

namespace capgen {

enum class OptimizerKind { kAdam, kAdamax };

struct TrainConfig {
  std::size_t batch_size = 64;
  double base_lr = 1e-5;
  double peak_lr = 1e-4;
  double warmup_fraction = 0.1;
  std::size_t max_epochs = 30;
  std::size_t patience = 5;
  std::uint32_t seed = 42;
  OptimizerKind optimizer = OptimizerKind::kAdamax;
  bool augment = true;  // horizontal flip with p = 0.5 on image inputs

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Linear ramp from base_lr to peak_lr over the first round(warmup_fraction * total_steps)
/// steps, then constant.
double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

struct OptimizerState {
  std::vector<std::vector<float>> first;   // m
  std::vector<std::vector<float>> second;  // v (Adam) or u (Adamax)
  std::size_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam or Adamax update of every tensor in `params` from its accumulated grad (missing
/// grads count as zero). Moments are allocated on the first call.
void optimizer_step(std::span<Tensor<float>* const> params, OptimizerState& state, double lr, OptimizerKind kind);

/// Masked cross-entropy of next-token logits [L, vocab] against `targets` (L ids, pad ignored).
template <typename Scalar>
MaskedNll<Scalar> cross_entropy_masked(const Var<Scalar>& logits, std::span<const TokenId> targets) {
  return masked_nll_rows(logits, targets, kPadId);
}

template <typename Scalar>
MaskedNll<Scalar> cross_entropy_masked(const Var<Scalar>& logits, const TokenSequence& targets) {
  return masked_nll_rows(logits, std::span<const TokenId>(targets.ids), kPadId);
}

/// Stops once validation loss has failed to improve for more than `patience` consecutive epochs.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Records an epoch; returns true when training should stop.
  bool update(std::size_t epoch, double val_loss);
  bool improved() const noexcept { return improved_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  double best_loss() const noexcept { return best_; }

 private:
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t bad_epochs_ = 0;
  bool improved_ = false;
};

struct TrainExample {
  std::string image_id;
  std::vector<FeatureMap> features;  // precomputed sources
  std::optional<Image> image;        // tiny-CNN source, already prepared
  TokenSequence target;              // <start> ... <end> padded
};

struct Dataset {
  std::vector<TrainExample> train;
  std::vector<TrainExample> val;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct FitResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

std::string history_to_json(std::span<const EpochRecord> history);

/// Builds the teacher-forced loss of one example on `tape`: decoder input is target[0..n-1),
/// prediction targets are target[1..n).
template <typename Scalar>
MaskedNll<Scalar> example_loss(const BoundModel<Scalar>& m, const TrainExample& ex, bool flip = false) {
  std::vector<SourceInput<Scalar>> inputs;
  for (const auto& f : ex.features) {
    Tensor<Scalar> t({1, f.dim()});
    for (std::size_t i = 0; i < f.dim(); ++i) t[i] = static_cast<Scalar>(f.values[i]);
    inputs.push_back({m.tape->constant(std::move(t)), f.source});
  }
  if (ex.image) {
    if (!m.p.cnn) throw Error(ErrorCode::kInvalidArgument, "example has an image but the model has no tinycnn");
    const Image img = flip ? augment_hflip(*ex.image) : *ex.image;
    auto chw = image_to_chw(img).template cast<Scalar>();
    inputs.push_back({tinycnn_forward(m.tape->constant(std::move(chw)), *m.p.cnn), std::string(kTinyCnnSource)});
  }
  const auto memory = encode(m, std::span<const SourceInput<Scalar>>(inputs));
  const std::size_t n = ex.target.length;
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "target of '" + ex.image_id + "' is shorter than 2 tokens");
  const std::span<const TokenId> ids(ex.target.ids.data(), n);
  auto logits = decode_logits(m, memory, ids.first(n - 1));
  return cross_entropy_masked(logits, ids.subspan(1));
}

/// Mean token loss over `examples` without recording gradients.
double evaluate_loss(const CaptionModel<float>& model, std::span<const TrainExample> examples);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training with warmup, early stopping and restoration of the best-validation
/// weights. Throws Error(kNonFinite) with epoch/step context if the loss diverges.
FitResult fit(CaptionModel<float>& model, const Dataset& data, const TrainConfig& cfg,
              const EpochCallback& on_epoch = {});

}  // namespace capgen
