#include "capgen/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace capgen {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::kInvalidArgument, "train config: " + m); };
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(base_lr >= 0.0) || !(peak_lr >= base_lr)) fail("need 0 <= base_lr <= peak_lr");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) fail("warmup_fraction must lie in [0, 1]");
  if (max_epochs < 1) fail("max_epochs must be >= 1");
  if (patience < 1) fail("patience must be >= 1");
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["batch_size"] = batch_size;
  j["base_lr"] = base_lr;
  j["peak_lr"] = peak_lr;
  j["warmup_fraction"] = warmup_fraction;
  j["max_epochs"] = max_epochs;
  j["patience"] = patience;
  j["seed"] = seed;
  j["optimizer"] = optimizer == OptimizerKind::kAdam ? "adam" : "adamax";
  j["augment"] = augment;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.seed = j.value("seed", c.seed);
    c.augment = j.value("augment", c.augment);
    const std::string opt = j.value("optimizer", std::string("adamax"));
    if (opt == "adam") {
      c.optimizer = OptimizerKind::kAdam;
    } else if (opt == "adamax") {
      c.optimizer = OptimizerKind::kAdamax;
    } else {
      throw Error(ErrorCode::kInvalidArgument, "train config: unknown optimizer '" + opt + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("train config: ") + e.what());
  }
  return c;
}

double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  const auto warmup = static_cast<std::size_t>(std::llround(cfg.warmup_fraction * static_cast<double>(total_steps)));
  if (step >= warmup) return cfg.peak_lr;
  return cfg.base_lr + (cfg.peak_lr - cfg.base_lr) * static_cast<double>(step) / static_cast<double>(warmup);
}

void optimizer_step(std::span<Tensor<float>* const> params, OptimizerState& state, double lr, OptimizerKind kind) {
  if (state.first.empty()) {
    for (auto* p : params) {
      state.first.emplace_back(p->size(), 0.0f);
      state.second.emplace_back(p->size(), 0.0f);
    }
  }
  if (state.first.size() != params.size()) {
    throw Error(ErrorCode::kShapeMismatch, "optimizer state tracks " + std::to_string(state.first.size()) +
                                               " tensors, got " + std::to_string(params.size()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double b1 = state.beta1, b2 = state.beta2;
  const double bc1 = 1.0 - std::pow(b1, t);
  const double bc2 = 1.0 - std::pow(b2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<float>& p = *params[k];
    auto& m = state.first[k];
    auto& v = state.second[k];
    if (m.size() != p.size()) throw Error(ErrorCode::kShapeMismatch, "optimizer moment shape mismatch");
    const auto g = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      m[i] = static_cast<float>(mi);
      double step;
      if (kind == OptimizerKind::kAdam) {
        const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
        v[i] = static_cast<float>(vi);
        step = lr * (mi / bc1) / (std::sqrt(vi / bc2) + state.eps);
      } else {
        const double ui = std::max(b2 * v[i], std::abs(gi));
        v[i] = static_cast<float>(ui);
        step = (lr / bc1) * mi / (ui + state.eps);
      }
      p[i] = static_cast<float>(p[i] - step);
    }
  }
}

bool EarlyStopping::update(std::size_t epoch, double val_loss) {
  improved_ = val_loss < best_;
  if (improved_) {
    best_ = val_loss;
    best_epoch_ = epoch;
    bad_epochs_ = 0;
    return false;
  }
  ++bad_epochs_;
  return bad_epochs_ > patience_;
}

std::string history_to_json(std::span<const EpochRecord> history) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : history) {
    arr.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}, {"lr", r.lr}});
  }
  return arr.dump(2) + "\n";
}

double evaluate_loss(const CaptionModel<float>& model, std::span<const TrainExample> examples) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& ex : examples) {
    Tape<float> tape;
    const auto bound = bind_frozen(tape, model);
    const auto nll = example_loss(bound, ex);
    for (float l : nll.per_position) total += l;
    count += nll.counted;
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

FitResult fit(CaptionModel<float>& model, const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.train.empty()) throw Error(ErrorCode::kEmptySplit, "training split is empty");
  if (data.val.empty()) throw Error(ErrorCode::kEmptySplit, "validation split is empty");

  std::vector<Tensor<float>*> params;
  visit_parameters(
      [&](const std::string&, Tensor<float>& t) {
        t.set_requires_grad(true);
        params.push_back(&t);
      },
      model.params);

  std::mt19937 rng(cfg.seed);
  std::bernoulli_distribution coin(0.5);
  OptimizerState opt;
  EarlyStopping stopper(cfg.patience);
  ModelParams<Tensor<float>> best = model.params;

  const std::size_t batches = (data.train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = batches * cfg.max_epochs;
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  FitResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    double lr = 0.0;
    for (std::size_t b = 0; b < batches; ++b, ++step) {
      const std::size_t begin = b * cfg.batch_size;
      const std::size_t end = std::min(begin + cfg.batch_size, order.size());
      try {
        for (auto* p : params) p->zero_grad();
        Tape<float> tape;
        const auto bound = bind(tape, model);
        std::vector<MaskedNll<float>> parts;
        std::size_t tokens = 0;
        for (std::size_t i = begin; i < end; ++i) {
          const bool flip = cfg.augment && data.train[order[i]].image && coin(rng);
          parts.push_back(example_loss(bound, data.train[order[i]], flip));
          tokens += parts.back().counted;
        }
        if (tokens == 0) continue;
        Var<float> loss;
        for (const auto& part : parts) {
          if (part.counted == 0) continue;
          auto weighted = scale(part.loss, static_cast<float>(part.counted) / static_cast<float>(tokens));
          loss = loss.valid() ? add(loss, weighted) : weighted;
          for (float l : part.per_position) epoch_loss += l;
        }
        epoch_tokens += tokens;
        tape.backward(loss);
        lr = lr_at(step, total_steps, cfg);
        optimizer_step(params, opt, lr, cfg.optimizer);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNonFinite) throw;
        throw Error(ErrorCode::kNonFinite, "epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                                               ": " + e.what());
      }
    }
    for (const auto* p : params) {
      if (!p->all_finite()) {
        throw Error(ErrorCode::kNonFinite, "epoch " + std::to_string(epoch) + ": parameters diverged");
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_tokens ? epoch_loss / static_cast<double>(epoch_tokens) : 0.0;
    try {
      rec.val_loss = evaluate_loss(model, data.val);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNonFinite) throw;
      throw Error(ErrorCode::kNonFinite, "epoch " + std::to_string(epoch) + " validation: " + e.what());
    }
    rec.lr = lr;
    if (!std::isfinite(rec.val_loss)) {
      throw Error(ErrorCode::kNonFinite, "epoch " + std::to_string(epoch) + ": validation loss is not finite");
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    const bool stop = stopper.update(epoch, rec.val_loss);
    if (stopper.improved()) best = model.params;
    if (stop) {
      result.stopped_early = true;
      break;
    }
  }
  model.params = std::move(best);
  for (auto* p : params) p->zero_grad();
  result.best_epoch = stopper.best_epoch();
  return result;
}

}  // namespace capgen
