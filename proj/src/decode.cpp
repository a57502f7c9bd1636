#include "capgen/decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace capgen {

namespace {

bool ranks_before(double sa, const std::vector<TokenId>& a, double sb, const std::vector<TokenId>& b) {
  if (sa != sb) return sa > sb;
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

std::vector<float> checked_logits(const NextTokenLogits& next, std::span<const TokenId> prefix) {
  auto logits = next(prefix);
  if (logits.empty()) throw Error(ErrorCode::kInvalidArgument, "scorer returned no logits");
  return logits;
}

}  // namespace

void BeamConfig::validate() const {
  if (width < 1) throw Error(ErrorCode::kInvalidArgument, "beam width must be >= 1");
  if (max_len < 2) throw Error(ErrorCode::kInvalidArgument, "beam max_len must be >= 2");
  if (!(length_norm_alpha >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "length_norm_alpha must be >= 0");
}

std::vector<double> log_softmax(std::span<const float> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (float v : logits) z += std::exp(static_cast<double>(v) - mx);
  const double log_z = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - log_z;
  return out;
}

double normalized_score(const BeamHypothesis& h, double alpha) {
  if (alpha == 0.0) return h.logprob;
  const double generated = static_cast<double>(std::max<std::size_t>(h.ids.size(), 2) - 1);
  return h.logprob / std::pow(generated, alpha);
}

TokenSequence greedy_decode(const NextTokenLogits& next, std::size_t max_len, TokenId start_id, TokenId end_id) {
  if (max_len < 2) throw Error(ErrorCode::kInvalidArgument, "max_len must be >= 2");
  TokenSequence seq;
  seq.ids.push_back(start_id);
  while (seq.ids.size() < max_len && seq.ids.back() != end_id) {
    const auto logits = checked_logits(next, seq.ids);
    const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
    seq.ids.push_back(static_cast<TokenId>(best));
  }
  seq.length = seq.ids.size();
  return seq;
}

std::vector<BeamHypothesis> beam_search(const NextTokenLogits& next, const BeamConfig& cfg) {
  cfg.validate();
  const double alpha = cfg.length_norm_alpha;
  std::vector<BeamHypothesis> live{{{cfg.start_id}, 0.0, false}};
  std::vector<BeamHypothesis> pool;

  auto sort_pool = [&] {
    std::sort(pool.begin(), pool.end(), [&](const BeamHypothesis& a, const BeamHypothesis& b) {
      return ranks_before(normalized_score(a, alpha), a.ids, normalized_score(b, alpha), b.ids);
    });
  };

  while (!live.empty()) {
    std::vector<BeamHypothesis> expanded;
    for (const auto& h : live) {
      const auto lp = log_softmax(checked_logits(next, h.ids));
      for (std::size_t v = 0; v < lp.size(); ++v) {
        BeamHypothesis c{h.ids, h.logprob + lp[v], false};
        c.ids.push_back(static_cast<TokenId>(v));
        c.finished = c.ids.back() == cfg.end_id || c.ids.size() >= cfg.max_len;
        expanded.push_back(std::move(c));
      }
    }
    std::sort(expanded.begin(), expanded.end(), [](const BeamHypothesis& a, const BeamHypothesis& b) {
      return ranks_before(a.logprob, a.ids, b.logprob, b.ids);
    });

    // Finished candidates retire to the pool without taking one of the k live slots.
    std::vector<BeamHypothesis> next_live;
    std::size_t retired = 0;
    for (auto& c : expanded) {
      if (next_live.size() == cfg.width) break;
      if (c.finished) {
        if (retired < cfg.width) {
          pool.push_back(std::move(c));
          ++retired;
        }
      } else {
        next_live.push_back(std::move(c));
      }
    }
    live = std::move(next_live);

    // With alpha = 0 scores only fall as hypotheses grow, so a full pool whose k-th entry beats
    // every live hypothesis is final.
    if (alpha == 0.0 && pool.size() >= cfg.width && !live.empty()) {
      sort_pool();
      pool.resize(cfg.width);
      if (pool.back().logprob > live.front().logprob) break;
    }
  }
  sort_pool();
  if (pool.size() > cfg.width) pool.resize(cfg.width);
  for (auto& h : pool) h.finished = true;
  return pool;
}

NextTokenLogits model_scorer(const CaptionModel<float>& model, const Tensor<float>& memory) {
  return [&model, &memory](std::span<const TokenId> prefix) { return decode_step(model, memory, prefix); };
}

}  // namespace capgen
