#pragma once

#include <functional>
#include <span>
#include <vector>

#include "capgen/textpipe.hpp"
#include "capgen/transformer.hpp"

namespace capgen {

/// Next-token logits for a prefix that starts with the start id.
using NextTokenLogits = std::function<std::vector<float>(std::span<const TokenId> prefix)>;

struct BeamHypothesis {
  std::vector<TokenId> ids;  // includes the leading start id
  double logprob = 0.0;      // natural log, cumulative
  bool finished = false;
};

struct BeamConfig {
  std::size_t width = 10;
  std::size_t max_len = 24;  // counts the start id
  double length_norm_alpha = 0.0;
  TokenId start_id = kStartId;
  TokenId end_id = kEndId;

  void validate() const;
};

/// Ranking score: logprob / (generated tokens)^alpha.
double normalized_score(const BeamHypothesis& h, double alpha);

TokenSequence greedy_decode(const NextTokenLogits& next, std::size_t max_len, TokenId start_id = kStartId,
                            TokenId end_id = kEndId);

/// Up to cfg.width finished hypotheses, best first. Equal scores are ordered by the
/// lexicographically smaller id sequence.
std::vector<BeamHypothesis> beam_search(const NextTokenLogits& next, const BeamConfig& cfg);

/// Adapter that feeds a float model and an encoder memory to the decoders above. Both must
/// outlive the returned function.
NextTokenLogits model_scorer(const CaptionModel<float>& model, const Tensor<float>& memory);

inline TokenSequence greedy_decode(const Tensor<float>& memory, const CaptionModel<float>& model,
                                   std::size_t max_len) {
  return greedy_decode(model_scorer(model, memory), max_len);
}

inline std::vector<BeamHypothesis> beam_search(const Tensor<float>& memory, const CaptionModel<float>& model,
                                               const BeamConfig& cfg) {
  return beam_search(model_scorer(model, memory), cfg);
}

/// Log-softmax in double precision.
std::vector<double> log_softmax(std::span<const float> logits);

}  // namespace capgen
