#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "capgen/metrics.hpp"

namespace capgen {

struct CandidateEntry {
  std::string model;
  Tokens caption;
  double logprob = 0.0;
};

/// Captions proposed for one image, in model registration order.
struct CandidateSet {
  std::string image_id;
  std::vector<CandidateEntry> entries;

  void validate() const;  // non-empty, unique model names
};

/// T x C matrix of one-hot votes: row t is classifier t, column c is class c.
class VoteMatrix {
 public:
  VoteMatrix(std::size_t classifiers, std::size_t classes);
  /// Builds a matrix from per-classifier class indices.
  static VoteMatrix from_votes(std::span<const std::size_t> votes, std::size_t classes);

  void set_vote(std::size_t classifier, std::size_t cls);
  std::size_t classifiers() const noexcept { return rows_; }
  std::size_t classes() const noexcept { return cols_; }
  int at(std::size_t t, std::size_t c) const { return cells_[t * cols_ + c]; }

  /// Throws InvalidArgument unless every row holds exactly one 1.
  void validate() const;

 private:
  std::size_t rows_, cols_;
  std::vector<int> cells_;
};

/// argmax over column sums; ties go to the lowest class index.
std::size_t majority_vote(const VoteMatrix& v);

struct Selection {
  std::string model;
  Tokens caption;
};

/// Entry with the highest sentence BLEU-1 against `refs`; ties go to the earlier entry.
Selection bleu_vote(const CandidateSet& cands, std::span<const Tokens> refs);

/// Entry whose mean sentence BLEU-1 against the other entries is highest; ties go to the
/// earlier entry. Needs at least two entries.
Selection consensus_vote(const CandidateSet& cands);

/// Majority over exact caption strings; classes are numbered by first appearance.
Selection majority_caption(const CandidateSet& cands);

enum class EnsembleMode { kBleuVote, kMajority, kConsensus };

EnsembleMode parse_mode(std::string_view name);
std::string_view mode_name(EnsembleMode mode);

std::map<std::string, Selection> run_ensemble(const std::map<std::string, CandidateSet>& all,
                                              const ReferenceMap* refs, EnsembleMode mode);

}  // namespace capgen
