#include "capgen/ensemble.hpp"

#include <algorithm>
#include <set>

#include "capgen/error.hpp"

namespace capgen {

namespace {

std::string join(const Tokens& t) {
  std::string s;
  for (const auto& w : t) {
    if (!s.empty()) s.push_back(' ');
    s += w;
  }
  return s;
}

}  // namespace

void CandidateSet::validate() const {
  if (entries.empty()) throw Error(ErrorCode::kTooFewCandidates, "image '" + image_id + "' has no candidates");
  std::set<std::string> names;
  for (const auto& e : entries) {
    if (!names.insert(e.model).second) {
      throw Error(ErrorCode::kInvalidArgument, "model '" + e.model + "' appears twice for image '" + image_id + "'");
    }
  }
}

VoteMatrix::VoteMatrix(std::size_t classifiers, std::size_t classes)
    : rows_(classifiers), cols_(classes), cells_(classifiers * classes, 0) {}

VoteMatrix VoteMatrix::from_votes(std::span<const std::size_t> votes, std::size_t classes) {
  VoteMatrix v(votes.size(), classes);
  for (std::size_t t = 0; t < votes.size(); ++t) v.set_vote(t, votes[t]);
  return v;
}

void VoteMatrix::set_vote(std::size_t classifier, std::size_t cls) {
  if (classifier >= rows_ || cls >= cols_) throw Error(ErrorCode::kInvalidArgument, "vote outside matrix");
  std::fill_n(cells_.begin() + static_cast<std::ptrdiff_t>(classifier * cols_), cols_, 0);
  cells_[classifier * cols_ + cls] = 1;
}

void VoteMatrix::validate() const {
  for (std::size_t t = 0; t < rows_; ++t) {
    int s = 0;
    for (std::size_t c = 0; c < cols_; ++c) {
      const int d = at(t, c);
      if (d != 0 && d != 1) throw Error(ErrorCode::kInvalidArgument, "vote entries must be 0 or 1");
      s += d;
    }
    if (s != 1) throw Error(ErrorCode::kInvalidArgument, "classifier " + std::to_string(t) + " must cast one vote");
  }
}

std::size_t majority_vote(const VoteMatrix& v) {
  if (v.classifiers() == 0 || v.classes() == 0) throw Error(ErrorCode::kEmptyMatrix, "vote matrix is empty");
  v.validate();
  std::size_t best = 0;
  int best_sum = -1;
  for (std::size_t c = 0; c < v.classes(); ++c) {
    int s = 0;
    for (std::size_t t = 0; t < v.classifiers(); ++t) s += v.at(t, c);
    if (s > best_sum) {
      best_sum = s;
      best = c;
    }
  }
  return best;
}

Selection bleu_vote(const CandidateSet& cands, std::span<const Tokens> refs) {
  cands.validate();
  if (refs.empty()) throw Error(ErrorCode::kMissingReferences, "bleu-vote for '" + cands.image_id + "' needs references");
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t i = 0; i < cands.entries.size(); ++i) {
    const double s = bleu_n(cands.entries[i].caption, refs, 1);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return {cands.entries[best].model, cands.entries[best].caption};
}

Selection consensus_vote(const CandidateSet& cands) {
  cands.validate();
  const auto& e = cands.entries;
  if (e.size() < 2) throw Error(ErrorCode::kTooFewCandidates, "consensus needs at least two candidates");
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < e.size(); ++j) {
      if (i == j) continue;
      // An empty caption cannot serve as a reference; it contributes 0.
      if (e[j].caption.empty()) continue;
      total += bleu_n(e[i].caption, std::span<const Tokens>(&e[j].caption, 1), 1);
    }
    const double mean = total / static_cast<double>(e.size() - 1);
    if (mean > best_score) {
      best_score = mean;
      best = i;
    }
  }
  return {e[best].model, e[best].caption};
}

Selection majority_caption(const CandidateSet& cands) {
  cands.validate();
  std::vector<std::string> classes;
  std::vector<std::size_t> votes;
  for (const auto& e : cands.entries) {
    const std::string s = join(e.caption);
    auto it = std::find(classes.begin(), classes.end(), s);
    votes.push_back(static_cast<std::size_t>(it - classes.begin()));
    if (it == classes.end()) classes.push_back(s);
  }
  const std::size_t winner = majority_vote(VoteMatrix::from_votes(votes, classes.size()));
  for (std::size_t t = 0; t < votes.size(); ++t) {
    if (votes[t] == winner) return {cands.entries[t].model, cands.entries[t].caption};
  }
  throw Error(ErrorCode::kEmptyMatrix, "majority vote found no winner");
}

EnsembleMode parse_mode(std::string_view name) {
  if (name == "bleu-vote") return EnsembleMode::kBleuVote;
  if (name == "majority") return EnsembleMode::kMajority;
  if (name == "consensus") return EnsembleMode::kConsensus;
  throw Error(ErrorCode::kUnknownMode, "unknown ensemble mode '" + std::string(name) + "'");
}

std::string_view mode_name(EnsembleMode mode) {
  switch (mode) {
    case EnsembleMode::kBleuVote: return "bleu-vote";
    case EnsembleMode::kMajority: return "majority";
    case EnsembleMode::kConsensus: return "consensus";
  }
  return "?";
}

std::map<std::string, Selection> run_ensemble(const std::map<std::string, CandidateSet>& all,
                                              const ReferenceMap* refs, EnsembleMode mode) {
  if (mode == EnsembleMode::kBleuVote && !refs) {
    throw Error(ErrorCode::kMissingReferences, "bleu-vote mode requires references");
  }
  std::map<std::string, Selection> out;
  for (const auto& [id, cands] : all) {
    switch (mode) {
      case EnsembleMode::kBleuVote: {
        auto it = refs->find(id);
        if (it == refs->end()) throw Error(ErrorCode::kMissingReferences, "no references for image '" + id + "'");
        out.emplace(id, bleu_vote(cands, it->second));
        break;
      }
      case EnsembleMode::kMajority: out.emplace(id, majority_caption(cands)); break;
      case EnsembleMode::kConsensus: out.emplace(id, consensus_vote(cands)); break;
    }
  }
  return out;
}

}  // namespace capgen
