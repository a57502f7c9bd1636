#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "capgen/textpipe.hpp"

namespace capgen {

/// Reference captions for one image, already tokenized (no boundary tokens).
using References = std::vector<Tokens>;
using CandidateMap = std::map<std::string, Tokens>;
using ReferenceMap = std::map<std::string, References>;

/// Sentence BLEU with uniform weights over n = 1..n_max, clipped counts and brevity penalty
/// against the closest reference length (shorter wins ties). No smoothing: any zero precision
/// gives 0. An empty candidate scores 0.
double bleu_n(const Tokens& candidate, std::span<const Tokens> refs, int n_max);

/// Corpus BLEU from pooled clipped counts and pooled lengths.
double corpus_bleu(const CandidateMap& candidates, const ReferenceMap& refs, int n_max);

std::size_t lcs_length(const Tokens& a, const Tokens& b);

/// Max over references of the LCS F-measure with recall weight beta.
double rouge_l(const Tokens& candidate, std::span<const Tokens> refs, double beta = 1.2);

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

/// Exact-match unigram alignment with the most matches and, among those, the fewest chunks.
MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference);

/// Fmean = 10PR/(R+9P), penalty = 0.5 (chunks/matches)^3, best over references.
double meteor_exact(const Tokens& candidate, std::span<const Tokens> refs);

struct CiderResult {
  std::map<std::string, double> per_image;
  double corpus = 0.0;
};

/// Plain CIDEr (no length penalty, no clipping): mean over n = 1..4 of the mean tf-idf cosine
/// similarity against each reference, times 10. Document frequencies come from the references.
CiderResult cider(const CandidateMap& candidates, const ReferenceMap& refs);

/// Set of (object), (object, attribute) or (subject, relation, object) tuples.
class SceneGraph {
 public:
  SceneGraph() = default;
  /// Lowercases every element and drops duplicates. Tuples must have 1 to 3 non-empty elements.
  explicit SceneGraph(const std::vector<std::vector<std::string>>& tuples);

  const std::set<std::vector<std::string>>& tuples() const noexcept { return tuples_; }
  std::size_t size() const noexcept { return tuples_.size(); }
  bool empty() const noexcept { return tuples_.empty(); }

 private:
  std::set<std::vector<std::string>> tuples_;
};

/// F1 of tuple precision and recall; 0 when either graph is empty or nothing overlaps.
double tuple_f1(const SceneGraph& candidate, const SceneGraph& reference);

struct GraphPair {
  SceneGraph candidate;
  SceneGraph reference;
};

struct MetricReport {
  std::map<std::string, std::map<std::string, double>> per_sentence;
  std::map<std::string, double> corpus;
  std::vector<std::string> flagged;  // "<image_id>: reason" for degenerate inputs

  /// JSON with every number printed in fixed notation with 6 decimals. `timestamp` is included
  /// when non-empty.
  std::string to_json(const std::string& timestamp = {}) const;
};

/// Metric names in report order.
std::vector<std::string> metric_names(bool with_spice);

MetricReport evaluate_corpus(const CandidateMap& candidates, const ReferenceMap& refs,
                             const std::map<std::string, GraphPair>* graphs = nullptr);

}  // namespace capgen
