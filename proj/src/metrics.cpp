#include "capgen/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <unordered_map>

#include "capgen/error.hpp"

namespace capgen {

namespace {

using NgramCounts = std::unordered_map<std::string, std::size_t>;

// n-grams keyed by their words joined with a unit separator.
NgramCounts count_ngrams(const Tokens& tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t k = 1; k < n; ++k) {
      key.push_back('\x1f');
      key += tokens[i + k];
    }
    ++counts[key];
  }
  return counts;
}

std::size_t closest_ref_length(std::size_t c, std::span<const Tokens> refs) {
  std::size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto d = [c](std::size_t len) { return len > c ? len - c : c - len; };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
  }
  return best;
}

// Clipped matches and candidate total for one order n.
std::pair<std::size_t, std::size_t> clipped_counts(const Tokens& cand, std::span<const Tokens> refs, std::size_t n) {
  const NgramCounts cc = count_ngrams(cand, n);
  NgramCounts max_ref;
  for (const auto& r : refs)
    for (const auto& [g, k] : count_ngrams(r, n)) max_ref[g] = std::max(max_ref[g], k);
  std::size_t clipped = 0, total = 0;
  for (const auto& [g, k] : cc) {
    total += k;
    auto it = max_ref.find(g);
    if (it != max_ref.end()) clipped += std::min(k, it->second);
  }
  return {clipped, total};
}

double combine_bleu(std::span<const std::pair<std::size_t, std::size_t>> counts, std::size_t c, std::size_t r) {
  if (c == 0) return 0.0;
  double log_sum = 0.0;
  for (const auto& [clipped, total] : counts) {
    if (clipped == 0 || total == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped) / static_cast<double>(total));
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  return bp * std::exp(log_sum / static_cast<double>(counts.size()));
}

void check_n(int n_max) {
  if (n_max < 1 || n_max > 4) throw Error(ErrorCode::kInvalidArgument, "BLEU order must be in 1..4");
}

void require_refs(std::span<const Tokens> refs) {
  if (std::none_of(refs.begin(), refs.end(), [](const Tokens& r) { return !r.empty(); })) {
    throw Error(ErrorCode::kMissingReferences, "reference set has no non-empty reference");
  }
}

template <typename A, typename B>
void require_same_ids(const std::map<std::string, A>& a, const std::map<std::string, B>& b, const char* what) {
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end() && ib != b.end(); ++ia, ++ib) {
    if (ia->first != ib->first) {
      throw Error(ErrorCode::kMismatchedIds, std::string(what) + ": image '" + std::min(ia->first, ib->first) +
                                                 "' is not present on both sides");
    }
  }
  if (ia != a.end() || ib != b.end()) {
    const std::string& id = ia != a.end() ? ia->first : ib->first;
    throw Error(ErrorCode::kMismatchedIds, std::string(what) + ": image '" + id + "' is not present on both sides");
  }
}

}  // namespace

double bleu_n(const Tokens& candidate, std::span<const Tokens> refs, int n_max) {
  check_n(n_max);
  require_refs(refs);
  if (candidate.empty()) return 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> counts;
  for (int n = 1; n <= n_max; ++n) counts.push_back(clipped_counts(candidate, refs, static_cast<std::size_t>(n)));
  return combine_bleu(counts, candidate.size(), closest_ref_length(candidate.size(), refs));
}

double corpus_bleu(const CandidateMap& candidates, const ReferenceMap& refs, int n_max) {
  check_n(n_max);
  require_same_ids(candidates, refs, "corpus BLEU");
  std::vector<std::pair<std::size_t, std::size_t>> counts(static_cast<std::size_t>(n_max));
  std::size_t c = 0, r = 0;
  for (const auto& [id, cand] : candidates) {
    const auto& rs = refs.at(id);
    require_refs(rs);
    for (int n = 1; n <= n_max; ++n) {
      const auto [clipped, total] = clipped_counts(cand, rs, static_cast<std::size_t>(n));
      counts[n - 1].first += clipped;
      counts[n - 1].second += total;
    }
    c += cand.size();
    r += closest_ref_length(cand.size(), rs);
  }
  return combine_bleu(counts, c, r);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const Tokens& candidate, std::span<const Tokens> refs, double beta) {
  require_refs(refs);
  if (candidate.empty()) return 0.0;
  double best = 0.0;
  const double b2 = beta * beta;
  for (const auto& ref : refs) {
    if (ref.empty()) continue;
    const auto l = static_cast<double>(lcs_length(candidate, ref));
    if (l == 0.0) continue;
    const double rec = l / static_cast<double>(ref.size());
    const double prec = l / static_cast<double>(candidate.size());
    best = std::max(best, (1.0 + b2) * rec * prec / (rec + b2 * prec));
  }
  return best;
}

namespace {

// Branch and bound over candidate positions. Every alignment keeps the maximum number of
// matches per word; the search maximises adjacent pairs (i, i+1) -> (j, j+1), which minimises
// chunks = matches - adjacencies.
class MeteorSearch {
 public:
  MeteorSearch(const Tokens& cand, const Tokens& ref) : cand_(cand), ref_(ref), used_(ref.size(), 0) {
    std::map<std::string, std::size_t> word_ids;
    for (const auto& w : cand) word_ids.emplace(w, word_ids.size());
    cand_word_.resize(cand.size());
    for (std::size_t i = 0; i < cand.size(); ++i) cand_word_[i] = word_ids.at(cand[i]);
    positions_.resize(word_ids.size());
    for (std::size_t j = 0; j < ref.size(); ++j) {
      auto it = word_ids.find(ref[j]);
      if (it != word_ids.end()) positions_[it->second].push_back(j);
    }
    need_.assign(word_ids.size(), 0);
    remaining_.assign(word_ids.size(), 0);
    for (std::size_t w : cand_word_) ++remaining_[w];
    for (std::size_t w = 0; w < need_.size(); ++w) {
      need_[w] = std::min(remaining_[w], positions_[w].size());
      matches_ += need_[w];
    }
    done_.assign(word_ids.size(), 0);
  }

  MeteorAlignment run() {
    if (matches_ == 0) return {};
    search(0, -1, 0, 0);
    return {matches_, matches_ - best_adj_};
  }

 private:
  void search(std::size_t i, std::ptrdiff_t prev_j, std::size_t adj, std::size_t matched) {
    if (adj + (matches_ - matched) <= best_adj_ && found_) return;
    if (i == cand_.size()) {
      if (!found_ || adj > best_adj_) best_adj_ = adj;
      found_ = true;
      return;
    }
    const std::size_t w = cand_word_[i];
    --remaining_[w];
    if (done_[w] < need_[w]) {
      // Try the position continuing the current run first.
      std::vector<std::size_t> order = positions_[w];
      std::stable_partition(order.begin(), order.end(),
                            [&](std::size_t j) { return static_cast<std::ptrdiff_t>(j) == prev_j + 1; });
      for (std::size_t j : order) {
        if (used_[j]) continue;
        used_[j] = 1;
        ++done_[w];
        const bool continues = static_cast<std::ptrdiff_t>(j) == prev_j + 1 && prev_j >= 0;
        search(i + 1, static_cast<std::ptrdiff_t>(j), adj + (continues ? 1 : 0), matched + 1);
        --done_[w];
        used_[j] = 0;
      }
    }
    // Leave position i unmatched only if the word's quota can still be met later.
    if (remaining_[w] >= need_[w] - done_[w]) search(i + 1, -1, adj, matched);
    ++remaining_[w];
  }

  const Tokens& cand_;
  const Tokens& ref_;
  std::vector<std::uint8_t> used_;
  std::vector<std::size_t> cand_word_;
  std::vector<std::vector<std::size_t>> positions_;
  std::vector<std::size_t> need_, remaining_, done_;
  std::size_t matches_ = 0;
  std::size_t best_adj_ = 0;
  bool found_ = false;
};

}  // namespace

MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference) {
  return MeteorSearch(candidate, reference).run();
}

double meteor_exact(const Tokens& candidate, std::span<const Tokens> refs) {
  require_refs(refs);
  if (candidate.empty()) return 0.0;
  double best = 0.0;
  for (const auto& ref : refs) {
    if (ref.empty()) continue;
    const auto a = meteor_align(candidate, ref);
    if (a.matches == 0) continue;
    const double m = static_cast<double>(a.matches);
    const double p = m / static_cast<double>(candidate.size());
    const double r = m / static_cast<double>(ref.size());
    const double fmean = 10.0 * p * r / (r + 9.0 * p);
    const double frag = static_cast<double>(a.chunks) / m;
    const double penalty = 0.5 * frag * frag * frag;
    best = std::max(best, fmean * (1.0 - penalty));
  }
  return best;
}

CiderResult cider(const CandidateMap& candidates, const ReferenceMap& refs) {
  require_same_ids(candidates, refs, "CIDEr");
  constexpr std::size_t kMaxN = 4;
  std::unordered_map<std::string, std::size_t> df;
  for (const auto& [id, rs] : refs) {
    std::set<std::string> seen;
    for (const auto& r : rs)
      for (std::size_t n = 1; n <= kMaxN; ++n)
        for (const auto& [g, _] : count_ngrams(r, n)) seen.insert(g);
    for (const auto& g : seen) ++df[g];
  }
  const double log_images = std::log(static_cast<double>(refs.size()));

  struct Vec {
    std::unordered_map<std::string, double> weights;
    double norm = 0.0;
  };
  auto tfidf = [&](const Tokens& t, std::size_t n) {
    Vec v;
    for (const auto& [g, k] : count_ngrams(t, n)) {
      auto it = df.find(g);
      const double d = it == df.end() ? 1.0 : static_cast<double>(it->second);
      const double w = static_cast<double>(k) * (log_images - std::log(d));
      v.weights.emplace(g, w);
      v.norm += w * w;
    }
    v.norm = std::sqrt(v.norm);
    return v;
  };

  CiderResult result;
  double total = 0.0;
  for (const auto& [id, cand] : candidates) {
    const auto& rs = refs.at(id);
    if (rs.empty()) throw Error(ErrorCode::kMissingReferences, "image '" + id + "' has no references");
    double score = 0.0;
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      const Vec c = tfidf(cand, n);
      double acc = 0.0;
      for (const auto& r : rs) {
        const Vec rv = tfidf(r, n);
        if (c.norm == 0.0 || rv.norm == 0.0) continue;
        double dot = 0.0;
        for (const auto& [g, w] : c.weights) {
          auto it = rv.weights.find(g);
          if (it != rv.weights.end()) dot += w * it->second;
        }
        acc += dot / (c.norm * rv.norm);
      }
      score += acc / static_cast<double>(rs.size());
    }
    score = 10.0 * score / static_cast<double>(kMaxN);
    result.per_image[id] = score;
    total += score;
  }
  result.corpus = candidates.empty() ? 0.0 : total / static_cast<double>(candidates.size());
  return result;
}

SceneGraph::SceneGraph(const std::vector<std::vector<std::string>>& tuples) {
  for (auto t : tuples) {
    if (t.empty() || t.size() > 3) {
      throw Error(ErrorCode::kInvalidArgument, "scene-graph tuples have 1 to 3 elements");
    }
    for (auto& e : t) {
      if (e.empty()) throw Error(ErrorCode::kInvalidArgument, "empty scene-graph tuple element");
      std::transform(e.begin(), e.end(), e.begin(), [](unsigned char ch) { return std::tolower(ch); });
    }
    tuples_.insert(std::move(t));
  }
}

double tuple_f1(const SceneGraph& candidate, const SceneGraph& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& t : candidate.tuples()) common += reference.tuples().count(t);
  if (common == 0) return 0.0;
  const double p = static_cast<double>(common) / static_cast<double>(candidate.size());
  const double r = static_cast<double>(common) / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

std::vector<std::string> metric_names(bool with_spice) {
  std::vector<std::string> names = {"bleu1", "bleu2", "bleu3", "bleu4", "rougeL", "meteor", "cider"};
  if (with_spice) names.emplace_back("spice_f1");
  return names;
}

MetricReport evaluate_corpus(const CandidateMap& candidates, const ReferenceMap& refs,
                             const std::map<std::string, GraphPair>* graphs) {
  require_same_ids(candidates, refs, "evaluate");
  if (graphs) require_same_ids(candidates, *graphs, "scene graphs");
  MetricReport report;
  const CiderResult cid = cider(candidates, refs);
  std::map<std::string, double> sums;
  for (const auto& [id, cand] : candidates) {
    const auto& rs = refs.at(id);
    auto& row = report.per_sentence[id];
    if (cand.empty()) report.flagged.push_back(id + ": empty candidate");
    for (int n = 1; n <= 4; ++n) row["bleu" + std::to_string(n)] = bleu_n(cand, rs, n);
    row["rougeL"] = rouge_l(cand, rs);
    row["meteor"] = meteor_exact(cand, rs);
    row["cider"] = cid.per_image.at(id);
    if (graphs) {
      const auto& gp = graphs->at(id);
      if (gp.candidate.empty() || gp.reference.empty()) report.flagged.push_back(id + ": empty scene graph");
      row["spice_f1"] = tuple_f1(gp.candidate, gp.reference);
    }
    for (const auto& [k, v] : row) sums[k] += v;
  }
  const auto count = static_cast<double>(candidates.size());
  for (const auto& name : metric_names(graphs != nullptr)) {
    if (name.rfind("bleu", 0) == 0) {
      report.corpus[name] = corpus_bleu(candidates, refs, name.back() - '0');
    } else {
      report.corpus[name] = count > 0 ? sums[name] / count : 0.0;
    }
  }
  return report;
}

std::string MetricReport::to_json(const std::string& timestamp) const {
  const bool spice = corpus.count("spice_f1") > 0;
  const auto names = metric_names(spice);
  auto quote = [](const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
      if (ch == '"' || ch == '\\') {
        out.push_back('\\');
        out.push_back(ch);
      } else if (static_cast<unsigned char>(ch) < 0x20) {
        char buf[8];
        std::snprintf(buf, sizeof buf, "\\u%04x", static_cast<unsigned>(static_cast<unsigned char>(ch)));
        out += buf;
      } else {
        out.push_back(ch);
      }
    }
    return out + "\"";
  };
  auto number = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  auto object = [&](const std::map<std::string, double>& m, const std::string& indent) {
    std::string out = "{";
    bool first = true;
    for (const auto& name : names) {
      auto it = m.find(name);
      if (it == m.end()) continue;
      out += (first ? "\n" : ",\n") + indent + "  " + quote(name) + ": " + number(it->second);
      first = false;
    }
    return out + "\n" + indent + "}";
  };
  std::string out = "{\n";
  if (!timestamp.empty()) out += "  \"timestamp\": " + quote(timestamp) + ",\n";
  out += "  \"corpus\": " + object(corpus, "  ") + ",\n";
  out += "  \"per_sentence\": {";
  bool first = true;
  for (const auto& [id, row] : per_sentence) {
    out += (first ? "\n" : ",\n") + std::string("    ") + quote(id) + ": " + object(row, "    ");
    first = false;
  }
  out += per_sentence.empty() ? "},\n" : "\n  },\n";
  out += "  \"flagged\": [";
  for (std::size_t i = 0; i < flagged.size(); ++i) out += (i ? ", " : "") + quote(flagged[i]);
  out += "]\n}\n";
  return out;
}

}  // namespace capgen
