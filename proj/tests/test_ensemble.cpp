#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ensemble_fixtures.hpp"
#include "support.hpp"

using namespace capgen;
using capgen::testing::code_of;

namespace {

CandidateSet set_of(std::vector<std::pair<std::string, std::string>> entries) {
  CandidateSet s{"img", {}};
  for (auto& [m, c] : entries) s.entries.push_back({m, tokenize(c), 0.0});
  return s;
}

}  // namespace

TEST_CASE("majority vote examples") {
  const std::vector<std::size_t> aab{0, 0, 1}, ab{0, 1}, bbb{1, 1, 1};
  CHECK(majority_vote(VoteMatrix::from_votes(aab, 2)) == 0);
  CHECK(majority_vote(VoteMatrix::from_votes(ab, 2)) == 0);
  CHECK(majority_vote(VoteMatrix::from_votes(bbb, 2)) == 1);

  VoteMatrix v(3, 4);
  CHECK(code_of([&] { v.validate(); }) == ErrorCode::kInvalidArgument);
  v.set_vote(0, 3);
  v.set_vote(1, 2);
  v.set_vote(2, 3);
  v.set_vote(1, 3);  // re-voting replaces the row
  CHECK(v.at(1, 2) == 0);
  CHECK(majority_vote(v) == 3);
  CHECK(code_of([] { majority_vote(VoteMatrix(0, 3)); }) == ErrorCode::kEmptyMatrix);
  CHECK(code_of([] { VoteMatrix(2, 2).set_vote(0, 2); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("majority vote agrees with a vote counter") {
  std::mt19937 rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    std::size_t classes = 0;
    const auto votes = capgen::testing::random_votes(rng, classes);
    const auto m = VoteMatrix::from_votes(votes, classes);
    const auto winner = majority_vote(m);
    CHECK(winner == capgen::testing::count_votes(votes, classes));

    // Adding one vote for the winner and one for a loser keeps a strict winner in place.
    auto more = votes;
    more.push_back(winner);
    more.push_back((winner + 1) % classes);
    CHECK(majority_vote(VoteMatrix::from_votes(more, classes)) == winner);
  }
}

TEST_CASE("bleu vote") {
  const References refs{tokenize("a b c d e f g h i j")};
  // Equal lengths keep the brevity penalty at 1, so BLEU-1 is 5/10, 7/10 and 7/10.
  const auto s = set_of({{"m1", "a b c d e x x x x x"}, {"m2", "a b c d e f g y y y"}, {"m3", "a b c d e f g z z z"}});
  const auto pick = bleu_vote(s, refs);
  CHECK(pick.model == "m2");
  CHECK(bleu_vote(set_of({{"solo", "q"}}), refs).model == "solo");
  for (const auto& e : s.entries) CHECK(bleu_n(pick.caption, refs, 1) >= bleu_n(e.caption, refs, 1));
  CHECK(code_of([&] { bleu_vote(s, References{}); }) == ErrorCode::kMissingReferences);
}

TEST_CASE("consensus vote") {
  const auto three = set_of({{"odd", "x y z"}, {"m1", "a dog runs"}, {"m2", "a dog runs"}, {"m3", "a dog runs"}});
  CHECK(consensus_vote(three).model == "m1");
  CHECK(consensus_vote(set_of({{"p", "a b"}, {"q", "c d"}})).model == "p");
  CHECK(code_of([] { consensus_vote(set_of({{"p", "a b"}})); }) == ErrorCode::kTooFewCandidates);

  // By hand, "a b c" scores (2/3 + 1/3)/2 = 0.5, "a b d" scores (2/3 + 0)/2 = 1/3 and
  // "c e f" scores 1/6 against the others. A second "a b c" only widens the lead.
  auto s = set_of({{"m1", "a b d"}, {"m2", "a b c"}, {"m3", "c e f"}});
  CHECK(consensus_vote(s).model == "m2");
  s.entries.push_back({"m4", tokenize("a b c"), 0.0});
  CHECK(consensus_vote(s).model == "m2");
}

TEST_CASE("majority over captions and run_ensemble") {
  CandidateSet s{"img", {}};
  for (int m = 0; m < 8; ++m) s.entries.push_back({"m" + std::to_string(m), tokenize(m < 3 ? "other words" : "a dog"), 0});
  CHECK(majority_caption(s).caption == tokenize("a dog"));
  CHECK(majority_caption(s).model == "m3");

  const auto corpus = capgen::testing::synthetic_members(3, 5, 4);
  CHECK(run_ensemble(corpus.candidates, nullptr, EnsembleMode::kConsensus).size() == 5);
  CHECK(run_ensemble(corpus.candidates, nullptr, EnsembleMode::kMajority).size() == 5);
  CHECK(code_of([&] { run_ensemble(corpus.candidates, nullptr, EnsembleMode::kBleuVote); }) ==
        ErrorCode::kMissingReferences);

  for (auto mode : {EnsembleMode::kBleuVote, EnsembleMode::kMajority, EnsembleMode::kConsensus})
    CHECK(parse_mode(mode_name(mode)) == mode);
  CHECK(parse_mode("bleu-vote") == EnsembleMode::kBleuVote);
  CHECK(code_of([] { parse_mode("stacking"); }) == ErrorCode::kUnknownMode);
}

TEST_CASE("bleu vote dominates every member on average") {
  for (std::uint32_t seed = 0; seed < 5; ++seed) {
    const auto corpus = capgen::testing::synthetic_members(4, 20, seed);
    const auto picked = run_ensemble(corpus.candidates, &corpus.refs, EnsembleMode::kBleuVote);
    double ensemble = 0;
    std::vector<double> member(corpus.models.size(), 0.0);
    for (const auto& [id, set] : corpus.candidates) {
      ensemble += bleu_n(picked.at(id).caption, corpus.refs.at(id), 1);
      for (std::size_t m = 0; m < member.size(); ++m) member[m] += bleu_n(set.entries[m].caption, corpus.refs.at(id), 1);
    }
    for (double m : member) CHECK(ensemble >= m);
  }
}

TEST_CASE("candidate set validation") {
  CHECK(code_of([] { CandidateSet{"x", {}}.validate(); }) == ErrorCode::kTooFewCandidates);
  CHECK(code_of([] { set_of({{"a", "x"}, {"a", "y"}}).validate(); }) == ErrorCode::kInvalidArgument);
}
