#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "capgen/textpipe.hpp"
#include "support.hpp"

using namespace capgen;
using capgen::testing::code_of;

TEST_CASE("normalize") {
  CHECK(normalize("A man, runs!") == "a man runs");
  CHECK(normalize("$100 & more") == "100 more");
  CHECK(normalize("") == "");
  CHECK(normalize("  Two\tDOGS\n") == "two dogs");
  CHECK(normalize("caf\xc3\xa9 au lait") == "caf au lait");
}

TEST_CASE("tokenize") {
  CHECK(tokenize("a man runs") == Tokens{"a", "man", "runs"});
  CHECK(tokenize("").empty());
  CHECK(tokenize("dog dog") == Tokens{"dog", "dog"});
}

TEST_CASE("add_boundaries") {
  CHECK(add_boundaries({"a", "man"}) == Tokens{"<start>", "a", "man", "<end>"});
  CHECK(add_boundaries({}) == Tokens{"<start>", "<end>"});
  CHECK(add_boundaries(Tokens(20, "w")).size() == 22);
  CHECK(code_of([] { add_boundaries({"a", "<end>"}); }) == ErrorCode::kSpecialTokenCollision);
  CHECK(code_of([] { add_boundaries({"<pad>"}); }) == ErrorCode::kSpecialTokenCollision);
}

TEST_CASE("vocabulary construction") {
  const std::vector<Tokens> corpus{{"a", "a", "b"}};
  const auto v = Vocabulary::build(corpus, 1);
  CHECK(v.size() == 6);
  CHECK(v.id("a") == 4);
  CHECK(v.id("b") == 5);
  CHECK(v.word(0) == "<pad>");
  CHECK(v.word(3) == "<unk>");

  const auto v2 = Vocabulary::build(corpus, 2);
  CHECK(v2.size() == 5);
  CHECK(v2.id("b") == kUnkId);

  const std::vector<Tokens> tie{{"b", "a"}};
  CHECK(Vocabulary::build(tie).id("a") == 4);

  const std::vector<Tokens> boundaries{{"<start>", "x", "<end>"}};
  CHECK(Vocabulary::build(boundaries).size() == 5);

  CHECK(code_of([] { Vocabulary::build(std::vector<Tokens>{{}}); }) == ErrorCode::kEmptyCorpus);
  CHECK(code_of([] { Vocabulary::build(std::vector<Tokens>{}); }) == ErrorCode::kEmptyCorpus);
  CHECK(code_of([&] { Vocabulary::build(corpus, 0); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("vocabulary is deterministic and round-trips through JSON") {
  std::mt19937 rng(4);
  std::vector<Tokens> corpus;
  for (int s = 0; s < 50; ++s) {
    Tokens t;
    for (int i = 0; i < 8; ++i) t.push_back("w" + std::to_string(rng() % 30));
    corpus.push_back(t);
  }
  const auto a = Vocabulary::build(corpus), b = Vocabulary::build(corpus);
  CHECK(a == b);
  const auto back = Vocabulary::from_json(a.to_json());
  CHECK(back == a);
  CHECK(back.to_json() == a.to_json());
  CHECK(code_of([] { Vocabulary::from_json("{\"words\": [\"a\"]}"); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([] { Vocabulary::from_json("not json"); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("encode and decode") {
  const auto v = Vocabulary::build(std::vector<Tokens>{{"a"}});
  const auto seq = encode({"<start>", "a", "<end>"}, v, 5);
  CHECK(seq.ids == std::vector<TokenId>{1, 4, 2, 0, 0});
  CHECK(seq.length == 3);
  CHECK(decode(seq.ids, v) == "a");
  CHECK(encode({"zyx"}, v, 3).ids[0] == kUnkId);

  const auto cut = encode(add_boundaries({"a", "a", "a", "a"}), v, 4);
  CHECK(cut.ids == std::vector<TokenId>{1, 4, 4, 2});
  CHECK(cut.length == 4);
}

TEST_CASE("decode inverts the pipeline for in-vocabulary text") {
  const std::vector<std::string> sentences{"A dog runs on the grass.", "Two kids, one ball!", "the the the", "x"};
  std::vector<Tokens> corpus;
  for (const auto& s : sentences) corpus.push_back(tokenize(normalize(s)));
  const auto v = Vocabulary::build(corpus);
  for (const auto& s : sentences) {
    const auto seq = encode(preprocess_caption(s), v, 24);
    CHECK(decode(seq.ids, v) == normalize(s));
    for (std::size_t i = seq.length; i < seq.ids.size(); ++i) CHECK(seq.ids[i] == kPadId);
    for (std::size_t i = 0; i < seq.length; ++i) CHECK(seq.ids[i] != kPadId);
  }
}

TEST_CASE("caption file parsing") {
  const auto recs = parse_captions("img1.jpg#0\tA dog.\n\nimg1.jpg#1\tA cat.\r\nimg2.jpg#0\tBirds\n");
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].image_id == "img1.jpg");
  CHECK(recs[1].index == 1);
  CHECK(recs[1].text == "A cat.");
  CHECK(recs[2].line == 4);
  const auto grouped = group_captions(recs);
  CHECK(grouped.at("img1.jpg").size() == 2);

  try {
    parse_captions("a#0\tx\nb#0\ty\na#0\tz\n");
    FAIL("duplicate accepted");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK(code_of([] { parse_captions("no tab here\n"); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([] { parse_captions("img#x\tcaption\n"); }) == ErrorCode::kInvalidArgument);
}
