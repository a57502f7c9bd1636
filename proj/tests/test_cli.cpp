#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "capgen/checkpoint.hpp"
#include "capgen/cli.hpp"
#include "capgen/decode.hpp"
#include "capgen/vision.hpp"

using namespace capgen;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "capgen");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void put(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

struct Workspace {
  fs::path dir;

  explicit Workspace(const std::string& name) : dir(fs::temp_directory_path() / ("capgen_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string operator/(const std::string& f) const { return (dir / f).string(); }
};

const std::vector<std::pair<std::string, std::vector<std::string>>> kCaptions = {
    {"im0", {"A dog runs on grass.", "A brown dog is running."}},
    {"im1", {"Two cats sit on a mat.", "Cats are sitting."}},
    {"im2", {"A man rides a bike.", "A person on a bicycle."}},
    {"im3", {"Children play in a park.", "Kids are playing."}},
    {"im4", {"A red car on a road.", "A car drives."}},
    {"im5", {"A bird flies over water.", "A bird in the sky."}},
    {"im6", {"Snow covers a hill.", "A snowy hill."}},
    {"im7", {"A boy kicks a ball.", "A child plays with a ball."}},
};

// Captions, a 6-dim resnet50 feature file, a tiny model config and a manifest with
// train im0..im2, val im3..im4 and test im5..im7.
void write_dataset(const Workspace& ws, const std::vector<std::string>& feature_ids = {}) {
  std::string caps;
  for (const auto& [id, texts] : kCaptions)
    for (std::size_t i = 0; i < texts.size(); ++i) caps += id + "#" + std::to_string(i) + "\t" + texts[i] + "\n";
  put(ws / "captions.txt", caps);

  std::mt19937 rng(8);
  std::normal_distribution<float> n(0, 1);
  FeatureTable table;
  for (const auto& [id, _] : kCaptions) {
    if (!feature_ids.empty() && std::find(feature_ids.begin(), feature_ids.end(), id) == feature_ids.end()) continue;
    FeatureMap fm{"resnet50", std::vector<float>(6)};
    for (auto& v : fm.values) v = n(rng);
    table.insert(id, fm);
  }
  const auto bytes = write_feature_file(table);
  put(ws / "resnet50.capf", std::string(bytes.begin(), bytes.end()));

  put(ws / "config.json", R"({"d_model": 8, "heads": 2, "layers_enc": 1, "layers_dec": 1, "d_ff": 16,
    "max_len": 10, "batch_size": 4, "max_epochs": 3, "patience": 3, "optimizer": "adam",
    "base_lr": 0.001, "peak_lr": 0.01})");
  put(ws / "manifest.json", R"({"captions": "captions.txt", "features": {"resnet50": "resnet50.capf"},
    "splits": {"train": ["im0", "im1", "im2"], "val": ["im3", "im4"], "test": ["im5", "im6", "im7"]}})");
}

Result train(const Workspace& ws, const std::string& out, const std::string& seed = "42") {
  return invoke({"train", "--config", ws / "config.json", "--manifest", ws / "manifest.json", "--backbone",
                 "resnet50", "--vocab", ws / "vocab.json", "--out", ws / out, "--seed", seed});
}

}  // namespace

TEST_CASE("preprocess") {
  Workspace ws("pre");
  put(ws / "two.txt", "a.jpg#0\tDog runs fast.\na.jpg#1\tdog RUNS\n");
  auto r = invoke({"preprocess", "--captions", ws / "two.txt", "--out", ws / "v.json"});
  CHECK(r.code == 0);
  CHECK(r.out.find("vocab_size: 7") != std::string::npos);
  CHECK(Vocabulary::from_json(slurp(ws / "v.json")).size() == 7);
  CHECK(r.err.empty());

  r = invoke({"preprocess", "--captions", ws / "two.txt", "--out", ws / "v.json", "--min-freq", "5"});
  CHECK(r.code == 0);
  CHECK(r.out.find("vocab_size: 4") != std::string::npos);
  CHECK(r.err.find("warning") != std::string::npos);

  put(ws / "dup.txt", "a.jpg#0\tone\nb.jpg#0\ttwo\na.jpg#0\tthree\n");
  r = invoke({"preprocess", "--captions", ws / "dup.txt", "--out", ws / "v.json"});
  CHECK(r.code == cli::kExitInput);
  CHECK(r.err.find("line 3") != std::string::npos);

  CHECK(invoke({"preprocess", "--captions", ws / "missing.txt", "--out", ws / "v.json"}).code == cli::kExitInput);
}

TEST_CASE("argument handling") {
  CHECK(invoke({}).code == cli::kExitInput);
  CHECK(invoke({"bogus"}).code == cli::kExitInput);
  CHECK(invoke({"--help"}).code == cli::kExitOk);
  CHECK(invoke({"caption", "--manifest", "m"}).code == cli::kExitInput);
  CHECK(invoke({"ensemble", "--candidates", "c", "--out", "o", "--mode", "stacking"}).code == cli::kExitInput);
}

TEST_CASE("train, caption, ensemble and evaluate end to end") {
  Workspace ws("e2e");
  write_dataset(ws);
  REQUIRE(invoke({"preprocess", "--captions", ws / "captions.txt", "--out", ws / "vocab.json"}).code == 0);

  auto r = train(ws, "a.capm");
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("epoch 0 ") != std::string::npos);
  const std::string history = slurp(ws / "a.capm.history.json");
  CHECK(nlohmann::json::parse(history).size() <= 3);

  // Same seed, same history and weights; a different seed changes them.
  REQUIRE(train(ws, "b.capm").code == 0);
  CHECK(slurp(ws / "b.capm.history.json") == history);
  CHECK(slurp(ws / "b.capm") == slurp(ws / "a.capm"));
  REQUIRE(train(ws, "c.capm", "7").code == 0);
  CHECK(slurp(ws / "c.capm") != slurp(ws / "a.capm"));

  // Beam width 1 reproduces greedy decoding of the stored model.
  r = invoke({"caption", "--checkpoint", ws / "a.capm", "--manifest", ws / "manifest.json", "--vocab",
              ws / "vocab.json", "--beam", "1", "--out", ws / "greedy.json"});
  REQUIRE(r.code == 0);
  const auto model = load_checkpoint([&] {
    const auto s = slurp(ws / "a.capm");
    return std::vector<std::uint8_t>(s.begin(), s.end());
  }());
  const auto vocab = Vocabulary::from_json(slurp(ws / "vocab.json"));
  const auto feats = [&] {
    const auto s = slurp(ws / "resnet50.capf");
    return read_feature_file(std::vector<std::uint8_t>(s.begin(), s.end()), "resnet50");
  }();
  const auto greedy_json = nlohmann::json::parse(slurp(ws / "greedy.json"));
  for (const std::string id : {"im5", "im6", "im7"}) {
    const std::vector<FeatureMap> src{feats.at(id)};
    const auto seq = greedy_decode(encode(model, src), model, model.config.max_len);
    const std::string text = decode(std::span<const TokenId>(seq.ids.data(), seq.length), vocab);
    CHECK(greedy_json.at(id).at(0).at("caption") == text);
    CHECK(greedy_json.at(id).at(0).at("model") == "resnet50");
  }

  // Two checkpoints over three images; default beam width.
  r = invoke({"caption", "--checkpoint", ws / "a.capm", "--checkpoint", ws / "c.capm", "--manifest",
              ws / "manifest.json", "--vocab", ws / "vocab.json", "--out", ws / "cands.json"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("beam 10") != std::string::npos);
  const auto cands = nlohmann::json::parse(slurp(ws / "cands.json"));
  std::size_t entries = 0;
  for (const auto& [id, arr] : cands.items()) entries += arr.size();
  CHECK(entries == 6);
  CHECK(cands.at("im5").at(1).at("model") == "resnet50#2");

  // Add a member that copies the first reference: bleu-vote must then reach BLEU-1 = 1.
  auto with_oracle = cands;
  for (const auto& [id, texts] : kCaptions) {
    if (with_oracle.contains(id)) with_oracle[id].push_back({{"model", "oracle"}, {"caption", texts[0]}, {"logprob", 0}});
  }
  put(ws / "oracle.json", with_oracle.dump());
  r = invoke({"ensemble", "--candidates", ws / "oracle.json", "--refs", ws / "captions.txt", "--out", ws / "hyp.txt"});
  REQUIRE(r.code == 0);
  r = invoke({"evaluate", "--hyp", ws / "hyp.txt", "--refs", ws / "captions.txt", "--out", ws / "rep.json"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const auto rep = nlohmann::json::parse(slurp(ws / "rep.json"));
  CHECK(rep.at("corpus").at("bleu1").get<double>() == 1.0);
  CHECK(rep.contains("timestamp"));

  for (const char* mode : {"majority", "consensus"}) {
    r = invoke({"ensemble", "--candidates", ws / "cands.json", "--mode", mode, "--out", ws / "m.txt"});
    CHECK(r.code == 0);
  }
  CHECK(invoke({"ensemble", "--candidates", ws / "cands.json", "--out", ws / "m.txt"}).code == cli::kExitInput);

  r = invoke({"caption", "--checkpoint", ws / "a.capm", "--manifest", ws / "manifest.json", "--vocab",
              ws / "vocab.json", "--beam", "2", "--out", ws / "c2.json", "--mode", "bleu-vote", "--captions-out",
              ws / "voted.txt"});
  CHECK(r.code == 0);
  CHECK(slurp(ws / "voted.txt").rfind("im5\t", 0) == 0);
}

TEST_CASE("evaluate") {
  Workspace ws("eval");
  write_dataset(ws);
  std::string hyp;
  for (const auto& [id, texts] : kCaptions) hyp += id + "\t" + texts[1] + "\n";
  put(ws / "hyp.txt", hyp);

  auto run_eval = [&](std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"evaluate", "--hyp", ws / "hyp.txt", "--refs", ws / "captions.txt", "--out",
                                  ws / "r.json", "--no-timestamp"};
    args.insert(args.end(), extra.begin(), extra.end());
    return invoke(args);
  };
  auto r = run_eval();
  REQUIRE(r.code == 0);
  const std::string first = slurp(ws / "r.json");
  const auto j = nlohmann::json::parse(first);
  CHECK(!j.contains("timestamp"));
  for (const char* k : {"bleu1", "bleu2", "bleu3", "bleu4"}) CHECK(j.at("corpus").at(k).get<double>() == 1.0);
  CHECK(r.out.find("bleu1     1.000000") != std::string::npos);
  std::vector<std::string> keys;
  const auto ordered = nlohmann::ordered_json::parse(first);
  for (const auto& [k, _] : ordered.at("corpus").items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"bleu1", "bleu2", "bleu3", "bleu4", "rougeL", "meteor", "cider"});
  REQUIRE(run_eval().code == 0);
  CHECK(slurp(ws / "r.json") == first);

  nlohmann::json graphs, ref_graphs;
  for (const auto& [id, _] : kCaptions) {
    graphs[id] = {{"dog"}, {"dog", "brown"}};
    ref_graphs[id] = {{"dog"}};
  }
  graphs["im0"] = nlohmann::json::array();
  put(ws / "g.json", graphs.dump());
  put(ws / "rg.json", ref_graphs.dump());
  r = run_eval({"--graphs", ws / "g.json", "--ref-graphs", ws / "rg.json"});
  CHECK(r.code == 0);
  CHECK(r.out.find("spice_f1") != std::string::npos);
  CHECK(r.out.find("flagged: im0: empty scene graph") != std::string::npos);
  CHECK(run_eval({"--graphs", ws / "g.json"}).code == cli::kExitInput);

  graphs.erase("im3");
  put(ws / "g.json", graphs.dump());
  CHECK(run_eval({"--graphs", ws / "g.json", "--ref-graphs", ws / "rg.json"}).code == cli::kExitInput);

  put(ws / "hyp.txt", hyp + "ghost\ta caption\n");
  r = run_eval();
  CHECK(r.code == cli::kExitInput);
  CHECK(r.err.find("ghost") != std::string::npos);
}

TEST_CASE("input and numeric failures") {
  Workspace ws("fail");
  write_dataset(ws, {"im0", "im1", "im3", "im4", "im5", "im6", "im7"});
  REQUIRE(invoke({"preprocess", "--captions", ws / "captions.txt", "--out", ws / "vocab.json"}).code == 0);
  auto r = train(ws, "x.capm");
  CHECK(r.code == cli::kExitInput);
  CHECK(r.err.find("'im2'") != std::string::npos);

  write_dataset(ws);
  put(ws / "config.json", R"({"d_model": 8, "heads": 2, "layers_enc": 1, "layers_dec": 1, "max_len": 10,
    "base_lr": 1e30, "peak_lr": 1e30, "max_epochs": 2, "optimizer": "adam"})");
  r = train(ws, "x.capm");
  INFO(r.err);
  CHECK(r.code == cli::kExitNumeric);
  CHECK(r.err.find("epoch 0") != std::string::npos);

  put(ws / "config.json", R"({"vocab_size": 3})");
  CHECK(train(ws, "x.capm").code == cli::kExitInput);

  put(ws / "manifest.json", R"({"captions": "captions.txt", "splits": {"train": ["im0"], "val": ["im0"]}})");
  r = invoke({"caption", "--checkpoint", ws / "none.capm", "--manifest", ws / "manifest.json", "--vocab",
              ws / "vocab.json", "--out", ws / "o.json"});
  CHECK(r.code == cli::kExitInput);
  CHECK(r.err.find("'im0'") != std::string::npos);

  // A checkpoint built for another vocabulary is rejected.
  write_dataset(ws);
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.layers_enc = cfg.layers_dec = 1;
  cfg.vocab_size = 5;
  cfg.sources = {{"resnet50", 6}};
  const auto bytes = save_checkpoint(init_model(cfg, 1));
  put(ws / "other.capm", std::string(bytes.begin(), bytes.end()));
  r = invoke({"caption", "--checkpoint", ws / "other.capm", "--manifest", ws / "manifest.json", "--vocab",
              ws / "vocab.json", "--out", ws / "o.json"});
  CHECK(r.code == cli::kExitInput);
  CHECK(r.err.find("vocab_size") != std::string::npos);
}
