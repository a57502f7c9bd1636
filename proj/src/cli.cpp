#include "capgen/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "capgen/checkpoint.hpp"
#include "capgen/decode.hpp"
#include "capgen/ensemble.hpp"
#include "capgen/error.hpp"
#include "capgen/metrics.hpp"
#include "capgen/textpipe.hpp"
#include "capgen/train.hpp"
#include "capgen/transformer.hpp"
#include "capgen/vision.hpp"

namespace capgen::cli {
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_bytes(path);
  return {bytes.begin(), bytes.end()};
}

void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

nlohmann::json parse_json(const std::string& text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, what + ": " + e.what());
  }
}

std::vector<CaptionRecord> load_captions(const fs::path& path) {
  try {
    return parse_captions(read_text(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

ReferenceMap reference_map(std::span<const CaptionRecord> records) {
  ReferenceMap refs;
  for (const auto& [id, texts] : group_captions(records)) {
    auto& r = refs[id];
    for (const auto& t : texts) r.push_back(tokenize(normalize(t)));
  }
  return refs;
}

// `<image_id>\t<caption>` per line, as written by the ensemble command.
std::map<std::string, std::string> parse_hypotheses(const std::string& content, const std::string& name) {
  std::map<std::string, std::string> out;
  std::istringstream in(content);
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw Error(ErrorCode::kInvalidArgument, name + ": line " + std::to_string(n) + ": expected '<id>\\t<caption>'");
    }
    if (!out.emplace(line.substr(0, tab), line.substr(tab + 1)).second) {
      throw Error(ErrorCode::kInvalidArgument,
                  name + ": line " + std::to_string(n) + ": duplicate image id '" + line.substr(0, tab) + "'");
    }
  }
  return out;
}

std::map<std::string, SceneGraph> load_graphs(const fs::path& path) {
  const auto j = parse_json(read_text(path), path.string());
  std::map<std::string, SceneGraph> out;
  try {
    for (const auto& [id, tuples] : j.items()) {
      out.emplace(id, SceneGraph(tuples.get<std::vector<std::vector<std::string>>>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, path.string() + ": " + e.what());
  }
  return out;
}

std::string timestamp_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// ---- manifest-backed data -------------------------------------------------------------------

struct Inputs {
  Manifest manifest;
  std::vector<CaptionRecord> captions;
  std::map<std::string, std::vector<std::string>> grouped;
};

Inputs load_inputs(const fs::path& manifest_path) {
  Inputs in;
  in.manifest = Manifest::load(manifest_path);
  in.captions = load_captions(in.manifest.captions_path);
  in.grouped = group_captions(in.captions);
  for (const auto& [split, ids] : in.manifest.splits) {
    for (const auto& id : ids) {
      if (!in.grouped.count(id)) {
        throw Error(ErrorCode::kInvalidArgument, "manifest split '" + split + "': image '" + id + "' has no captions");
      }
    }
  }
  return in;
}

FeatureTable load_features(const Manifest& m, const std::string& source) {
  const auto it = m.features_paths.find(source);
  if (it == m.features_paths.end()) {
    throw Error(ErrorCode::kInvalidArgument, "manifest has no feature file for source '" + source + "'");
  }
  try {
    return read_feature_file(read_bytes(it->second), source);
  } catch (const Error& e) {
    throw Error(e.code(), it->second.string() + ": " + e.what());
  }
}

void require_ids(const FeatureTable& table, std::span<const std::string> ids, const std::string& source) {
  for (const auto& id : ids) {
    if (!table.find(id)) {
      throw Error(ErrorCode::kInvalidArgument, "feature file for '" + source + "' has no entry for image '" + id + "'");
    }
  }
}

Image load_image(const Manifest& m, const std::string& id) {
  const auto it = m.image_paths.find(id);
  if (it == m.image_paths.end()) throw Error(ErrorCode::kInvalidArgument, "manifest lists no image for '" + id + "'");
  try {
    return prepare_image(load_ppm(read_bytes(it->second)));
  } catch (const Error& e) {
    throw Error(e.code(), it->second.string() + ": " + e.what());
  }
}

// Every split id must be present in every listed feature file.
void check_all_features(const Manifest& m) {
  for (const auto& [source, path] : m.features_paths) {
    const auto table = load_features(m, source);
    for (const auto& [split, ids] : m.splits) require_ids(table, ids, source);
  }
}

// ---- commands --------------------------------------------------------------------------------

struct PreprocessArgs {
  std::string captions, out;
  std::size_t min_freq = 1;
};

int cmd_preprocess(const PreprocessArgs& a, std::ostream& out, std::ostream& err) {
  const auto records = load_captions(a.captions);
  std::vector<Tokens> corpus;
  std::size_t tokens = 0;
  std::set<std::string> types;
  for (const auto& r : records) {
    corpus.push_back(preprocess_caption(r.text));
    tokens += corpus.back().size();
    for (const auto& w : tokenize(normalize(r.text))) types.insert(w);
  }
  const auto vocab = Vocabulary::build(corpus, a.min_freq);
  write_text(a.out, vocab.to_json());
  out << "captions: " << records.size() << "\n"
      << "tokens: " << tokens << "\n"
      << "types: " << types.size() << "\n"
      << "vocab_size: " << vocab.size() << "\n";
  if (vocab.size() == kNumSpecials) {
    err << "warning: min_freq " << a.min_freq << " exceeds every word frequency; the vocabulary holds only the "
        << kNumSpecials << " special tokens\n";
  }
  return kExitOk;
}

struct TrainArgs {
  std::string config, manifest, backbone, vocab, out, history;
  std::uint32_t seed = 42;
};

std::vector<TrainExample> build_examples(const Inputs& in, std::span<const std::string> ids,
                                         const FeatureTable* table, const Vocabulary& vocab, std::size_t max_len) {
  std::vector<TrainExample> out;
  for (const auto& id : ids) {
    TrainExample proto;
    proto.image_id = id;
    if (table) {
      proto.features.push_back(table->at(id));
    } else {
      proto.image = load_image(in.manifest, id);
    }
    for (const auto& text : in.grouped.at(id)) {
      TrainExample ex = proto;
      ex.target = encode(preprocess_caption(text), vocab, max_len);
      out.push_back(std::move(ex));
    }
  }
  return out;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  if (!is_registered_source(a.backbone)) {
    throw Error(ErrorCode::kInvalidArgument, "backbone '" + a.backbone + "' is not registered");
  }
  const nlohmann::json cfg_json =
      a.config.empty() ? nlohmann::json::object() : parse_json(read_text(a.config), a.config);
  TrainConfig tcfg = TrainConfig::from_json(cfg_json);
  tcfg.seed = a.seed;
  ModelConfig mcfg = ModelConfig::from_json(cfg_json);
  const auto vocab = Vocabulary::from_json(read_text(a.vocab));
  if (cfg_json.contains("vocab_size") && mcfg.vocab_size != vocab.size()) {
    throw Error(ErrorCode::kInvalidArgument, "config vocab_size " + std::to_string(mcfg.vocab_size) +
                                                 " differs from the vocabulary's " + std::to_string(vocab.size()));
  }
  mcfg.vocab_size = vocab.size();

  const Inputs in = load_inputs(a.manifest);
  const auto& train_ids = in.manifest.split("train");
  const auto& val_ids = in.manifest.split("val");
  check_all_features(in.manifest);

  std::optional<FeatureTable> table;
  if (a.backbone == kTinyCnnSource) {
    mcfg.sources = {{std::string(kTinyCnnSource), mcfg.d_model}};
  } else {
    table = load_features(in.manifest, a.backbone);
    require_ids(*table, train_ids, a.backbone);
    require_ids(*table, val_ids, a.backbone);
    const std::size_t dim = table->empty() ? 0 : table->entries().front().second.dim();
    mcfg.sources = {{a.backbone, dim}};
  }
  mcfg.validate();
  tcfg.validate();

  Dataset data;
  const FeatureTable* tp = table ? &*table : nullptr;
  data.train = build_examples(in, train_ids, tp, vocab, mcfg.max_len);
  data.val = build_examples(in, val_ids, tp, vocab, mcfg.max_len);

  auto model = init_model(mcfg, tcfg.seed);
  const auto result = fit(model, data, tcfg, [&out](const EpochRecord& r) {
    out << "epoch " << r.epoch << " train_loss " << std::fixed << std::setprecision(6) << r.train_loss
        << " val_loss " << r.val_loss << " lr " << std::scientific << std::setprecision(3) << r.lr << "\n"
        << std::defaultfloat;
  });
  write_bytes(a.out, save_checkpoint(model));
  const std::string history_path = a.history.empty() ? a.out + ".history.json" : a.history;
  write_text(history_path, history_to_json(result.history));
  out << "best epoch " << result.best_epoch << (result.stopped_early ? " (stopped early)" : "") << "\n"
      << "wrote " << a.out << " and " << history_path << "\n";
  return kExitOk;
}

struct CaptionArgs {
  std::vector<std::string> checkpoints;
  std::string manifest, vocab, split = "test", out, mode, captions_out;
  std::size_t beam = 10;
};

std::string model_name(const ModelConfig& cfg, std::set<std::string>& used) {
  std::string base = cfg.sources.front().first;
  for (std::size_t i = 1; i < cfg.sources.size(); ++i) base += "+" + cfg.sources[i].first;
  std::string name = base;
  for (int k = 2; used.count(name); ++k) name = base + "#" + std::to_string(k);
  used.insert(name);
  return name;
}

std::string write_captions(const std::map<std::string, Selection>& chosen) {
  std::string text;
  for (const auto& [id, sel] : chosen) {
    text += id + "\t";
    for (std::size_t i = 0; i < sel.caption.size(); ++i) text += (i ? " " : "") + sel.caption[i];
    text += "\n";
  }
  return text;
}

int cmd_caption(const CaptionArgs& a, std::ostream& out) {
  if (a.checkpoints.empty()) throw Error(ErrorCode::kInvalidArgument, "at least one --checkpoint is required");
  std::optional<EnsembleMode> mode;
  if (!a.mode.empty()) {
    mode = parse_mode(a.mode);
    if (a.captions_out.empty()) throw Error(ErrorCode::kInvalidArgument, "--mode needs --captions-out");
  }
  const auto vocab = Vocabulary::from_json(read_text(a.vocab));
  const Inputs in = load_inputs(a.manifest);
  const auto& ids = in.manifest.split(a.split);

  std::map<std::string, CandidateSet> all;
  for (const auto& id : ids) all[id].image_id = id;
  std::set<std::string> used;
  for (const auto& path : a.checkpoints) {
    CaptionModel<float> model;
    try {
      model = load_checkpoint(read_bytes(path));
    } catch (const Error& e) {
      throw Error(e.code(), path + ": " + e.what());
    }
    const auto& cfg = model.config;
    if (cfg.vocab_size != vocab.size()) {
      throw Error(ErrorCode::kInvalidArgument, path + ": checkpoint vocab_size " + std::to_string(cfg.vocab_size) +
                                                   " does not match the vocabulary (" + std::to_string(vocab.size()) +
                                                   ")");
    }
    std::map<std::string, FeatureTable> tables;
    for (const auto& [source, dim] : cfg.sources) {
      if (source == kTinyCnnSource) continue;
      auto table = load_features(in.manifest, source);
      require_ids(table, ids, source);
      if (table.at(ids.front()).dim() != dim) {
        throw Error(ErrorCode::kInvalidArgument, path + ": source '" + source + "' expects dimension " +
                                                     std::to_string(dim) + " but the feature file has " +
                                                     std::to_string(table.at(ids.front()).dim()));
      }
      tables.emplace(source, std::move(table));
    }
    const std::string name = model_name(cfg, used);
    BeamConfig bc;
    bc.width = a.beam;
    bc.max_len = cfg.max_len;
    for (const auto& id : ids) {
      Tensor<float> memory;
      if (cfg.uses_tinycnn()) {
        if (cfg.sources.size() != 1) {
          throw Error(ErrorCode::kInvalidArgument, path + ": tinycnn cannot be combined with other sources");
        }
        memory = encode_image(model, load_image(in.manifest, id));
      } else {
        std::vector<FeatureMap> feats;
        for (const auto& [source, dim] : cfg.sources) feats.push_back(tables.at(source).at(id));
        memory = encode(model, std::span<const FeatureMap>(feats));
      }
      const auto hyps = beam_search(memory, model, bc);
      const auto& best = hyps.front();
      const std::string text = decode(best.ids, vocab);
      all[id].entries.push_back({name, tokenize(text), best.logprob});
    }
  }

  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [id, set] : all) {
    auto& arr = j[id] = nlohmann::ordered_json::array();
    for (const auto& e : set.entries) {
      std::string text;
      for (std::size_t i = 0; i < e.caption.size(); ++i) text += (i ? " " : "") + e.caption[i];
      arr.push_back({{"model", e.model}, {"caption", text}, {"logprob", e.logprob}});
    }
  }
  write_text(a.out, j.dump(2) + "\n");
  out << "decoded " << ids.size() << " images with " << a.checkpoints.size() << " model(s), beam " << a.beam << "\n";
  if (mode) {
    const auto refs = reference_map(in.captions);
    write_text(a.captions_out, write_captions(run_ensemble(all, &refs, *mode)));
    out << "wrote " << mode_name(*mode) << " captions to " << a.captions_out << "\n";
  }
  return kExitOk;
}

std::map<std::string, CandidateSet> load_candidates(const fs::path& path) {
  const auto j = parse_json(read_text(path), path.string());
  std::map<std::string, CandidateSet> all;
  try {
    for (const auto& [id, arr] : j.items()) {
      CandidateSet set;
      set.image_id = id;
      for (const auto& e : arr) {
        set.entries.push_back({e.at("model").get<std::string>(), tokenize(normalize(e.at("caption").get<std::string>())),
                               e.value("logprob", 0.0)});
      }
      set.validate();
      all.emplace(id, std::move(set));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, path.string() + ": " + e.what());
  }
  if (all.empty()) throw Error(ErrorCode::kInvalidArgument, path.string() + ": no candidates");
  return all;
}

struct EnsembleArgs {
  std::string candidates, refs, mode = "bleu-vote", out;
};

int cmd_ensemble(const EnsembleArgs& a, std::ostream& out) {
  const auto mode = parse_mode(a.mode);
  const auto all = load_candidates(a.candidates);
  std::optional<ReferenceMap> refs;
  if (!a.refs.empty()) refs = reference_map(load_captions(a.refs));
  const auto chosen = run_ensemble(all, refs ? &*refs : nullptr, mode);
  write_text(a.out, write_captions(chosen));
  out << "selected " << chosen.size() << " captions (" << mode_name(mode) << ")\n";
  return kExitOk;
}

struct EvaluateArgs {
  std::string hyp, refs, graphs, ref_graphs, out;
  bool no_timestamp = false;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  CandidateMap cands;
  for (const auto& [id, text] : parse_hypotheses(read_text(a.hyp), a.hyp)) cands.emplace(id, tokenize(normalize(text)));
  // The reference file usually covers every split; score only the hypothesised images.
  const auto all_refs = reference_map(load_captions(a.refs));
  ReferenceMap refs;
  for (const auto& [id, _] : cands) {
    const auto it = all_refs.find(id);
    if (it == all_refs.end()) throw Error(ErrorCode::kMismatchedIds, "no reference captions for image '" + id + "'");
    refs.emplace(id, it->second);
  }

  std::optional<std::map<std::string, GraphPair>> graphs;
  if (a.graphs.empty() != a.ref_graphs.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "--graphs and --ref-graphs must be given together");
  }
  if (!a.graphs.empty()) {
    const auto cg = load_graphs(a.graphs);
    const auto rg = load_graphs(a.ref_graphs);
    graphs.emplace();
    for (const auto& [id, _] : cands) {
      const auto ci = cg.find(id);
      const auto ri = rg.find(id);
      if (ci == cg.end() || ri == rg.end()) {
        throw Error(ErrorCode::kMismatchedIds, "scene graphs missing for image '" + id + "'");
      }
      (*graphs)[id] = {ci->second, ri->second};
    }
    if (cg.size() != cands.size() || rg.size() != cands.size()) {
      throw Error(ErrorCode::kMismatchedIds, "scene graph files list images absent from the hypotheses");
    }
  }
  const auto report = evaluate_corpus(cands, refs, graphs ? &*graphs : nullptr);
  const std::string json = report.to_json(a.no_timestamp ? std::string() : timestamp_now());
  if (!a.out.empty()) write_text(a.out, json);

  out << std::left << std::setw(10) << "metric" << "corpus\n";
  for (const auto& name : metric_names(graphs.has_value())) {
    out << std::left << std::setw(10) << name << std::fixed << std::setprecision(6) << report.corpus.at(name) << "\n";
  }
  out << std::defaultfloat;
  for (const auto& f : report.flagged) out << "flagged: " << f << "\n";
  return kExitOk;
}

int exit_code_for(ErrorCode code) { return code == ErrorCode::kNonFinite ? kExitNumeric : kExitInput; }

}  // namespace

Manifest Manifest::load(const fs::path& path) {
  const auto j = parse_json(read_text(path), path.string());
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  Manifest m;
  try {
    m.captions_path = resolve(j.at("captions").get<std::string>());
    const auto features = j.value("features", nlohmann::json::object());
    for (const auto& [src, p] : features.items()) {
      if (!is_registered_source(src)) {
        throw Error(ErrorCode::kInvalidArgument, path.string() + ": unknown feature source '" + src + "'");
      }
      m.features_paths.emplace(src, resolve(p.get<std::string>()));
    }
    const auto images = j.value("images", nlohmann::json::object());
    for (const auto& [id, p] : images.items()) {
      m.image_paths.emplace(id, resolve(p.get<std::string>()));
    }
    for (const auto& [split, ids] : j.at("splits").items()) {
      m.splits.emplace(split, ids.get<std::vector<std::string>>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, path.string() + ": " + e.what());
  }
  std::map<std::string, std::string> owner;
  for (const auto& [split, ids] : m.splits) {
    for (const auto& id : ids) {
      const auto [it, fresh] = owner.emplace(id, split);
      if (!fresh) {
        throw Error(ErrorCode::kInvalidArgument, path.string() + ": image '" + id + "' appears in splits '" +
                                                     it->second + "' and '" + split + "'");
      }
    }
  }
  return m;
}

const std::vector<std::string>& Manifest::split(const std::string& name) const {
  const auto it = splits.find(name);
  if (it == splits.end() || it->second.empty()) {
    throw Error(ErrorCode::kEmptySplit, "manifest split '" + name + "' is missing or empty");
  }
  return it->second;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transformer image captioning with caption-level ensembles", "capgen"};
  app.require_subcommand(1);

  PreprocessArgs pre;
  auto* p = app.add_subcommand("preprocess", "Build a vocabulary from a captions file");
  p->add_option("--captions", pre.captions, "captions file (<id>#<n>\\t<text>)")->required();
  p->add_option("--out", pre.out, "vocabulary JSON to write")->required();
  p->add_option("--min-freq", pre.min_freq, "minimum word frequency")->check(CLI::PositiveNumber);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one captioning model on a single feature source");
  t->add_option("--config", tr.config, "JSON with model and training keys");
  t->add_option("--manifest", tr.manifest, "dataset manifest")->required();
  t->add_option("--backbone", tr.backbone, "feature source to train on")->required();
  t->add_option("--vocab", tr.vocab, "vocabulary JSON from preprocess")->required();
  t->add_option("--out", tr.out, "checkpoint to write")->required();
  t->add_option("--history", tr.history, "history JSON (default <out>.history.json)");
  t->add_option("--seed", tr.seed, "seed for initialisation, shuffling and augmentation");

  CaptionArgs cap;
  auto* c = app.add_subcommand("caption", "Decode a split with one or more checkpoints");
  c->add_option("--checkpoint", cap.checkpoints, "checkpoint file (repeatable)")->required();
  c->add_option("--manifest", cap.manifest, "dataset manifest")->required();
  c->add_option("--vocab", cap.vocab, "vocabulary JSON")->required();
  c->add_option("--split", cap.split, "split to decode");
  c->add_option("--beam", cap.beam, "beam width")->check(CLI::PositiveNumber);
  c->add_option("--out", cap.out, "candidates JSON to write")->required();
  c->add_option("--mode", cap.mode, "also combine the candidates: bleu-vote, majority or consensus");
  c->add_option("--captions-out", cap.captions_out, "captions file for --mode");
  std::uint32_t caption_seed = 42;
  c->add_option("--seed", caption_seed, "accepted for uniformity; decoding is deterministic");

  EnsembleArgs ens;
  auto* e = app.add_subcommand("ensemble", "Pick one caption per image from several models");
  e->add_option("--candidates", ens.candidates, "candidates JSON from caption")->required();
  e->add_option("--refs", ens.refs, "reference captions file (needed by bleu-vote)");
  e->add_option("--mode", ens.mode, "bleu-vote, majority or consensus");
  e->add_option("--out", ens.out, "captions file to write")->required();

  EvaluateArgs ev;
  auto* v = app.add_subcommand("evaluate", "Score hypotheses against references");
  v->add_option("--hyp", ev.hyp, "hypotheses (<id>\\t<caption>)")->required();
  v->add_option("--refs", ev.refs, "reference captions file")->required();
  v->add_option("--graphs", ev.graphs, "candidate scene graphs JSON");
  v->add_option("--ref-graphs", ev.ref_graphs, "reference scene graphs JSON");
  v->add_option("--out", ev.out, "report JSON to write");
  v->add_flag("--no-timestamp", ev.no_timestamp, "omit the timestamp field from the report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*p) return cmd_preprocess(pre, out, err);
    if (*t) return cmd_train(tr, out);
    if (*c) return cmd_caption(cap, out);
    if (*e) return cmd_ensemble(ens, out);
    if (*v) return cmd_evaluate(ev, out);
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return exit_code_for(ex.code());
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}

}  // namespace capgen::cli
