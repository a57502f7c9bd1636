// Runs every acceptance criterion and prints one PASS/FAIL line each. Exits nonzero on any
// failure.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "capgen/checkpoint.hpp"
#include "decode_oracle.hpp"
#include "ensemble_fixtures.hpp"
#include "metric_oracles.hpp"
#include "model_gradcheck.hpp"
#include "overfit_fixture.hpp"

using namespace capgen;
using namespace capgen::testing;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

// ---- 1 --------------------------------------------------------------------------------------

void metric_oracles(Outcome& o) {
  const auto corpus = oracle::fixture_corpus();
  const auto d = oracle::compare_with_library(corpus);
  o.require(corpus.size() >= 25, "corpus has at least 25 pairs");
  o.require(d.max_abs <= 1e-9, "oracle agreement, worst " + d.worst);

  auto near = [](double a, double b) { return std::abs(a - b) <= 1e-9; };
  const References the_cat{{"the", "cat"}};
  o.require(near(bleu_n({"the", "the", "the"}, the_cat, 1), 1.0 / 3.0), "clipped BLEU-1 = 1/3");
  // R = 2/5, P = 2/3 and beta = 1.2 give 0.478431.
  const double rl = rouge_l({"the", "cat", "sat"}, References{{"the", "cat", "on", "the", "mat"}});
  o.require(near(rl, 2.44 * 0.4 * (2.0 / 3.0) / (0.4 + 1.44 * 2.0 / 3.0)), "ROUGE-L formula value");
  o.require(near(meteor_exact({"a", "b", "c"}, References{{"a", "b", "c"}}), 1.0 - 0.5 / 27.0), "METEOR 0.9815");
  o.require(near(meteor_exact({"b", "a"}, References{{"a", "b"}}), 0.5), "reversed METEOR 0.5");
  const SceneGraph cand({{"man"}, {"boat", "yellow"}});
  const SceneGraph ref({{"man"}, {"boy"}, {"boat", "yellow"}, {"man", "row", "boat"}});
  o.require(near(tuple_f1(cand, ref), 2.0 / 3.0), "tuple F1 0.6667");
  const auto two = cider({{"A", {"red", "kite", "flies", "high"}}, {"B", {"x"}}},
                         {{"A", {{"red", "kite", "flies", "high"}}}, {"B", {{"green", "frog"}}}});
  o.require(near(two.per_image.at("A"), 10.0), "CIDEr unit case 10.0");
  o.detail << corpus.size() << " pairs, " << d.compared << " comparisons, max |diff| " << d.max_abs
           << ", ROUGE-L example " << rl;
}

// ---- 2 --------------------------------------------------------------------------------------

void gradient_check(Outcome& o) {
  const auto cfg = tiny_config();
  auto model = init_model(cfg, 6);
  std::mt19937 rng(6);
  const auto ex = tiny_example(rng, cfg);
  const auto r = model_grad_check(model, ex, 1e-3);
  o.require(parameter_count(cfg) <= 5000, "at most 5000 parameters");
  o.require(r.checked == parameter_count(cfg), "every parameter checked");
  o.require(r.max_rel_error < 1e-3, "max relative error < 1e-3");
  o.detail << r.checked << " parameters, max relative error " << r.max_rel_error;
}

// ---- 3 --------------------------------------------------------------------------------------

void decode_equivalence(Outcome& o) {
  std::mt19937 rng(2024);
  std::size_t greedy_agree = 0, exhaustive_agree = 0;
  for (std::uint32_t i = 0; i < 100; ++i) {
    const std::size_t vocab = std::uniform_int_distribution<std::size_t>(3, 12)(rng);
    const std::size_t max_len = std::uniform_int_distribution<std::size_t>(2, 12)(rng);
    const auto next = random_scorer(rng(), vocab, 2.0f);
    BeamConfig bc;
    bc.width = 1;
    bc.max_len = max_len;
    greedy_agree += beam_search(next, bc).front().ids == greedy_decode(next, max_len).ids;
  }
  for (std::uint32_t i = 0; i < 50; ++i) {
    const std::size_t vocab = std::uniform_int_distribution<std::size_t>(3, 5)(rng);
    const std::size_t max_len = std::uniform_int_distribution<std::size_t>(2, 5)(rng);
    const auto next = random_scorer(rng(), vocab);
    BeamConfig bc;
    bc.width = static_cast<std::size_t>(std::pow(double(vocab), double(max_len)));
    bc.max_len = max_len;
    const auto best = beam_search(next, bc).front();
    const auto want = exhaustive(next, max_len);
    exhaustive_agree += best.ids == want.ids && std::abs(best.logprob - want.logprob) < 1e-9;
  }
  o.require(greedy_agree == 100, "beam 1 equals greedy");
  o.require(exhaustive_agree == 50, "wide beam equals enumeration");
  o.detail << greedy_agree << "/100 greedy, " << exhaustive_agree << "/50 exhaustive";
}

// ---- 4 --------------------------------------------------------------------------------------

void overfit_capacity(Outcome& o) {
  const auto s = overfit_setup(300);
  auto model = init_model(s.model, 42);
  const auto res = fit(model, s.data, s.train);
  const double b1 = train_bleu1(model, s);
  o.require(res.history.size() <= 300, "at most 300 epochs");
  o.require(b1 >= 0.95, "train BLEU-1 >= 0.95");

  EarlyStopping es(2);
  const double losses[] = {3, 2, 2.5, 2.6, 2.7};
  std::size_t stop = 99;
  for (std::size_t e = 0; e < 5 && stop == 99; ++e)
    if (es.update(e, losses[e])) stop = e;
  o.require(stop == 4 && es.best_epoch() == 1, "stopping rule fixture");

  const auto p = plateau_setup();
  auto m = init_model(p.model, 5);
  const auto pr = fit(m, p.data, p.train);
  double best = INFINITY;
  for (const auto& h : pr.history) best = std::min(best, h.val_loss);
  o.require(pr.stopped_early && evaluate_loss(m, p.data.val) == best, "best weights restored");
  o.detail << "BLEU-1 " << b1 << " after " << res.history.size() << " epochs; stop at epoch " << stop
           << ", restored epoch " << pr.best_epoch << " of " << pr.history.size();
}

// ---- 5 --------------------------------------------------------------------------------------

void ensemble_dominance(Outcome& o) {
  std::size_t checks = 0, held = 0;
  for (std::uint32_t seed = 0; seed < 10; ++seed) {
    const auto c = synthetic_members(3 + seed % 4, 20, 100 + seed);
    const auto picked = run_ensemble(c.candidates, &c.refs, EnsembleMode::kBleuVote);
    double ens = 0;
    std::vector<double> member(c.models.size(), 0.0);
    for (const auto& [id, set] : c.candidates) {
      ens += bleu_n(picked.at(id).caption, c.refs.at(id), 1);
      for (std::size_t m = 0; m < member.size(); ++m) member[m] += bleu_n(set.entries[m].caption, c.refs.at(id), 1);
    }
    for (double m : member) {
      ++checks;
      held += ens / 20.0 >= m / 20.0;
    }
  }
  o.require(held == checks, "ensemble mean >= every member mean");
  o.detail << held << "/" << checks << " member comparisons over 10 corpora of 20 images";
}

// ---- 6 --------------------------------------------------------------------------------------

void majority_conformance(Outcome& o) {
  std::mt19937 rng(33);
  std::size_t agree = 0, ties = 0;
  for (int i = 0; i < 1000; ++i) {
    std::size_t classes = 0;
    const auto votes = random_votes(rng, classes);
    std::vector<std::size_t> counts(classes, 0);
    for (auto v : votes) ++counts[v];
    ties += std::count(counts.begin(), counts.end(), *std::max_element(counts.begin(), counts.end())) > 1;
    agree += majority_vote(VoteMatrix::from_votes(votes, classes)) == count_votes(votes, classes);
  }
  o.require(agree == 1000, "agreement with the vote counter");
  o.require(ties > 0, "fixture includes ties");
  o.detail << agree << "/1000 matrices, " << ties << " with tied maxima";
}

// ---- 7 --------------------------------------------------------------------------------------

void format_round_trips(Outcome& o) {
  std::mt19937 rng(77);
  std::normal_distribution<float> n(0, 10);
  bool capf = true;
  for (int t = 0; t < 20; ++t) {
    FeatureTable table;
    const std::size_t dim = 1 + rng() % 64;
    for (std::size_t i = 0, count = rng() % 30; i < count; ++i) {
      FeatureMap fm{"vgg16", std::vector<float>(dim)};
      for (auto& v : fm.values) v = n(rng);
      table.insert("img_" + std::to_string(rng()), fm);
    }
    const auto bytes = write_feature_file(table);
    const auto back = read_feature_file(bytes, "vgg16");
    capf = capf && back == table && write_feature_file(back) == bytes;
  }
  o.require(capf, "CAPF byte round trip");

  bool capm = true;
  for (const char* source : {"resnet152", "tinycnn"}) {
    auto cfg = tiny_config();
    cfg.sources = {{source, std::strcmp(source, "tinycnn") == 0 ? cfg.d_model : 13}};
    const auto bytes = save_checkpoint(init_model(cfg, 9));
    capm = capm && save_checkpoint(load_checkpoint(bytes)) == bytes;
  }
  o.require(capm, "CAPM byte round trip");

  const auto s = overfit_setup(1);
  std::vector<Tokens> corpus;
  for (const auto& ex : s.data.train) corpus.push_back(tokenize(decode(ex.target.ids, s.vocab)));
  const auto vocab = Vocabulary::build(corpus, 1);
  o.require(Vocabulary::from_json(vocab.to_json()) == vocab, "vocabulary JSON round trip");

  auto history = [] {
    auto p = plateau_setup();
    p.train.max_epochs = 6;
    auto m = init_model(p.model, 3);
    return history_to_json(fit(m, p.data, p.train).history);
  };
  const auto h1 = history(), h2 = history();
  o.require(h1 == h2, "same-seed history identical");
  o.detail << "CAPF x20, CAPM x2, vocabulary of " << vocab.size() << ", history " << h1.size() << " bytes";
}

// ---- 8 --------------------------------------------------------------------------------------

bool finite_all(std::span<const float> xs) {
  return std::all_of(xs.begin(), xs.end(), [](float v) { return std::isfinite(v); });
}

void numerical_hygiene(Outcome& o) {
  std::mt19937 rng(8);
  double worst_sum = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t rows = 1 + rng() % 6, cols = 1 + rng() % 40;
    Tape<float> tape;
    const auto x = tape.constant(random_tensor({rows, cols}, rng, -1e4f, 1e4f));
    const auto y = softmax_rows(x).value();
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < cols; ++c) total += y[r * cols + c];
      worst_sum = std::max(worst_sum, std::abs(total - 1.0));
    }
  }
  o.require(worst_sum <= 1e-6, "softmax rows sum to 1");

  // Random calls on random inputs, some huge, some already non-finite. An op may throw a library
  // Error; whatever it returns, forward or backward, must be finite.
  std::size_t calls = 0, thrown = 0, escaped = 0;
  std::uniform_int_distribution<int> which(0, 16), dim(1, 5);
  auto input = [&](const Shape& shape) {
    const int kind = int(rng() % 10);
    const float mag = kind < 6 ? 3.0f : kind < 9 ? 1e4f : 1e30f;
    auto t = random_tensor(shape, rng, -mag, mag);
    if (kind == 9 && t.size() > 0) t[rng() % t.size()] = (rng() % 2) ? NAN : INFINITY;
    t.set_requires_grad(true);
    return t;
  };
  for (; calls < 10000; ++calls) {
    const std::size_t a = dim(rng), b = dim(rng), c = dim(rng);
    std::vector<Tensorf> in;
    try {
      Tape<float> tape;
      std::vector<Var<float>> v;
      auto param = [&](const Shape& s) { in.push_back(input(s)); };
      Var<float> out;
      const int op = which(rng);
      switch (op) {
        case 0: param({a, b}), param({b, c}); break;
        case 1: case 2: param({a, b}), param({a, b}); break;
        case 3: param({a, b}), param({b}); break;
        case 4: case 5: case 6: case 7: param({a, b}); break;
        case 8: param({a, b}), param({b}), param({b}); break;
        case 9: param({a, b}), param({a, c}); break;
        case 10: param({a, b, c}); break;
        case 11: param({b + 1, c}); break;
        case 12: param({2, a + 1, b + 1}), param({3, 2, 3, 3}), param({3}); break;
        case 13: param({2, 2 * a, 2 * b}); break;
        case 14: param({2, a, b}); break;
        case 15: param({a, b + 1}); break;
        default: param({a + 1}); break;
      }
      for (auto& t : in) v.push_back(tape.parameter(t));
      std::vector<std::int32_t> ids(a);
      for (auto& id : ids) id = std::int32_t(rng() % (b + 1));
      switch (op) {
        case 0: out = matmul(v[0], v[1]); break;
        case 1: out = add(v[0], v[1]); break;
        case 2: out = mul(v[0], v[1]); break;
        case 3: out = add_bias(v[0], v[1]); break;
        case 4: out = relu(v[0]); break;
        case 5: out = softmax_rows(v[0]); break;
        case 6: out = scale(v[0], 1e3f); break;
        case 7: out = mean(v[0]); break;
        case 8: out = layer_norm(v[0], v[1], v[2]); break;
        case 9: out = concat_last_axis(std::vector<Var<float>>{v[0], v[1]}); break;
        case 10: out = transpose_last_two(v[0]); break;
        case 11: out = embedding_lookup(v[0], ids); break;
        case 12: out = conv2d_3x3(v[0], v[1], v[2]); break;
        case 13: out = maxpool2x2(v[0]); break;
        case 14: out = global_avg_pool(v[0]); break;
        case 15: out = masked_nll_rows(v[0], std::span<const std::int32_t>(ids), kPadId).loss; break;
        default: {
          const auto lp = log_softmax(in[0].data());
          if (!std::all_of(lp.begin(), lp.end(), [](double x) { return std::isfinite(x); })) ++escaped;
          continue;
        }
      }
      if (!out.value().all_finite()) {
        ++escaped;
        continue;
      }
      tape.backward(sum(out));
      for (const auto& t : in)
        if (!finite_all(t.grad())) ++escaped;
    } catch (const Error&) {
      ++thrown;
    }
  }
  o.require(escaped == 0, "no non-finite value escapes");
  o.detail << "softmax max |sum - 1| " << worst_sum << "; " << calls << " fuzz calls, " << thrown
           << " rejected, " << escaped << " escaped";
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<void(Outcome&)> run;
    double limit_seconds;
  };
  const Criterion criteria[] = {
      {"metric oracle suite", metric_oracles, 5},
      {"gradient correctness", gradient_check, 60},
      {"decode equivalence", decode_equivalence, 30},
      {"overfit capacity and best-weight restore", overfit_capacity, 300},
      {"ensemble dominance", ensemble_dominance, 60},
      {"majority vote conformance", majority_conformance, 60},
      {"format round trips", format_round_trips, 60},
      {"numerical hygiene", numerical_hygiene, 60},
  };
  int failures = 0;
  int n = 0;
  for (const auto& c : criteria) {
    ++n;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.limit_seconds) o.require(false, "runtime over " + std::to_string(int(c.limit_seconds)) + " s");
    failures += !o.pass;
    std::printf("%s [%d] %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", n, c.name, o.detail.str().c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
