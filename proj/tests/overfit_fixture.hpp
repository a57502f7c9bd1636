#pragma once

#include <string>
#include <vector>

#include "capgen/decode.hpp"
#include "capgen/metrics.hpp"
#include "capgen/train.hpp"

namespace capgen::testing {

struct OverfitSetup {
  Vocabulary vocab;
  ModelConfig model;
  TrainConfig train;
  Dataset data;
};

// Eight 32x32 stripe images, one colour and stripe period each, paired with distinct captions.
// Validation is the training set itself: the point is memorisation.
inline OverfitSetup overfit_setup(std::size_t epochs = 300) {
  const std::vector<std::string> captions{"a red square on a blue field", "a green dog runs",
                                          "two yellow birds sit on a wire", "a black cat sleeps",
                                          "white snow covers the hill",   "a man rides a red bike",
                                          "children play in the park",    "an orange sun sets over water"};
  const float colors[8][3] = {{1, 0, 0}, {0, 1, 0}, {1, 1, 0}, {0, 0, 0},
                              {1, 1, 1}, {1, 0, 1}, {0, 1, 1}, {1, 0.5f, 0}};
  std::vector<Tokens> corpus;
  for (const auto& c : captions) corpus.push_back(preprocess_caption(c));

  OverfitSetup s{Vocabulary::build(corpus, 1), {}, {}, {}};
  s.model.d_model = 32;
  s.model.heads = 4;
  s.model.layers_enc = 1;
  s.model.layers_dec = 1;
  s.model.d_ff = 128;
  s.model.vocab_size = s.vocab.size();
  s.model.max_len = 12;
  s.model.sources = {{"tinycnn", 32}};

  s.train.batch_size = 8;
  s.train.base_lr = 1e-4;
  s.train.peak_lr = 3e-3;
  s.train.warmup_fraction = 0.05;
  s.train.max_epochs = epochs;
  s.train.patience = epochs;
  s.train.optimizer = OptimizerKind::kAdam;
  s.train.augment = false;

  for (std::size_t i = 0; i < captions.size(); ++i) {
    Image img{32, 32, std::vector<float>(32 * 32 * 3)};
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          img.pixels[(y * 32 + x) * 3 + c] = (x / (4 + i)) % 2 ? colors[i][c] : 1 - colors[i][c];
    TrainExample ex;
    ex.image_id = "stripe" + std::to_string(i);
    ex.image = img;
    ex.target = encode(corpus[i], s.vocab, s.model.max_len);
    s.data.train.push_back(ex);
  }
  s.data.val = s.data.train;
  return s;
}

// A smaller model whose validation set pairs each image with another image's caption. The
// validation loss plateaus and the stopper fires well before the 40-epoch cap.
inline OverfitSetup plateau_setup() {
  auto s = overfit_setup(40);
  s.model.d_model = 16;
  s.model.heads = 2;
  s.model.d_ff = 32;
  s.model.sources = {{"tinycnn", 16}};
  s.train.batch_size = 3;
  s.train.augment = true;
  s.train.patience = 2;
  s.train.peak_lr = 2e-2;
  for (std::size_t i = 0; i < s.data.val.size(); ++i) s.data.val[i].target = s.data.train[(i + 3) % 8].target;
  return s;
}

// Mean sentence BLEU-1 of greedy captions against each image's own caption.
inline double train_bleu1(const CaptionModel<float>& model, const OverfitSetup& s) {
  double total = 0;
  for (const auto& ex : s.data.train) {
    const auto memory = encode_image(model, *ex.image);
    const auto out = greedy_decode(memory, model, s.model.max_len);
    const Tokens hyp = tokenize(decode(std::span<const TokenId>(out.ids.data(), out.length), s.vocab));
    const References refs{tokenize(decode(ex.target.ids, s.vocab))};
    total += bleu_n(hyp, refs, 1);
  }
  return total / static_cast<double>(s.data.train.size());
}

}  // namespace capgen::testing
