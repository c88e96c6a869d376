#include <doctest.h>

#include <cmath>

#include "fga/losses.hpp"
#include "fga/txtattack.hpp"

using namespace fga;

namespace {

PairedDataset small_dataset(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.classes = 3;
  cfg.per_class = 2;
  cfg.channels = 2;
  cfg.height = 4;
  cfg.width = 4;
  cfg.noise_sigma = 0.05;
  return gen_dataset(cfg, seed);
}

}  // namespace

TEST_CASE("token_importance ranking") {
  Vocab v = make_default_vocab(default_class_names(3));

  SUBCASE("single token text ranks its only position") {
    TokenSeq t = tokenize("airplane", v);
    auto order = token_importance(t, v, [](const TokenSeq&) { return 0.0; });
    CHECK(order == std::vector<std::size_t>{0});
  }

  SUBCASE("hand objective ordering matches exhaustive evaluation") {
    // objective counts token id 2 occurrences twice as much as id 1
    TokenSeq t;
    t.ids = {1, 2};
    auto obj = [&v](const TokenSeq& s) {
      double acc = 0;
      for (int id : s.ids) {
        if (id == 1) acc -= 1;
        if (id == 2) acc -= 2;
        if (id == v.unk_id) acc += 0;
      }
      return acc;
    };
    // replacing position 1 (id 2) gains +2, position 0 gains +1
    auto order = token_importance(t, v, obj);
    CHECK(order == std::vector<std::size_t>{1, 0});
  }

  SUBCASE("token with no effect has zero importance and loses ties") {
    TokenSeq t;
    t.ids = {3, 4};
    auto obj = [](const TokenSeq& s) {
      return s.ids[0] == 3 ? 0.0 : 5.0;  // only position 0 matters
    };
    auto order = token_importance(t, v, obj);
    CHECK(order[0] == 0);
    CHECK(order[1] == 1);
  }
}

TEST_CASE("zero-embedding token has zero importance under a text encoder") {
  Vocab v = make_default_vocab(default_class_names(3));
  TextEncoder enc = make_text_encoder(static_cast<std::size_t>(v.size()), 6, {8},
                                      4, true, 3);
  // Zero both the probe token's row and the <unk> row so the mean pool
  // cannot tell them apart.
  int tok = v.id_of("photo");
  for (std::size_t j = 0; j < 6; ++j) {
    enc.embed.data[static_cast<std::size_t>(tok) * 6 + j] = 0;
    enc.embed.data[static_cast<std::size_t>(v.unk_id) * 6 + j] = 0;
  }
  Tensor ref = Tensor::vec({1, 0, 0, 0});
  auto obj = [&](const TokenSeq& s) {
    return cosine_deviation(forward_text_one(enc, s), ref).value;
  };
  TokenSeq t = tokenize("a photo of a cat", v);
  double base = obj(t);
  TokenSeq probe = t;
  probe.ids[1] = v.unk_id;
  CHECK(obj(probe) == doctest::Approx(base));
}

TEST_CASE("greedy_substitute respects the budget and improves strictly") {
  Vocab v = make_default_vocab(default_class_names(4));
  TextEncoder enc = make_text_encoder(static_cast<std::size_t>(v.size()), 6, {8},
                                      4, true, 5);
  Tensor ref = Tensor::vec({0.3, -0.2, 0.8, 0.1});
  auto obj = [&](const TokenSeq& s) {
    return cosine_deviation(forward_text_one(enc, s), ref).value;
  };
  TokenSeq t = tokenize("a photo of a cat", v);

  SUBCASE("budget zero returns the input") {
    TextAttackConfig cfg;
    cfg.budget = 0;
    SubstituteResult r = greedy_substitute(t, v, &enc, obj, cfg);
    CHECK(r.text == t);
    CHECK(r.substitutions == 0);
  }

  SUBCASE("objective never decreases and budget bounds substitutions") {
    for (int budget : {1, 2, 3}) {
      TextAttackConfig cfg;
      cfg.budget = budget;
      SubstituteResult r = greedy_substitute(t, v, &enc, obj, cfg);
      CHECK(r.objective >= obj(t) - 1e-12);
      int changed = 0;
      REQUIRE(r.text.size() == t.size());
      for (std::size_t i = 0; i < t.size(); ++i)
        if (r.text.ids[i] != t.ids[i]) changed++;
      CHECK(changed <= budget);
      CHECK(changed == r.substitutions);
    }
  }

  SUBCASE("knn candidates work too") {
    TextAttackConfig cfg;
    cfg.budget = 1;
    cfg.source = CandidateSource::EmbeddingKnn;
    cfg.knn_k = 4;
    SubstituteResult r = greedy_substitute(t, v, &enc, obj, cfg);
    CHECK(r.objective >= obj(t) - 1e-12);
  }
}

TEST_CASE("a synonym equal to the clean token is never selected") {
  Vocab v;
  v.tokens = {"<unk>", "cat", "dog"};
  v.unk_id = 0;
  v.synonyms[1] = {1};  // degenerate table: only itself
  v.rebuild_index();
  TokenSeq t;
  t.ids = {1};
  auto obj = [](const TokenSeq& s) { return s.ids[0] == 1 ? 0.0 : 1.0; };
  TextAttackConfig cfg;
  cfg.budget = 1;
  SubstituteResult r = greedy_substitute(t, v, nullptr, obj, cfg);
  CHECK(r.text == t);
  CHECK(r.substitutions == 0);
}

TEST_CASE("empty candidate set returns the input with a flag") {
  Vocab v;
  v.tokens = {"<unk>", "cat"};
  v.unk_id = 0;
  v.rebuild_index();
  TokenSeq t;
  t.ids = {1};
  TextAttackConfig cfg;
  cfg.budget = 2;
  SubstituteResult r = greedy_substitute(
      t, v, nullptr, [](const TokenSeq&) { return 0.0; }, cfg);
  CHECK(r.text == t);
  CHECK(r.no_candidates);
}

TEST_CASE("greedy matches brute force on two-token texts") {
  Vocab v = make_default_vocab(default_class_names(4));
  TextEncoder enc = make_text_encoder(static_cast<std::size_t>(v.size()), 6, {},
                                      4, true, 11);
  Tensor ref = Tensor::vec({-0.5, 0.4, 0.2, -0.1});
  auto obj = [&](const TokenSeq& s) {
    return cosine_deviation(forward_text_one(enc, s), ref).value;
  };

  TokenSeq t;
  t.ids = {v.id_of("cat"), v.id_of("small")};
  TextAttackConfig cfg;
  cfg.budget = 1;

  // brute force over all single substitutions from the synonym table
  double best = obj(t);
  for (std::size_t pos = 0; pos < 2; ++pos) {
    auto cands = substitution_candidates(t.ids[pos], v, &enc, cfg);
    for (int cand : cands) {
      TokenSeq trial = t;
      trial.ids[pos] = cand;
      best = std::max(best, obj(trial));
    }
  }
  SubstituteResult r = greedy_substitute(t, v, &enc, obj, cfg);
  CHECK(r.objective == doctest::Approx(best));
}

TEST_CASE("fga_t identity when both budgets are zero") {
  PairedDataset ds = small_dataset(71);
  ImageEncoder img = make_image_encoder(2, 4, 4, {8}, 6, true, 1);
  TextEncoder txt = make_text_encoder(static_cast<std::size_t>(ds.vocab.size()),
                                      6, {8}, 6, true, 2);
  AttackConfig icfg;
  icfg.epsilon = 0;
  icfg.steps = 1;
  TextAttackConfig tcfg;
  tcfg.budget = 0;
  FgaTResult res = fga_t(img, txt, ds.images, ds.captions, ds.vocab, icfg, tcfg);
  CHECK(res.adv_images.data == ds.images.data);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t j = 0; j < ds.captions[i].size(); ++j)
      CHECK(res.adv_texts[i][j] == ds.captions[i][j]);
}

TEST_CASE("fga_t single image reduces to guidance over {t, t'}") {
  PairedDataset ds = small_dataset(72);
  // keep one image with one caption
  PairedDataset one;
  one.class_names = ds.class_names;
  one.vocab = ds.vocab;
  one.images = ImageBatch({1, 2, 4, 4});
  std::copy_n(ds.images.data.begin(), one.images.numel(), one.images.data.begin());
  one.labels = {ds.labels[0]};
  one.captions = {{ds.captions[0][0]}};

  ImageEncoder img = make_image_encoder(2, 4, 4, {8}, 6, true, 1);
  TextEncoder txt = make_text_encoder(static_cast<std::size_t>(ds.vocab.size()),
                                      6, {8}, 6, true, 2);

  AttackConfig icfg;
  icfg.epsilon = 0.05;
  icfg.steps = 5;
  icfg.scales = {1.0};
  TextAttackConfig tcfg;
  tcfg.budget = 1;
  FgaTResult res =
      fga_t(img, txt, one.images, one.captions, one.vocab, icfg, tcfg);

  // rebuild the same attack by hand from the union guidance it reports
  const GuidanceSet& G = res.union_guidance;
  EmbeddingObjective obj = [&G](std::size_t ex, const Tensor& e, Tensor& ge) {
    double loss = loss_set_gui(e, G.W, G.labels[ex]);
    ge = grad_gui_embedding(e, G.W, G.labels[ex]);
    return loss;
  };
  EmbeddingModel model = image_embedding_model(img);
  auto [manual, trace] = pgd_attack(model, one.images, obj, icfg);
  CHECK(res.adv_images.data == manual.data);

  // the union holds the clean and the adversarial caption
  CHECK(G.labels[0].size() == 2);
}
