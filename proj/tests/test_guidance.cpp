#include <doctest.h>

#include <cmath>

#include "fga/guidance.hpp"

using namespace fga;

namespace {

// Encoder whose embedding is the flattened pixel vector itself.
ImageEncoder identity_encoder(std::size_t dim, bool normalize = false) {
  ImageEncoder enc = make_image_encoder(1, 1, dim, {}, dim, normalize, 0);
  for (auto& v : enc.mlp.layers[0].W.data) v = 0;
  for (std::size_t i = 0; i < dim; ++i) enc.mlp.layers[0].W.data[i * dim + i] = 1;
  for (auto& v : enc.mlp.layers[0].b.data) v = 0;
  return enc;
}

PairedDataset axis_dataset() {
  PairedDataset ds;
  ds.class_names = {"airplane", "automobile", "bird"};
  ds.vocab = make_default_vocab(ds.class_names);
  ds.images = ImageBatch({3, 1, 1, 3});
  ds.images.data = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  ds.labels = {0, 1, 2};
  for (int k = 0; k < 3; ++k)
    ds.captions.push_back(
        {tokenize("a photo of a " + ds.class_names[static_cast<std::size_t>(k)],
                  ds.vocab)});
  return ds;
}

}  // namespace

TEST_CASE("class_mean_guidance with orthonormal toy embeddings") {
  PairedDataset ds = axis_dataset();
  ImageEncoder enc = identity_encoder(3);
  GuidanceSet g = class_mean_guidance(enc, ds);
  REQUIRE(g.m() == 3);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(double(g.W.data[r * 3 + c]) == doctest::Approx(r == c ? 1.0 : 0.0));
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(g.labels[i] == std::vector<int>{static_cast<int>(i)});
}

TEST_CASE("class_mean_guidance averages duplicates to themselves") {
  PairedDataset ds = axis_dataset();
  // duplicate the class-0 image
  ds.images = ImageBatch({4, 1, 1, 3});
  ds.images.data = {1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1};
  ds.labels = {0, 0, 1, 2};
  ds.captions.push_back(ds.captions.back());
  ImageEncoder enc = identity_encoder(3);
  GuidanceSet g = class_mean_guidance(enc, ds);
  CHECK(double(g.W.data[0]) == doctest::Approx(1.0));
  CHECK(double(g.W.data[1]) == doctest::Approx(0.0));
}

TEST_CASE("class_mean_guidance fails loudly on an empty class") {
  PairedDataset ds = axis_dataset();
  ds.labels = {0, 1, 1};  // class "bird" has no images
  ImageEncoder enc = identity_encoder(3);
  try {
    class_mean_guidance(enc, ds);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("bird") != std::string::npos);
  }
}

TEST_CASE("class mean rows of a normalized encoder have norm at most 1") {
  SynthConfig cfg;
  cfg.classes = 4;
  cfg.per_class = 5;
  cfg.channels = 2;
  cfg.height = 5;
  cfg.width = 5;
  PairedDataset ds = gen_dataset(cfg, 13);
  ImageEncoder enc = make_image_encoder(2, 5, 5, {12}, 6, true, 3);
  GuidanceSet g = class_mean_guidance(enc, ds);
  for (std::size_t r = 0; r < g.m(); ++r) {
    double n = 0;
    for (std::size_t c = 0; c < g.dim(); ++c) {
      double v = g.W.data[r * g.dim() + c];
      n += v * v;
    }
    CHECK(std::sqrt(n) <= 1.0 + 1e-6);
  }
}

TEST_CASE("prompt_guidance") {
  PairedDataset ds = axis_dataset();
  TextEncoder txt = make_text_encoder(static_cast<std::size_t>(ds.vocab.size()), 6,
                                      {8}, 5, true, 7);
  GuidanceSet g =
      prompt_guidance(txt, ds.vocab, ds.class_names, "a photo of a {}", ds.labels);
  CHECK(g.m() == 3);
  CHECK(g.dim() == 5);
  CHECK_FALSE(g.duplicate_rows);
  CHECK(g.labels.size() == 3);

  // rows equal the encoder applied to the instantiated caption
  Tensor direct = forward_text(
      txt, {tokenize("a photo of a airplane", ds.vocab)});
  for (std::size_t c = 0; c < 5; ++c) CHECK(g.W.data[c] == direct.data[c]);

  GuidanceSet dup = prompt_guidance(txt, ds.vocab, {"cat", "cat", "dog"},
                                    "a photo of a {}", {});
  CHECK(dup.duplicate_rows);
  for (std::size_t c = 0; c < 5; ++c) CHECK(dup.W.data[c] == dup.W.data[5 + c]);

  CHECK_THROWS_AS(
      prompt_guidance(txt, ds.vocab, ds.class_names, "no placeholder", {}),
      ConfigError);
}

TEST_CASE("dataset_text_guidance dedup and labels") {
  PairedDataset ds = axis_dataset();
  TextEncoder txt = make_text_encoder(static_cast<std::size_t>(ds.vocab.size()), 6,
                                      {8}, 5, true, 7);

  SUBCASE("all captions distinct") {
    GuidanceSet g = dataset_text_guidance(txt, ds);
    CHECK(g.m() == 3);
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(g.labels[i] == std::vector<int>{static_cast<int>(i)});
  }

  SUBCASE("shared caption resolves to a shared index") {
    ds.captions[1] = ds.captions[0];
    GuidanceSet g = dataset_text_guidance(txt, ds);
    CHECK(g.m() == 2);  // deduplicated
    CHECK(g.labels[0] == std::vector<int>{0});
    CHECK(g.labels[1] == std::vector<int>{0});
  }
}

TEST_CASE("topk_match_labels") {
  GuidanceSet g;
  g.W = Tensor({3, 3});
  g.W.data = {1, 0, 0, 0, 1, 0, 0, 0, 1};

  Tensor e = Tensor::vec({1, 0, 0});
  CHECK(topk_match_labels(e, g, 1) == std::vector<int>{0});
  CHECK(topk_match_labels(e, g, 2).size() == 2);

  // k = m-1 keeps all but the least similar
  Tensor f = Tensor::vec({0.9, 0.5, 0.1});
  CHECK(topk_match_labels(f, g, 2) == std::vector<int>{0, 1});

  // ties broken by lower index
  Tensor tie = Tensor::vec({0, 1, 1});
  CHECK(topk_match_labels(tie, g, 1) == std::vector<int>{1});

  // cosine is invariant to positive rescaling
  Tensor e10 = Tensor::vec({10, 0, 0});
  CHECK(topk_match_labels(e10, g, 2) == topk_match_labels(e, g, 2));

  CHECK_THROWS_AS(topk_match_labels(e, g, 0), ConfigError);
  CHECK_THROWS_AS(topk_match_labels(e, g, 3), ConfigError);
}

TEST_CASE("untargeted invariant rejects label sets covering all rows") {
  GuidanceSet g;
  g.W = Tensor({2, 2});
  g.W.data = {1, 0, 0, 1};
  g.labels = {{0, 1}};
  CHECK_THROWS_AS(validate_untargeted(g), ConfigError);

  g.labels = {{}};
  CHECK_THROWS_AS(validate_untargeted(g), ConfigError);

  g.labels = {{2}};
  CHECK_THROWS_AS(validate_untargeted(g), ConfigError);

  g.labels = {{1}};
  CHECK_NOTHROW(validate_untargeted(g));
}

TEST_CASE("guidance save/load round trip") {
  GuidanceSet g;
  g.W = Tensor({3, 2});
  g.W.data = {1, 2, 3, 4, 5, 6};
  g.labels = {{0}, {1, 2}};
  g.source = GuidanceSource::TopK;
  std::string prefix = "/tmp/fga_test_guidance";
  save_guidance(prefix, g);
  GuidanceSet back = load_guidance(prefix);
  CHECK(back.W.data == g.W.data);
  CHECK(back.labels == g.labels);
  CHECK(back.source == GuidanceSource::TopK);
  std::remove((prefix + ".fgat").c_str());
  std::remove((prefix + ".json").c_str());
}
