#include <doctest.h>

#include <cmath>
#include <functional>

#include "fga/losses.hpp"
#include "fga/models.hpp"

using namespace fga;

static_assert(sizeof(scalar) == 8, "gradcheck suite requires the f64 build");

namespace {

double rel_err(const Tensor& a, const Tensor& b) {
  double diff = 0, ref = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    double d = double(a.data[i]) - double(b.data[i]);
    diff += d * d;
    ref += double(b.data[i]) * double(b.data[i]);
  }
  return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12);
}

Tensor fd_gradient(const std::function<double(const Tensor&)>& f, Tensor x,
                   double h) {
  Tensor g(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    scalar keep = x.data[i];
    x.data[i] = keep + static_cast<scalar>(h);
    double up = f(x);
    x.data[i] = keep - static_cast<scalar>(h);
    double dn = f(x);
    x.data[i] = keep;
    g.data[i] = static_cast<scalar>((up - dn) / (2 * h));
  }
  return g;
}

}  // namespace

TEST_CASE("grad_gui_embedding matches finite differences tightly") {
  RngStream rng(101, 0);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t d = 2 + rng.index(15);
    std::size_t m = 2 + rng.index(7);
    Tensor W({m, d}), e({d});
    for (auto& v : W.data) v = static_cast<scalar>(rng.uniform(-2, 2));
    for (auto& v : e.data) v = static_cast<scalar>(rng.uniform(-2, 2));
    std::size_t n_labels = 1 + rng.index(m - 1);
    std::vector<int> labels;
    for (std::size_t i = 0; i < n_labels; ++i)
      labels.push_back(static_cast<int>(rng.index(m)));

    Tensor analytic = grad_gui_embedding(e, W, labels);
    Tensor fd = fd_gradient(
        [&](const Tensor& x) { return loss_gui(x, W, labels).value; }, e, 1e-6);
    CHECK(rel_err(analytic, fd) <= 1e-8);
  }
}

TEST_CASE("loss_dev gradient is -e_clean") {
  RngStream rng(102, 0);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t d = 2 + rng.index(10);
    Tensor e({d}), c({d});
    for (auto& v : e.data) v = static_cast<scalar>(rng.uniform(-2, 2));
    for (auto& v : c.data) v = static_cast<scalar>(rng.uniform(-2, 2));
    Tensor analytic({d});
    for (std::size_t i = 0; i < d; ++i)
      analytic.data[i] = static_cast<scalar>(-double(c.data[i]));
    Tensor fd = fd_gradient(
        [&](const Tensor& x) { return loss_dev(x, c).value; }, e, 1e-6);
    CHECK(rel_err(analytic, fd) <= 1e-8);
  }
}

TEST_CASE("targeted guidance gradient matches finite differences") {
  RngStream rng(103, 0);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t d = 2 + rng.index(10), m = 2 + rng.index(6);
    Tensor W({m, d}), e({d});
    for (auto& v : W.data) v = static_cast<scalar>(rng.uniform(-2, 2));
    for (auto& v : e.data) v = static_cast<scalar>(rng.uniform(-2, 2));
    int target = static_cast<int>(rng.index(m));
    Tensor analytic = grad_gui_targeted_embedding(e, W, target);
    Tensor fd = fd_gradient(
        [&](const Tensor& x) { return loss_gui_targeted(x, W, target).value; }, e,
        1e-6);
    CHECK(rel_err(analytic, fd) <= 1e-8);
  }
}

namespace {

ImageBatch random_images(std::size_t B, std::size_t C, std::size_t H,
                         std::size_t W, std::uint64_t seed) {
  ImageBatch v({B, C, H, W});
  RngStream rng(seed, 0);
  for (auto& x : v.data) x = static_cast<scalar>(rng.uniform());
  return v;
}

}  // namespace

TEST_CASE("vjp_image matches finite differences of a linear probe") {
  for (bool normalize : {false, true}) {
    ImageEncoder enc = make_image_encoder(2, 4, 4, {10, 6}, 5, normalize, 7);
    ImageBatch v = random_images(2, 2, 4, 4, 8);
    RngStream rng(9, 0);
    Tensor probe({2, 5});
    for (auto& x : probe.data) x = static_cast<scalar>(rng.uniform(-1, 1));

    ImageBatch analytic = vjp_image(enc, v, probe);
    auto loss = [&](const Tensor& flat) {
      ImageBatch img(v.shape);
      img.data = flat.data;
      Tensor e = forward_image(enc, img);
      double acc = 0;
      for (std::size_t i = 0; i < e.numel(); ++i)
        acc += double(e.data[i]) * double(probe.data[i]);
      return acc;
    };
    Tensor flat({v.numel()});
    flat.data = v.data;
    Tensor fd = fd_gradient(loss, flat, 1e-5);
    Tensor analytic_flat({v.numel()});
    analytic_flat.data = analytic.data;
    CHECK(rel_err(analytic_flat, fd) <= 1e-4);
  }
}

TEST_CASE("vjp of loss_dev composed with the encoder matches finite differences") {
  ImageEncoder enc = make_image_encoder(1, 4, 4, {8}, 6, true, 21);
  ImageBatch v = random_images(1, 1, 4, 4, 22);
  Tensor e_clean = forward_image(enc, v);
  Tensor ge({1, 6});
  for (std::size_t i = 0; i < 6; ++i)
    ge.data[i] = static_cast<scalar>(-double(e_clean.data[i]));
  ImageBatch analytic = vjp_image(enc, v, ge);

  auto loss = [&](const Tensor& flat) {
    ImageBatch img(v.shape);
    img.data = flat.data;
    return loss_dev(row(forward_image(enc, img), 0), row(e_clean, 0)).value;
  };
  Tensor flat({v.numel()});
  flat.data = v.data;
  Tensor fd = fd_gradient(loss, flat, 1e-5);
  Tensor analytic_flat({v.numel()});
  analytic_flat.data = analytic.data;
  CHECK(rel_err(analytic_flat, fd) <= 1e-4);
}

TEST_CASE("vjp_fused_image matches finite differences") {
  ImageEncoder enc = make_image_encoder(2, 3, 3, {8}, 5, true, 31);
  FusionHead head = make_fusion_head(5, 4, {7}, 6, 3, 32);
  ImageBatch v = random_images(2, 2, 3, 3, 33);
  RngStream rng(34, 0);
  Tensor e_t({2, 4});
  for (auto& x : e_t.data) x = static_cast<scalar>(rng.uniform(-1, 1));
  Tensor probe({2, 6});
  for (auto& x : probe.data) x = static_cast<scalar>(rng.uniform(-1, 1));

  ImageBatch analytic = vjp_fused_image(enc, head, v, e_t, probe);
  auto loss = [&](const Tensor& flat) {
    ImageBatch img(v.shape);
    img.data = flat.data;
    Tensor f = forward_fused_from_image(enc, head, img, e_t);
    double acc = 0;
    for (std::size_t i = 0; i < f.numel(); ++i)
      acc += double(f.data[i]) * double(probe.data[i]);
    return acc;
  };
  Tensor flat({v.numel()});
  flat.data = v.data;
  Tensor fd = fd_gradient(loss, flat, 1e-5);
  Tensor analytic_flat({v.numel()});
  analytic_flat.data = analytic.data;
  CHECK(rel_err(analytic_flat, fd) <= 1e-4);
}

namespace {

// Loss of one training epoch without applying updates.
double itc_loss_probe(ImageEncoder img, TextEncoder txt, const PairedDataset& ds,
                      const ItcConfig& cfg, std::uint64_t seed) {
  std::vector<double> losses;
  ItcConfig frozen = cfg;
  frozen.epochs = 1;
  frozen.lr = 0;
  train_itc(img, txt, ds, frozen, seed, &losses);
  return losses.at(0);
}

}  // namespace

TEST_CASE("itc training gradient agrees with finite differences on sampled weights") {
  SynthConfig dcfg;
  dcfg.classes = 3;
  dcfg.per_class = 3;
  dcfg.channels = 1;
  dcfg.height = 4;
  dcfg.width = 4;
  dcfg.noise_sigma = 0.05;
  PairedDataset ds = gen_dataset(dcfg, 55);

  ImageEncoder img = make_image_encoder(1, 4, 4, {6}, 4, true, 1);
  TextEncoder txt = make_text_encoder(static_cast<std::size_t>(ds.vocab.size()), 4,
                                      {5}, 4, true, 2);
  ItcConfig cfg;
  cfg.epochs = 1;
  cfg.lr = 1e-3;
  cfg.temperature = 0.2;

  // extract the gradient from one update step
  ImageEncoder img_after = img;
  TextEncoder txt_after = txt;
  train_itc(img_after, txt_after, ds, cfg, 77);

  RngStream rng(5, 5);
  double h = 1e-6;
  for (int probe = 0; probe < 6; ++probe) {
    std::size_t layer = rng.index(img.mlp.layers.size());
    std::size_t idx = rng.index(img.mlp.layers[layer].W.numel());
    double g_step = (double(img.mlp.layers[layer].W.data[idx]) -
                     double(img_after.mlp.layers[layer].W.data[idx])) /
                    cfg.lr;

    ImageEncoder up = img, dn = img;
    up.mlp.layers[layer].W.data[idx] += static_cast<scalar>(h);
    dn.mlp.layers[layer].W.data[idx] -= static_cast<scalar>(h);
    double g_fd = (itc_loss_probe(up, txt, ds, cfg, 77) -
                   itc_loss_probe(dn, txt, ds, cfg, 77)) /
                  (2 * h);
    CHECK(g_step == doctest::Approx(g_fd).epsilon(1e-4));
  }

  // one embedding-table probe
  std::size_t eidx = rng.index(txt.embed.numel());
  double g_step = (double(txt.embed.data[eidx]) -
                   double(txt_after.embed.data[eidx])) /
                  cfg.lr;
  TextEncoder up = txt, dn = txt;
  up.embed.data[eidx] += static_cast<scalar>(h);
  dn.embed.data[eidx] -= static_cast<scalar>(h);
  double g_fd = (itc_loss_probe(img, up, ds, cfg, 77) -
                 itc_loss_probe(img, dn, ds, cfg, 77)) /
                (2 * h);
  CHECK(g_step == doctest::Approx(g_fd).epsilon(1e-4));
}
