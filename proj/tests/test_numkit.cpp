#include <doctest.h>

#include <cmath>

#include "fga/numkit.hpp"

using namespace fga;

TEST_CASE("softmax basics") {
  Tensor s = softmax(Tensor::vec({0.0, 0.0}));
  CHECK(s.data[0] == doctest::Approx(0.5));
  CHECK(s.data[1] == doctest::Approx(0.5));

  Tensor t = softmax(Tensor::vec({3.7, 3.7, 3.7, 3.7}));
  for (auto v : t.data) CHECK(double(v) == doctest::Approx(0.25));

  // e/(e+1) by hand
  Tensor u = softmax(Tensor::vec({1.0, 0.0}));
  CHECK(double(u.data[0]) == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(double(u.data[1]) == doctest::Approx(0.2689).epsilon(1e-4));

  CHECK_THROWS_AS(softmax(Tensor({0})), DimError);
}

TEST_CASE("softmax shift invariance and normalization") {
  RngStream rng(7, 0);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t n = 1 + rng.index(8);
    Tensor x({n}), y({n});
    double c = rng.uniform(-20, 20);
    for (std::size_t i = 0; i < n; ++i) {
      double v = rng.uniform(-10, 10);
      x.data[i] = static_cast<scalar>(v);
      y.data[i] = static_cast<scalar>(v + c);
    }
    Tensor sx = softmax(x), sy = softmax(y);
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::fabs(double(sx.data[i]) - double(sy.data[i])) < 1e-6);
      CHECK(sx.data[i] >= 0);
      sum += double(sx.data[i]);
    }
    CHECK(std::fabs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("lp_norm") {
  CHECK(lp_norm(Tensor::vec({3, 4}), Norm::L2) == doctest::Approx(5));
  CHECK(lp_norm(Tensor::vec({3, -4}), Norm::L1) == doctest::Approx(7));
  CHECK(lp_norm(Tensor::vec({3, -4}), Norm::Linf) == doctest::Approx(4));
}

TEST_CASE("percentile_abs nearest rank") {
  Tensor g = Tensor::vec({0.1, -0.5, 0.3, 0.05});
  CHECK(percentile_abs(g, 100) == doctest::Approx(0.5));
  // sorted |g| = (0.05, 0.1, 0.3, 0.5), index ceil(0.5*4)=2
  CHECK(percentile_abs(g, 50) == doctest::Approx(0.1));
  CHECK(percentile_abs(Tensor::vec({7}), 3.0) == doctest::Approx(7));
  CHECK(percentile_abs(Tensor::vec({7}), 99.0) == doctest::Approx(7));

  CHECK_THROWS_AS(percentile_abs(g, -1), ConfigError);
  CHECK_THROWS_AS(percentile_abs(g, 101), ConfigError);
  CHECK_THROWS_AS(percentile_abs(Tensor({0}), 50), DimError);
}

TEST_CASE("percentile_abs permutation invariance and max") {
  RngStream rng(11, 0);
  for (int trial = 0; trial < 30; ++trial) {
    std::size_t n = 1 + rng.index(12);
    Tensor g({n});
    for (auto& v : g.data) v = static_cast<scalar>(rng.uniform(-2, 2));
    CHECK(percentile_abs(g, 100) == doctest::Approx(lp_norm(g, Norm::Linf)));

    Tensor shuffled = g;
    for (std::size_t i = n; i > 1; --i)
      std::swap(shuffled.data[i - 1], shuffled.data[rng.index(i)]);
    double q = rng.uniform(0, 100);
    CHECK(percentile_abs(g, q) == doctest::Approx(percentile_abs(shuffled, q)));
  }
}

TEST_CASE("resize identity is bit-exact") {
  ImageBatch img({2, 3, 5, 4});
  RngStream rng(3, 1);
  for (auto& v : img.data) v = static_cast<scalar>(rng.uniform());
  ImageBatch out = resize(img, 1.0);
  CHECK(out.data == img.data);
  CHECK(out.shape == img.shape);
}

TEST_CASE("resize bilinear oracle cases") {
  // 2x2 checkerboard downscaled to 1x1 averages the four pixels.
  ImageBatch img({1, 1, 2, 2});
  img.data = {0, 1, 1, 0};
  ImageBatch half = resize(img, 0.5);
  CHECK(half.shape == std::vector<std::size_t>{1, 1, 1, 1});
  CHECK(double(half.data[0]) == doctest::Approx(0.5));

  ImageBatch dot({1, 1, 1, 1});
  dot.data = {static_cast<scalar>(0.3)};
  ImageBatch up = resize(dot, 2.0);
  CHECK(up.shape == std::vector<std::size_t>{1, 1, 2, 2});
  for (auto v : up.data) CHECK(double(v) == doctest::Approx(0.3));
}

TEST_CASE("resize range and errors") {
  ImageBatch img({1, 1, 4, 4});
  RngStream rng(5, 0);
  for (auto& v : img.data) v = static_cast<scalar>(rng.uniform());
  ImageBatch out = resize(img, 1.7);
  for (auto v : out.data) {
    CHECK(v >= 0);
    CHECK(v <= 1);
  }
  CHECK_THROWS_AS(resize(img, 0.0), ConfigError);
  CHECK_THROWS_AS(resize(img, 4.5), ConfigError);
  CHECK_THROWS_AS(resize(img, 0.05), DimError);  // rounds to 0x0
}

TEST_CASE("resize_vjp is the adjoint of resize_to") {
  RngStream rng(17, 0);
  for (auto [ih, iw, oh, ow] : {std::array<std::size_t, 4>{4, 6, 3, 3},
                                std::array<std::size_t, 4>{3, 3, 7, 5},
                                std::array<std::size_t, 4>{5, 4, 5, 8}}) {
    ImageBatch u({1, 2, ih, iw});
    for (auto& v : u.data) v = static_cast<scalar>(rng.uniform(-1, 1));
    ImageBatch w({1, 2, oh, ow});
    for (auto& v : w.data) v = static_cast<scalar>(rng.uniform(-1, 1));

    ImageBatch fu = resize_to(u, oh, ow);
    ImageBatch btw = resize_vjp(w, ih, iw);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < fu.numel(); ++i)
      lhs += double(fu.data[i]) * double(w.data[i]);
    for (std::size_t i = 0; i < u.numel(); ++i)
      rhs += double(u.data[i]) * double(btw.data[i]);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
  }
}

TEST_CASE("clamp") {
  Tensor t = clamp(Tensor::vec({-0.2, 0.5, 1.3}), 0, 1);
  CHECK(double(t.data[0]) == doctest::Approx(0));
  CHECK(double(t.data[1]) == doctest::Approx(0.5));
  CHECK(double(t.data[2]) == doctest::Approx(1));

  Tensor inside = Tensor::vec({0.25, 0.75});
  CHECK(clamp(inside, 0, 1).data == inside.data);

  Tensor degenerate = clamp(Tensor::vec({0.5}), 0.5, 0.5);
  CHECK(double(degenerate.data[0]) == doctest::Approx(0.5));

  // idempotence
  Tensor once = clamp(Tensor::vec({-3, 0.2, 9}), -1, 1);
  CHECK(clamp(once, -1, 1).data == once.data);

  CHECK_THROWS_AS(clamp(inside, 1, 0), ConfigError);
}

TEST_CASE("rng streams reproduce and split") {
  RngStream a(42, 7), b(42, 7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  RngStream c(42, 8);
  bool all_equal = true;
  RngStream a2(42, 7);
  for (int i = 0; i < 10; ++i)
    if (a2.next_u64() != c.next_u64()) all_equal = false;
  CHECK_FALSE(all_equal);

  RngStream base(1, 2);
  RngStream f1 = base.fork(5), f2 = base.fork(5), f3 = base.fork(6);
  CHECK(f1.next_u64() == f2.next_u64());
  CHECK(f1.next_u64() != f3.next_u64());

  RngStream u(9, 9);
  for (int i = 0; i < 1000; ++i) {
    double x = u.uniform();
    CHECK(x >= 0);
    CHECK(x < 1);
  }
}
