#include <doctest.h>

#include <cmath>

#include "fga/imgattack.hpp"
#include "fga/numkit.hpp"

using namespace fga;

static_assert(sizeof(scalar) == 8, "oracle suite requires the f64 build");

namespace {

double dist2(const Tensor& a, const Tensor& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    double d = double(a.data[i]) - double(b.data[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

double ball_norm(const std::vector<double>& x, Norm p) {
  double acc = 0;
  switch (p) {
    case Norm::L1:
      for (double v : x) acc += std::fabs(v);
      return acc;
    case Norm::L2:
      for (double v : x) acc += v * v;
      return std::sqrt(acc);
    case Norm::Linf:
      for (double v : x) acc = std::max(acc, std::fabs(v));
      return acc;
  }
  return acc;
}

// Coarse-to-fine grid search for the nearest point of the p-ball, refined
// down to the target resolution.
Tensor grid_nearest(const Tensor& delta, double eps, Norm p, double resolution) {
  std::size_t n = delta.numel();
  std::vector<double> center(n, 0.0), best(n, 0.0);
  double span = eps;
  double best_dist = HUGE_VAL;

  for (double res = span / 8; res >= resolution / 2; res /= 8) {
    std::vector<double> lo(n), hi(n);
    for (std::size_t i = 0; i < n; ++i) {
      lo[i] = std::max(center[i] - 10 * res, -eps);
      hi[i] = std::min(center[i] + 10 * res, eps);
    }
    std::vector<std::size_t> steps(n);
    for (std::size_t i = 0; i < n; ++i)
      steps[i] = static_cast<std::size_t>((hi[i] - lo[i]) / res) + 1;

    std::vector<std::size_t> idx(n, 0);
    std::vector<double> point(n);
    for (;;) {
      for (std::size_t i = 0; i < n; ++i) point[i] = lo[i] + double(idx[i]) * res;
      if (ball_norm(point, p) <= eps + 1e-12) {
        double d = 0;
        for (std::size_t i = 0; i < n; ++i) {
          double diff = point[i] - double(delta.data[i]);
          d += diff * diff;
        }
        d = std::sqrt(d);
        if (d < best_dist) {
          best_dist = d;
          best = point;
        }
      }
      std::size_t k = 0;
      while (k < n && ++idx[k] >= steps[k]) idx[k++] = 0;
      if (k == n) break;
    }
    center = best;
  }
  Tensor out(delta.shape);
  for (std::size_t i = 0; i < n; ++i) out.data[i] = static_cast<scalar>(best[i]);
  return out;
}

// Independent l1 projection via bisection on the soft threshold.
Tensor l1_project_bisect(const Tensor& delta, double eps) {
  double l1 = lp_norm(delta, Norm::L1);
  if (l1 <= eps) return delta;
  double lo = 0, hi = lp_norm(delta, Norm::Linf);
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    double sum = 0;
    for (auto v : delta.data) sum += std::max(std::fabs(double(v)) - mid, 0.0);
    (sum > eps ? lo : hi) = mid;
  }
  double lambda = 0.5 * (lo + hi);
  Tensor out(delta.shape);
  for (std::size_t i = 0; i < delta.numel(); ++i) {
    double v = delta.data[i];
    double mag = std::max(std::fabs(v) - lambda, 0.0);
    out.data[i] = static_cast<scalar>(v > 0 ? mag : -mag);
  }
  return out;
}

}  // namespace

TEST_CASE("projection agrees with the grid oracle in low dimensions") {
  RngStream rng(7, 7);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t n = 1 + rng.index(3);
    double eps = rng.uniform(0.2, 1.0);
    Tensor delta({n});
    for (auto& v : delta.data) v = static_cast<scalar>(rng.uniform(-2, 2));

    for (Norm p : {Norm::L1, Norm::L2, Norm::Linf}) {
      Tensor ours = project(delta, eps, p);
      CHECK(lp_norm(ours, p) <= eps + 1e-9);
      Tensor oracle = grid_nearest(delta, eps, p, 1e-3);
      // ours must be at least as close as the best grid point
      CHECK(dist2(ours, delta) <= dist2(oracle, delta) + 1e-9);
      // and the grid point must be near ours (same minimizer)
      CHECK(dist2(ours, oracle) <= 5e-3 * std::sqrt(double(n)) + 1e-9);
    }
  }
}

TEST_CASE("l1 projection agrees with an independent bisection solver") {
  RngStream rng(13, 13);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 1 + rng.index(32);
    double eps = rng.uniform(0.05, 3.0);
    Tensor delta({n});
    for (auto& v : delta.data) v = static_cast<scalar>(rng.uniform(-2, 2));
    Tensor ours = project(delta, eps, Norm::L1);
    Tensor oracle = l1_project_bisect(delta, eps);
    CHECK(dist2(ours, oracle) <= 1e-8);
  }
}

TEST_CASE("steepest directions maximize the inner product") {
  RngStream rng(19, 19);
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t n = 2 + rng.index(3);
    Tensor g({n});
    for (auto& v : g.data) v = static_cast<scalar>(rng.uniform(-1, 1));

    for (Norm p : {Norm::L2, Norm::Linf}) {
      Tensor dir = steepest_dir(g, p);
      double ours = 0;
      for (std::size_t i = 0; i < n; ++i)
        ours += double(g.data[i]) * double(dir.data[i]);
      for (int probe = 0; probe < 10000; ++probe) {
        std::vector<double> d(n);
        double norm = 0;
        for (auto& v : d) v = rng.normal();
        if (p == Norm::L2) {
          for (double v : d) norm += v * v;
          norm = std::sqrt(norm);
        } else {
          for (double v : d) norm = std::max(norm, std::fabs(v));
        }
        double dot = 0;
        for (std::size_t i = 0; i < n; ++i) dot += double(g.data[i]) * d[i] / norm;
        CHECK(ours >= dot - 1e-9);
      }
    }

    // l1 maximality within the configured sparsity pattern
    double q = rng.uniform(0, 100);
    Tensor dir = steepest_dir(g, Norm::L1, q);
    double ours = 0;
    std::vector<std::size_t> support;
    for (std::size_t i = 0; i < n; ++i) {
      ours += double(g.data[i]) * double(dir.data[i]);
      if (dir.data[i] != 0) support.push_back(i);
    }
    for (int probe = 0; probe < 2000 && !support.empty(); ++probe) {
      std::vector<double> d(n, 0.0);
      double l1 = 0;
      for (std::size_t i : support) {
        d[i] = rng.uniform(-1, 1);
        l1 += std::fabs(d[i]);
      }
      if (l1 == 0) continue;
      double dot = 0;
      for (std::size_t i : support) dot += double(g.data[i]) * d[i] / l1;
      CHECK(ours >= dot - 1e-9);
    }
  }
}
