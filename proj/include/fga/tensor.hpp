#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <utility>
#include <vector>

#include "fga/errors.hpp"
#include "fga/scalar.hpp"

namespace fga {

// Dense n-dimensional array, row-major, contiguous.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<scalar> data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s)
      : shape(std::move(s)), data(numel_of(shape), scalar(0)) {}

  Tensor(std::vector<std::size_t> s, std::vector<scalar> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != data.size())
      throw DimError("tensor: shape/data size mismatch");
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return s.empty() ? 0 : n;
  }

  // 1-d convenience constructor.
  static Tensor vec(std::initializer_list<double> vals) {
    Tensor t({vals.size()});
    std::size_t i = 0;
    for (double v : vals) t.data[i++] = static_cast<scalar>(v);
    return t;
  }
  static Tensor vec(const std::vector<double>& vals) {
    Tensor t({vals.size()});
    for (std::size_t i = 0; i < vals.size(); ++i)
      t.data[i] = static_cast<scalar>(vals[i]);
    return t;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool empty() const { return data.empty(); }

  scalar& operator[](std::size_t i) { return data[i]; }
  scalar operator[](std::size_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (scalar v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

// B x C x H x W pixel tensor with values in [0,1].
using ImageBatch = Tensor;

// Copies row r of a 2-d tensor into a 1-d tensor.
Tensor row(const Tensor& mat, std::size_t r);
void set_row(Tensor& mat, std::size_t r, const Tensor& v);

// Copies example b of a B x C x H x W batch into a C x H x W tensor.
Tensor example(const ImageBatch& batch, std::size_t b);
void set_example(ImageBatch& batch, std::size_t b, const Tensor& img);

// Counter-based splittable random stream. Identical (master_seed, stream_id)
// give identical draw sequences on any platform and any thread count; the
// i-th draw depends only on the counter, never on shared state.
struct RngStream {
  std::uint64_t master_seed = 0;
  std::uint64_t stream_id = 0;

  RngStream() { rebase(); }
  RngStream(std::uint64_t master, std::uint64_t stream)
      : master_seed(master), stream_id(stream) {
    rebase();
  }

  std::uint64_t next_u64() {
    return mix(base_ + (counter_++) * 0x9E3779B97F4A7C15ull);
  }

  // Uniform in [0,1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; consumes exactly two draws.
  double normal() {
    double u1 = 1.0 - uniform();  // (0,1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925287 * u2);
  }

  // Uniform index in [0,n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) %
           (n == 0 ? 1 : n);
  }

  // Independent child stream; used to give each example its own stream so
  // results do not depend on work scheduling.
  RngStream fork(std::uint64_t sub) const {
    return RngStream(master_seed, mix(stream_id * 0x9E3779B97F4A7C15ull + sub + 1));
  }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

 private:
  void rebase() {
    base_ = mix(master_seed + 0x9E3779B97F4A7C15ull) ^
            mix(stream_id + 0xD1B54A32D192ED03ull);
  }

  std::uint64_t base_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace fga
