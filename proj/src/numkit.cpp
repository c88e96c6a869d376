#include "fga/numkit.hpp"

#include <algorithm>
#include <cmath>

namespace fga {

Tensor row(const Tensor& mat, std::size_t r) {
  if (mat.rank() != 2) throw DimError("row: expected rank-2 tensor");
  std::size_t cols = mat.shape[1];
  Tensor out({cols});
  std::copy_n(mat.data.begin() + r * cols, cols, out.data.begin());
  return out;
}

void set_row(Tensor& mat, std::size_t r, const Tensor& v) {
  if (mat.rank() != 2 || v.numel() != mat.shape[1])
    throw DimError("set_row: shape mismatch");
  std::copy_n(v.data.begin(), v.numel(), mat.data.begin() + r * mat.shape[1]);
}

Tensor example(const ImageBatch& batch, std::size_t b) {
  if (batch.rank() != 4) throw DimError("example: expected B x C x H x W");
  std::size_t n = batch.shape[1] * batch.shape[2] * batch.shape[3];
  Tensor out({batch.shape[1], batch.shape[2], batch.shape[3]});
  std::copy_n(batch.data.begin() + b * n, n, out.data.begin());
  return out;
}

void set_example(ImageBatch& batch, std::size_t b, const Tensor& img) {
  std::size_t n = batch.shape[1] * batch.shape[2] * batch.shape[3];
  if (img.numel() != n) throw DimError("set_example: shape mismatch");
  std::copy_n(img.data.begin(), n, batch.data.begin() + b * n);
}

const char* norm_name(Norm p) {
  switch (p) {
    case Norm::L1: return "1";
    case Norm::L2: return "2";
    case Norm::Linf: return "inf";
  }
  return "?";
}

Norm parse_norm(const std::string& s) {
  if (s == "1") return Norm::L1;
  if (s == "2") return Norm::L2;
  if (s == "inf") return Norm::Linf;
  throw ConfigError("unknown norm '" + s + "' (expected 1, 2 or inf)");
}

Tensor softmax(const Tensor& logits) {
  if (logits.empty()) throw DimError("softmax: empty input");
  if (!logits.all_finite()) throw NumericError("softmax: non-finite input");
  double mx = -HUGE_VAL;
  for (scalar v : logits.data) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> e(logits.numel());
  double sum = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    e[i] = std::exp(static_cast<double>(logits.data[i]) - mx);
    sum += e[i];
  }
  Tensor out(logits.shape);
  for (std::size_t i = 0; i < e.size(); ++i)
    out.data[i] = static_cast<scalar>(e[i] / sum);
  return out;
}

double lp_norm(const Tensor& v, Norm p) {
  if (!v.all_finite()) throw NumericError("lp_norm: non-finite input");
  double acc = 0.0;
  switch (p) {
    case Norm::L1:
      for (scalar x : v.data) acc += std::fabs(static_cast<double>(x));
      return acc;
    case Norm::L2:
      for (scalar x : v.data) {
        double d = static_cast<double>(x);
        acc += d * d;
      }
      return std::sqrt(acc);
    case Norm::Linf:
      for (scalar x : v.data)
        acc = std::max(acc, std::fabs(static_cast<double>(x)));
      return acc;
  }
  return acc;
}

double percentile_abs(const Tensor& g, double q) {
  if (g.empty()) throw DimError("percentile_abs: empty input");
  if (!(q >= 0.0 && q <= 100.0))
    throw ConfigError("percentile_abs: q must lie in [0,100]");
  std::vector<double> a(g.numel());
  for (std::size_t i = 0; i < a.size(); ++i)
    a[i] = std::fabs(static_cast<double>(g.data[i]));
  std::sort(a.begin(), a.end());
  std::size_t n = a.size();
  auto idx = static_cast<std::size_t>(
      std::ceil(q / 100.0 * static_cast<double>(n)));
  idx = std::clamp<std::size_t>(idx, 1, n);
  return a[idx - 1];
}

namespace {

struct Lerp {
  std::size_t lo, hi;
  double w;  // weight of hi
};

// Source coordinate mapping for align-corners-false bilinear sampling.
Lerp lerp_coord(std::size_t out_i, std::size_t out_n, std::size_t in_n) {
  double src = (static_cast<double>(out_i) + 0.5) *
                   static_cast<double>(in_n) / static_cast<double>(out_n) -
               0.5;
  if (src <= 0.0) return {0, 0, 0.0};
  double f = std::floor(src);
  auto lo = static_cast<std::size_t>(f);
  if (lo >= in_n - 1) return {in_n - 1, in_n - 1, 0.0};
  return {lo, lo + 1, src - f};
}

}  // namespace

ImageBatch resize_to(const ImageBatch& img, std::size_t out_h, std::size_t out_w) {
  if (img.rank() != 4) throw DimError("resize: expected B x C x H x W");
  std::size_t B = img.shape[0], C = img.shape[1], H = img.shape[2], W = img.shape[3];
  if (out_h < 1 || out_w < 1) throw DimError("resize: degenerate output size");
  if (out_h == H && out_w == W) return img;  // bit-identical

  ImageBatch out({B, C, out_h, out_w});
  std::vector<Lerp> ys(out_h), xs(out_w);
  for (std::size_t y = 0; y < out_h; ++y) ys[y] = lerp_coord(y, out_h, H);
  for (std::size_t x = 0; x < out_w; ++x) xs[x] = lerp_coord(x, out_w, W);

  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const scalar* in = img.data.data() + (b * C + c) * H * W;
      scalar* dst = out.data.data() + (b * C + c) * out_h * out_w;
      for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t x = 0; x < out_w; ++x) {
          const Lerp& ly = ys[y];
          const Lerp& lx = xs[x];
          double v00 = in[ly.lo * W + lx.lo];
          double v01 = in[ly.lo * W + lx.hi];
          double v10 = in[ly.hi * W + lx.lo];
          double v11 = in[ly.hi * W + lx.hi];
          double top = v00 + (v01 - v00) * lx.w;
          double bot = v10 + (v11 - v10) * lx.w;
          dst[y * out_w + x] = static_cast<scalar>(top + (bot - top) * ly.w);
        }
    }
  return out;
}

ImageBatch resize(const ImageBatch& img, double s) {
  if (!(s > 0.0 && s <= 4.0)) throw ConfigError("resize: scale must lie in (0,4]");
  if (img.rank() != 4) throw DimError("resize: expected B x C x H x W");
  auto oh = static_cast<std::size_t>(
      std::llround(s * static_cast<double>(img.shape[2])));
  auto ow = static_cast<std::size_t>(
      std::llround(s * static_cast<double>(img.shape[3])));
  if (oh < 1 || ow < 1) throw DimError("resize: degenerate output size");
  return resize_to(img, oh, ow);
}

ImageBatch resize_vjp(const ImageBatch& grad_out, std::size_t in_h, std::size_t in_w) {
  if (grad_out.rank() != 4) throw DimError("resize_vjp: expected B x C x H x W");
  std::size_t B = grad_out.shape[0], C = grad_out.shape[1];
  std::size_t oh = grad_out.shape[2], ow = grad_out.shape[3];
  ImageBatch grad_in({B, C, in_h, in_w});
  if (oh == in_h && ow == in_w) {
    grad_in.data = grad_out.data;
    return grad_in;
  }
  std::vector<Lerp> ys(oh), xs(ow);
  for (std::size_t y = 0; y < oh; ++y) ys[y] = lerp_coord(y, oh, in_h);
  for (std::size_t x = 0; x < ow; ++x) xs[x] = lerp_coord(x, ow, in_w);

  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      scalar* gi = grad_in.data.data() + (b * C + c) * in_h * in_w;
      const scalar* go = grad_out.data.data() + (b * C + c) * oh * ow;
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          const Lerp& ly = ys[y];
          const Lerp& lx = xs[x];
          double g = go[y * ow + x];
          gi[ly.lo * in_w + lx.lo] += static_cast<scalar>(g * (1 - ly.w) * (1 - lx.w));
          gi[ly.lo * in_w + lx.hi] += static_cast<scalar>(g * (1 - ly.w) * lx.w);
          gi[ly.hi * in_w + lx.lo] += static_cast<scalar>(g * ly.w * (1 - lx.w));
          gi[ly.hi * in_w + lx.hi] += static_cast<scalar>(g * ly.w * lx.w);
        }
    }
  return grad_in;
}

Tensor clamp(const Tensor& t, double lo, double hi) {
  Tensor out = t;
  clamp_inplace(out, lo, hi);
  return out;
}

void clamp_inplace(Tensor& t, double lo, double hi) {
  if (lo > hi) throw ConfigError("clamp: lo > hi");
  auto l = static_cast<scalar>(lo);
  auto h = static_cast<scalar>(hi);
  for (scalar& v : t.data) v = std::min(std::max(v, l), h);
}

}  // namespace fga
