#pragma once

#include <vector>

#include "fga/tensor.hpp"

namespace fga {

enum class Norm { L1, L2, Linf };

const char* norm_name(Norm p);
Norm parse_norm(const std::string& s);  // "1" | "2" | "inf"

// Numerically stable softmax of a 1-d tensor (max subtraction, double
// accumulation).
Tensor softmax(const Tensor& logits);

double lp_norm(const Tensor& v, Norm p);

// Nearest-rank percentile of |g|: sort ascending, take the element at
// 1-based index ceil(q/100 * N), clamped to [1, N].
double percentile_abs(const Tensor& g, double q);

// Bilinear resize, align-corners false. Output dims round(s*H) x round(s*W).
// s must lie in (0, 4]. s == 1 returns a bit-identical copy.
ImageBatch resize(const ImageBatch& img, double s);
ImageBatch resize_to(const ImageBatch& img, std::size_t out_h, std::size_t out_w);

// Adjoint of resize_to: scatters an out_h x out_w gradient back onto the
// in_h x in_w input grid with the same interpolation weights.
ImageBatch resize_vjp(const ImageBatch& grad_out, std::size_t in_h, std::size_t in_w);

Tensor clamp(const Tensor& t, double lo, double hi);
void clamp_inplace(Tensor& t, double lo, double hi);

}  // namespace fga
