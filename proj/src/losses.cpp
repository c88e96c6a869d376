#include "fga/losses.hpp"

#include <algorithm>
#include <cmath>

#include "fga/numkit.hpp"

namespace fga {

namespace {

// Double-precision log-softmax of e . W^T over the m rows of W.
std::vector<double> log_softmax_logits(const Tensor& e, const Tensor& W) {
  if (W.rank() != 2) throw DimError("guidance loss: W must be m x d");
  std::size_t m = W.shape[0], d = W.shape[1];
  if (e.numel() != d) throw DimError("guidance loss: embedding dim mismatch");
  std::vector<double> z(m);
  for (std::size_t r = 0; r < m; ++r) {
    double acc = 0;
    for (std::size_t j = 0; j < d; ++j)
      acc += double(e.data[j]) * double(W.data[r * d + j]);
    z[r] = acc;
  }
  double mx = *std::max_element(z.begin(), z.end());
  double sum = 0;
  for (double v : z) sum += std::exp(v - mx);
  double lse = mx + std::log(sum);
  for (double& v : z) v -= lse;
  return z;
}

std::vector<double> softmax_of(const std::vector<double>& log_p) {
  std::vector<double> p(log_p.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(log_p[i]);
  return p;
}

void check_labels(const std::vector<int>& labels, std::size_t m) {
  if (labels.empty()) throw ConfigError("guidance loss: empty label set");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= m)
      throw ConfigError("guidance loss: label out of range");
}

}  // namespace

LossValue loss_dev(const Tensor& e_adv, const Tensor& e_clean) {
  if (e_adv.numel() != e_clean.numel())
    throw DimError("loss_dev: embedding dim mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < e_adv.numel(); ++i)
    acc += double(e_adv.data[i]) * double(e_clean.data[i]);
  return {-acc, {}};
}

LossValue loss_gui(const Tensor& e_adv, const Tensor& W,
                   const std::vector<int>& labels) {
  check_labels(labels, W.shape[0]);
  std::vector<double> log_p = log_softmax_logits(e_adv, W);
  LossValue out;
  for (int y : labels) {
    double term = -log_p[static_cast<std::size_t>(y)];
    out.terms.push_back(term);
    out.value += term;
  }
  out.value /= double(labels.size());
  return out;
}

Tensor grad_gui_embedding(const Tensor& e_adv, const Tensor& W,
                          const std::vector<int>& labels) {
  check_labels(labels, W.shape[0]);
  std::size_t m = W.shape[0], d = W.shape[1];
  std::vector<double> p = softmax_of(log_softmax_logits(e_adv, W));

  std::vector<double> g(d, 0.0);
  double inv_n = 1.0 / double(labels.size());
  for (int y : labels)
    for (std::size_t j = 0; j < d; ++j)
      g[j] -= inv_n * double(W.data[static_cast<std::size_t>(y) * d + j]);
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t j = 0; j < d; ++j) g[j] += p[k] * double(W.data[k * d + j]);

  Tensor out({d});
  for (std::size_t j = 0; j < d; ++j) out.data[j] = static_cast<scalar>(g[j]);
  return out;
}

LossValue loss_gui_targeted(const Tensor& e_adv, const Tensor& W, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= W.shape[0])
    throw ConfigError("loss_gui_targeted: target out of range");
  std::vector<double> log_p = log_softmax_logits(e_adv, W);
  return {log_p[static_cast<std::size_t>(target)], {}};
}

Tensor grad_gui_targeted_embedding(const Tensor& e_adv, const Tensor& W, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= W.shape[0])
    throw ConfigError("loss_gui_targeted: target out of range");
  std::size_t m = W.shape[0], d = W.shape[1];
  std::vector<double> p = softmax_of(log_softmax_logits(e_adv, W));
  // d/de log p_t = w_t - sum_k p_k w_k
  Tensor out({d});
  for (std::size_t j = 0; j < d; ++j) {
    double g = double(W.data[static_cast<std::size_t>(target) * d + j]);
    for (std::size_t k = 0; k < m; ++k) g -= p[k] * double(W.data[k * d + j]);
    out.data[j] = static_cast<scalar>(g);
  }
  return out;
}

LossValue loss_set_gui(const Tensor& e_adv, const Tensor& W_union,
                       const std::vector<int>& own) {
  return loss_gui(e_adv, W_union, own);
}

LossValue loss_aug(const ImageBatch& v, const std::vector<double>& scales,
                   const std::function<double(const ImageBatch&)>& base_loss) {
  if (scales.empty()) throw ConfigError("loss_aug: empty scale set");
  LossValue out;
  for (double s : scales) {
    double term = base_loss(resize(v, s));
    out.terms.push_back(term);
    out.value += term;
  }
  return out;
}

LossValue cosine_deviation(const Tensor& e_t_adv, const Tensor& e_v) {
  if (e_t_adv.numel() != e_v.numel())
    throw DimError("cosine_deviation: embedding dim mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < e_v.numel(); ++i) {
    double a = e_t_adv.data[i], b = e_v.data[i];
    dot += a * b;
    na += a * a;
    nb += b * b;
  }
  if (na == 0 || nb == 0)
    throw NumericError("cosine_deviation: zero-norm embedding");
  return {-dot / (std::sqrt(na) * std::sqrt(nb)), {}};
}

LossValue fused_deviation(const Tensor& f_adv, const Tensor& f_clean) {
  if (f_adv.numel() != f_clean.numel())
    throw DimError("fused_deviation: embedding dim mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < f_adv.numel(); ++i) {
    double d = double(f_adv.data[i]) - double(f_clean.data[i]);
    acc += d * d;
  }
  return {std::sqrt(acc), {}};
}

}  // namespace fga
