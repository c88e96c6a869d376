#pragma once

#include <functional>
#include <vector>

#include "fga/tensor.hpp"

namespace fga {

// Scalar objective value with an optional per-term breakdown (per guiding
// label for the guidance losses, per scale for the augmented loss).
struct LossValue {
  double value = 0.0;
  std::vector<double> terms;

  operator double() const { return value; }
};

// Feature deviation: -e_adv . e_clean. Gradient w.r.t. e_adv is -e_clean.
LossValue loss_dev(const Tensor& e_adv, const Tensor& e_clean);

// Feature guidance: mean over guiding labels of the negative log-softmax of
// e_adv . W at each label. Maximized by the attack.
LossValue loss_gui(const Tensor& e_adv, const Tensor& W,
                   const std::vector<int>& labels);

// Closed-form gradient of loss_gui w.r.t. the embedding:
//   -(1/n) sum_i w_{y_i}  +  sum_k softmax(e . W)_k w_k
Tensor grad_gui_embedding(const Tensor& e_adv, const Tensor& W,
                          const std::vector<int>& labels);

// Targeted guidance: log-softmax at the target row (always <= 0, maximized).
LossValue loss_gui_targeted(const Tensor& e_adv, const Tensor& W, int target);
Tensor grad_gui_targeted_embedding(const Tensor& e_adv, const Tensor& W, int target);

// Set-level guidance of the batch-union text set: identical form to
// loss_gui with W covering the whole union and `own` the example's matched
// plus adversarial texts (duplicates counted).
LossValue loss_set_gui(const Tensor& e_adv, const Tensor& W_union,
                       const std::vector<int>& own);

// Sum of a base image loss over resized copies.
LossValue loss_aug(const ImageBatch& v, const std::vector<double>& scales,
                   const std::function<double(const ImageBatch&)>& base_loss);

// Negative cosine similarity; the text-attack objective.
LossValue cosine_deviation(const Tensor& e_t_adv, const Tensor& e_v);

// L2 distance between fused embeddings; the after-fuse text objective.
LossValue fused_deviation(const Tensor& f_adv, const Tensor& f_clean);

}  // namespace fga
