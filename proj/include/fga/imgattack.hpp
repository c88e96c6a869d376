#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "fga/guidance.hpp"
#include "fga/models.hpp"
#include "fga/numkit.hpp"
#include "fga/tensor.hpp"

namespace fga {

struct AttackConfig {
  Norm p = Norm::Linf;
  double epsilon = 2.0 / 255.0;  // budget on the [0,1] pixel scale
  int steps = 10;
  double alpha = 0.0;  // <= 0 resolves to 2.5 * epsilon / steps
  double momentum_mu = 0.0;
  double q_percentile = 90.0;  // sparsity knob of the l1 direction
  std::vector<double> scales;  // non-empty enables resize augmentation
  bool random_start = false;
  int targeted = -1;  // >= 0: guidance row to move toward
  std::uint64_t seed = 0;

  double resolved_alpha() const { return alpha > 0 ? alpha : 2.5 * epsilon / steps; }
  void validate() const;

  static AttackConfig linf_default();  // eps 2/255, 10 steps
  static AttackConfig l1_default();    // eps 1.0, 20 steps
};

// Filled axis-aligned square mask broadcast over channels.
struct PatchSpec {
  Tensor mask;  // H x W of {0,1}
  double area_fraction = 0.0;

  static PatchSpec square(std::size_t height, std::size_t width, std::size_t top,
                          std::size_t left, std::size_t side);
  static PatchSpec random_square(std::size_t height, std::size_t width,
                                 double area_fraction, RngStream& rng);
  std::size_t active_pixels() const;
};

struct PatchConfig {
  int steps = 100;
  double alpha = 8.0 / 255.0;  // per-step linf magnitude inside the mask
  bool raw_grad_update = false;  // delta += g instead of alpha * sign(g)
  std::uint64_t seed = 0;
};

struct MomentumState {
  Tensor g_m;  // image-shaped, zero at attack start
};

struct AttackTrace {
  std::vector<std::vector<double>> losses;  // [example][iteration]
  std::vector<std::array<double, 3>> final_norms;  // l1, l2, linf per example
  int iterations = 0;
  std::vector<std::string> warnings;
};

// Per-example objective on embeddings: fills grad_emb, returns the loss to
// be maximized.
using EmbeddingObjective =
    std::function<double(std::size_t ex, const Tensor& emb, Tensor& grad_emb)>;

// Unit p-norm direction maximizing g . d: sign for linf, normalized gradient
// for l2, and for l1 the signed indicator of entries at or above the q-th
// percentile of |g|, l1-normalized. All-zero gradients return zero.
Tensor steepest_dir(const Tensor& g, Norm p, double q_percentile = 90.0);

// Euclidean projection onto the p-ball of radius epsilon. Identity whenever
// the input already lies inside. l1 uses the exact sort-and-threshold method.
Tensor project(const Tensor& delta, double epsilon, Norm p);

// Mean-abs normalization followed by momentum accumulation:
//   g <- g / mean|g|;  g <- g + mu * g_m;  g_m <- g
// A zero mean-abs skips the normalization.
Tensor momentum_transform(const Tensor& g, MomentumState& state, double mu);

// Iterative gradient ascent with per-step steepest direction, ball
// projection and pixel clamping. Deterministic given cfg.seed for any
// thread count.
std::pair<ImageBatch, AttackTrace> pgd_attack(const EmbeddingModel& model,
                                              const ImageBatch& v,
                                              const EmbeddingObjective& objective,
                                              const AttackConfig& cfg,
                                              int threads = 1);

// Unbounded perturbation confined to the mask; pixels outside it are
// bit-identical to the input. `specs` holds one mask per example or a
// single shared mask.
std::pair<ImageBatch, AttackTrace> patch_attack(const EmbeddingModel& model,
                                                const ImageBatch& v,
                                                const EmbeddingObjective& objective,
                                                const std::vector<PatchSpec>& specs,
                                                const PatchConfig& cfg,
                                                int threads = 1);

// Feature guidance attack: pgd with the guidance loss (targeted when
// cfg.targeted >= 0, using that row of G).
std::pair<ImageBatch, AttackTrace> fga(const EmbeddingModel& model,
                                       const ImageBatch& v, const GuidanceSet& G,
                                       const AttackConfig& cfg, int threads = 1);

// Feature deviation baseline: pgd maximizing -E(x') . E(x).
std::pair<ImageBatch, AttackTrace> fda(const EmbeddingModel& model,
                                       const ImageBatch& v, const AttackConfig& cfg,
                                       int threads = 1);

// Patch attack that pulls each example's embedding toward a target row of G.
// `targets` holds one row index per example (or a single broadcast entry).
std::pair<ImageBatch, AttackTrace> fga_targeted_patch(
    const EmbeddingModel& model, const ImageBatch& v, const GuidanceSet& G,
    const std::vector<int>& targets, const std::vector<PatchSpec>& specs,
    const PatchConfig& cfg, int threads = 1);

}  // namespace fga
