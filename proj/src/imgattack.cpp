#include "fga/imgattack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fga/losses.hpp"
#include "fga/parallel.hpp"

namespace fga {

void AttackConfig::validate() const {
  if (epsilon < 0) throw ConfigError("attack: epsilon must be >= 0");
  if (steps < 1) throw ConfigError("attack: steps must be >= 1");
  if (resolved_alpha() <= 0) throw ConfigError("attack: alpha must be > 0");
  if (q_percentile < 0 || q_percentile > 100)
    throw ConfigError("attack: q_percentile must lie in [0,100]");
  for (double s : scales)
    if (!(s > 0 && s <= 4)) throw ConfigError("attack: scales must lie in (0,4]");
  if (momentum_mu < 0) throw ConfigError("attack: momentum_mu must be >= 0");
}

AttackConfig AttackConfig::linf_default() {
  AttackConfig cfg;
  cfg.p = Norm::Linf;
  cfg.epsilon = 2.0 / 255.0;
  cfg.steps = 10;
  return cfg;
}

AttackConfig AttackConfig::l1_default() {
  AttackConfig cfg;
  cfg.p = Norm::L1;
  cfg.epsilon = 1.0;  // 255 on the 0-255 scale
  cfg.steps = 20;
  return cfg;
}

PatchSpec PatchSpec::square(std::size_t height, std::size_t width, std::size_t top,
                            std::size_t left, std::size_t side) {
  if (side == 0 || top + side > height || left + side > width)
    throw ConfigError("patch: square does not fit inside the image");
  PatchSpec spec;
  spec.mask = Tensor({height, width});
  for (std::size_t y = top; y < top + side; ++y)
    for (std::size_t x = left; x < left + side; ++x)
      spec.mask.data[y * width + x] = 1;
  spec.area_fraction =
      double(side * side) / (double(height) * double(width));
  return spec;
}

PatchSpec PatchSpec::random_square(std::size_t height, std::size_t width,
                                   double area_fraction, RngStream& rng) {
  if (!(area_fraction > 0 && area_fraction <= 1))
    throw ConfigError("patch: area_fraction must lie in (0,1]");
  auto side = static_cast<std::size_t>(std::llround(
      std::sqrt(area_fraction * double(height) * double(width))));
  side = std::clamp<std::size_t>(side, 1, std::min(height, width));
  std::size_t top = rng.index(height - side + 1);
  std::size_t left = rng.index(width - side + 1);
  return square(height, width, top, left, side);
}

std::size_t PatchSpec::active_pixels() const {
  std::size_t n = 0;
  for (scalar v : mask.data) n += v != 0 ? 1 : 0;
  return n;
}

Tensor steepest_dir(const Tensor& g, Norm p, double q_percentile) {
  Tensor dir(g.shape);
  switch (p) {
    case Norm::Linf: {
      for (std::size_t i = 0; i < g.numel(); ++i) {
        double v = g.data[i];
        dir.data[i] = static_cast<scalar>(v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0));
      }
      return dir;
    }
    case Norm::L2: {
      double n = lp_norm(g, Norm::L2);
      if (n == 0) return dir;
      for (std::size_t i = 0; i < g.numel(); ++i)
        dir.data[i] = static_cast<scalar>(double(g.data[i]) / n);
      return dir;
    }
    case Norm::L1: {
      double t = percentile_abs(g, q_percentile);
      double l1 = 0;
      for (std::size_t i = 0; i < g.numel(); ++i) {
        double v = g.data[i];
        double e = std::fabs(v) >= t ? (v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0)) : 0.0;
        dir.data[i] = static_cast<scalar>(e);
        l1 += std::fabs(e);
      }
      if (l1 == 0) return dir;
      for (scalar& v : dir.data) v = static_cast<scalar>(double(v) / l1);
      return dir;
    }
  }
  return dir;
}

Tensor project(const Tensor& delta, double epsilon, Norm p) {
  if (epsilon < 0) throw ConfigError("project: epsilon must be >= 0");
  Tensor out = delta;
  switch (p) {
    case Norm::Linf: {
      auto e = static_cast<scalar>(epsilon);
      for (scalar& v : out.data) v = std::min(std::max(v, static_cast<scalar>(-epsilon)), e);
      return out;
    }
    case Norm::L2: {
      double n = lp_norm(delta, Norm::L2);
      if (n <= epsilon) return out;
      double s = epsilon / n;
      for (scalar& v : out.data) v = static_cast<scalar>(double(v) * s);
      return out;
    }
    case Norm::L1: {
      double n = lp_norm(delta, Norm::L1);
      if (n <= epsilon) return out;
      // Exact Euclidean projection onto the l1 ball: sort |delta|
      // descending, find the water-filling threshold lambda, then
      // soft-threshold.
      std::vector<double> u(delta.numel());
      for (std::size_t i = 0; i < u.size(); ++i)
        u[i] = std::fabs(double(delta.data[i]));
      std::sort(u.begin(), u.end(), std::greater<>());
      double cum = 0, lambda = 0;
      std::size_t rho = 0;
      for (std::size_t j = 0; j < u.size(); ++j) {
        cum += u[j];
        double cand = (cum - epsilon) / double(j + 1);
        if (u[j] > cand) {
          rho = j + 1;
          lambda = cand;
        }
      }
      (void)rho;
      for (std::size_t i = 0; i < out.numel(); ++i) {
        double v = delta.data[i];
        double mag = std::max(std::fabs(v) - lambda, 0.0);
        out.data[i] = static_cast<scalar>(v > 0 ? mag : -mag);
      }
      return out;
    }
  }
  return out;
}

Tensor momentum_transform(const Tensor& g, MomentumState& state, double mu) {
  if (!state.g_m.same_shape(g)) throw DimError("momentum: state shape mismatch");
  Tensor out = g;
  double mean_abs = 0;
  for (scalar v : g.data) mean_abs += std::fabs(double(v));
  mean_abs /= double(g.numel());
  if (mean_abs > 0)
    for (scalar& v : out.data) v = static_cast<scalar>(double(v) / mean_abs);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data[i] = static_cast<scalar>(double(out.data[i]) +
                                      mu * double(state.g_m.data[i]));
  state.g_m = out;
  return out;
}

namespace {

ImageBatch as_batch(const Tensor& chw) {
  ImageBatch b({1, chw.shape[0], chw.shape[1], chw.shape[2]});
  b.data = chw.data;
  return b;
}

Tensor as_chw(const ImageBatch& batch) {
  Tensor t({batch.shape[1], batch.shape[2], batch.shape[3]});
  t.data = batch.data;
  return t;
}

// Objective value and pixel gradient at x, summed over the scale set when
// augmentation is on; gradients flow back through the bilinear resize.
double eval_objective(const EmbeddingModel& model, const EmbeddingObjective& obj,
                      std::size_t ex, const Tensor& x,
                      const std::vector<double>& scales, Tensor& grad) {
  if (scales.empty()) {
    Tensor e = model.forward(ex, x);
    Tensor ge;
    double loss = obj(ex, e, ge);
    grad = model.vjp(ex, x, ge);
    return loss;
  }
  double total = 0;
  grad = Tensor(x.shape);
  std::size_t H = x.shape[1], W = x.shape[2];
  for (double s : scales) {
    ImageBatch xs4 = resize(as_batch(x), s);
    Tensor xs = as_chw(xs4);
    Tensor e = model.forward(ex, xs);
    Tensor ge;
    total += obj(ex, e, ge);
    Tensor gs = model.vjp(ex, xs, ge);
    ImageBatch gback = resize_vjp(as_batch(gs), H, W);
    for (std::size_t i = 0; i < grad.numel(); ++i)
      grad.data[i] += gback.data[i];
  }
  return total;
}

// Draw uniformly from the epsilon p-ball.
void sample_in_ball(Tensor& delta, RngStream& rng, double epsilon, Norm p) {
  std::size_t n = delta.numel();
  switch (p) {
    case Norm::Linf:
      for (scalar& v : delta.data)
        v = static_cast<scalar>(rng.uniform(-epsilon, epsilon));
      return;
    case Norm::L2: {
      double norm2 = 0;
      std::vector<double> z(n);
      for (double& v : z) {
        v = rng.normal();
        norm2 += v * v;
      }
      double r = epsilon * std::pow(rng.uniform(), 1.0 / double(n));
      double s = norm2 > 0 ? r / std::sqrt(norm2) : 0;
      for (std::size_t i = 0; i < n; ++i)
        delta.data[i] = static_cast<scalar>(z[i] * s);
      return;
    }
    case Norm::L1: {
      // Signed Dirichlet weights scaled by a radius with the right density.
      std::vector<double> e(n);
      double sum = 0;
      for (double& v : e) {
        v = -std::log(1.0 - rng.uniform());
        sum += v;
      }
      double r = epsilon * std::pow(rng.uniform(), 1.0 / double(n));
      for (std::size_t i = 0; i < n; ++i) {
        double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        delta.data[i] = static_cast<scalar>(sign * r * e[i] / (sum > 0 ? sum : 1));
      }
      return;
    }
  }
}

// Interior margin absorbing the pixel-quantization rounding of v + delta,
// so emitted images never exceed the budget.
double engine_epsilon(double epsilon, std::size_t n, Norm p) {
  double ulp_half = sizeof(scalar) == 4 ? 0x1.0p-24 : 0x1.0p-53;
  double margin = 2.0 * ulp_half;
  if (p == Norm::L1) margin *= double(n);
  if (p == Norm::L2) margin *= std::sqrt(double(n));
  return std::max(0.0, epsilon - margin);
}

void clamp_delta_to_pixel_range(Tensor& delta, const Tensor& v) {
  for (std::size_t i = 0; i < delta.numel(); ++i) {
    scalar lo = -v.data[i];
    scalar hi = static_cast<scalar>(1) - v.data[i];
    delta.data[i] = std::min(std::max(delta.data[i], lo), hi);
  }
}

std::array<double, 3> norms_of(const Tensor& d) {
  return {lp_norm(d, Norm::L1), lp_norm(d, Norm::L2), lp_norm(d, Norm::Linf)};
}

void check_images(const ImageBatch& v) {
  if (v.rank() != 4) throw DimError("attack: expected B x C x H x W images");
  for (scalar x : v.data)
    if (!(x >= 0 && x <= 1))
      throw ConfigError("attack: input pixels must lie in [0,1]");
}

}  // namespace

std::pair<ImageBatch, AttackTrace> pgd_attack(const EmbeddingModel& model,
                                              const ImageBatch& v,
                                              const EmbeddingObjective& objective,
                                              const AttackConfig& cfg, int threads) {
  cfg.validate();
  check_images(v);
  std::size_t B = v.shape[0];
  std::size_t pix = v.shape[1] * v.shape[2] * v.shape[3];

  ImageBatch adv = v;
  AttackTrace trace;
  trace.losses.assign(B, {});
  trace.final_norms.assign(B, {0, 0, 0});
  trace.iterations = cfg.steps;

  double alpha = cfg.resolved_alpha();
  double eps = engine_epsilon(cfg.epsilon, pix, cfg.p);

  parallel_for(B, threads, [&](std::size_t ex) {
    Tensor v_ex = example(v, ex);
    Tensor delta(v_ex.shape);
    RngStream rng = RngStream(cfg.seed, 0).fork(ex);
    if (cfg.random_start && eps > 0) {
      sample_in_ball(delta, rng, eps, cfg.p);
      clamp_delta_to_pixel_range(delta, v_ex);
    }
    MomentumState mom{Tensor(v_ex.shape)};

    std::vector<double>& losses = trace.losses[ex];
    losses.reserve(static_cast<std::size_t>(cfg.steps));
    Tensor x = v_ex;
    for (int it = 0; it < cfg.steps; ++it) {
      for (std::size_t i = 0; i < x.numel(); ++i)
        x.data[i] = v_ex.data[i] + delta.data[i];
      Tensor g;
      double loss = eval_objective(model, objective, ex, x, cfg.scales, g);
      if (!std::isfinite(loss) || !g.all_finite())
        throw AttackError("pgd: non-finite loss or gradient at iteration " +
                          std::to_string(it) + " (example " + std::to_string(ex) +
                          ")");
      if (cfg.momentum_mu > 0) g = momentum_transform(g, mom, cfg.momentum_mu);
      Tensor dir = steepest_dir(g, cfg.p, cfg.q_percentile);
      for (std::size_t i = 0; i < delta.numel(); ++i)
        delta.data[i] =
            static_cast<scalar>(double(delta.data[i]) + alpha * double(dir.data[i]));
      delta = project(delta, eps, cfg.p);
      clamp_delta_to_pixel_range(delta, v_ex);
      losses.push_back(loss);
    }

    Tensor adv_ex(v_ex.shape);
    for (std::size_t i = 0; i < adv_ex.numel(); ++i)
      adv_ex.data[i] = v_ex.data[i] + delta.data[i];
    clamp_inplace(adv_ex, 0.0, 1.0);
    set_example(adv, ex, adv_ex);

    Tensor final_delta(v_ex.shape);
    for (std::size_t i = 0; i < final_delta.numel(); ++i)
      final_delta.data[i] = adv_ex.data[i] - v_ex.data[i];
    trace.final_norms[ex] = norms_of(final_delta);
  });

  return {std::move(adv), std::move(trace)};
}

std::pair<ImageBatch, AttackTrace> patch_attack(const EmbeddingModel& model,
                                                const ImageBatch& v,
                                                const EmbeddingObjective& objective,
                                                const std::vector<PatchSpec>& specs,
                                                const PatchConfig& cfg, int threads) {
  check_images(v);
  if (cfg.steps < 1) throw ConfigError("patch: steps must be >= 1");
  std::size_t B = v.shape[0], C = v.shape[1], H = v.shape[2], W = v.shape[3];
  if (specs.empty() || (specs.size() != 1 && specs.size() != B))
    throw ConfigError("patch: need one mask or one per example");
  std::size_t empty_masks = 0;
  for (const PatchSpec& spec : specs) {
    if (spec.mask.rank() != 2 || spec.mask.shape[0] != H || spec.mask.shape[1] != W)
      throw DimError("patch: mask shape mismatch");
    for (scalar m : spec.mask.data)
      if (m != 0 && m != 1) throw ConfigError("patch: mask must be binary");
    if (spec.active_pixels() == 0) empty_masks++;
  }

  ImageBatch adv = v;
  AttackTrace trace;
  trace.losses.assign(B, {});
  trace.final_norms.assign(B, {0, 0, 0});

  if (empty_masks == specs.size()) {
    trace.warnings.push_back("patch mask is empty; returning input unchanged");
    trace.iterations = 0;
    return {std::move(adv), std::move(trace)};
  }
  if (empty_masks > 0)
    trace.warnings.push_back("some patch masks are empty; those examples unchanged");
  trace.iterations = cfg.steps;

  parallel_for(B, threads, [&](std::size_t ex) {
    const PatchSpec& spec = specs[specs.size() == 1 ? 0 : ex];
    if (spec.active_pixels() == 0) return;
    Tensor v_ex = example(v, ex);
    Tensor x = v_ex;  // composite; outside-mask pixels never touched
    std::vector<double>& losses = trace.losses[ex];
    losses.reserve(static_cast<std::size_t>(cfg.steps));

    for (int it = 0; it < cfg.steps; ++it) {
      Tensor g;
      double loss = eval_objective(model, objective, ex, x, {}, g);
      if (!std::isfinite(loss) || !g.all_finite())
        throw AttackError("patch: non-finite loss or gradient at iteration " +
                          std::to_string(it) + " (example " + std::to_string(ex) +
                          ")");
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H * W; ++i) {
          if (spec.mask.data[i] == 0) continue;
          std::size_t idx = c * H * W + i;
          double gv = g.data[idx];
          double step = cfg.raw_grad_update
                            ? gv
                            : cfg.alpha * (gv > 0 ? 1.0 : (gv < 0 ? -1.0 : 0.0));
          double nv = double(x.data[idx]) + step;
          x.data[idx] = static_cast<scalar>(std::min(1.0, std::max(0.0, nv)));
        }
      losses.push_back(loss);
    }

    set_example(adv, ex, x);
    Tensor final_delta(v_ex.shape);
    for (std::size_t i = 0; i < final_delta.numel(); ++i)
      final_delta.data[i] = x.data[i] - v_ex.data[i];
    trace.final_norms[ex] = norms_of(final_delta);
  });

  return {std::move(adv), std::move(trace)};
}

std::pair<ImageBatch, AttackTrace> fga(const EmbeddingModel& model,
                                       const ImageBatch& v, const GuidanceSet& G,
                                       const AttackConfig& cfg, int threads) {
  if (cfg.targeted < 0) {
    if (G.labels.size() != v.shape[0])
      throw ConfigError("fga: guidance labels must cover every example");
    validate_untargeted(G);
  } else if (static_cast<std::size_t>(cfg.targeted) >= G.m()) {
    throw ConfigError("fga: target label out of range");
  }

  EmbeddingObjective obj = [&G, &cfg](std::size_t ex, const Tensor& e, Tensor& ge) {
    if (cfg.targeted >= 0) {
      double loss = loss_gui_targeted(e, G.W, cfg.targeted);
      ge = grad_gui_targeted_embedding(e, G.W, cfg.targeted);
      return loss;
    }
    double loss = loss_gui(e, G.W, G.labels[ex]);
    ge = grad_gui_embedding(e, G.W, G.labels[ex]);
    return loss;
  };
  return pgd_attack(model, v, obj, cfg, threads);
}

std::pair<ImageBatch, AttackTrace> fda(const EmbeddingModel& model,
                                       const ImageBatch& v, const AttackConfig& cfg,
                                       int threads) {
  std::size_t B = v.shape[0];
  std::vector<Tensor> clean(B);
  for (std::size_t ex = 0; ex < B; ++ex)
    clean[ex] = model.forward(ex, example(v, ex));

  EmbeddingObjective obj = [&clean](std::size_t ex, const Tensor& e, Tensor& ge) {
    double loss = loss_dev(e, clean[ex]);
    ge = Tensor(e.shape);
    for (std::size_t i = 0; i < ge.numel(); ++i)
      ge.data[i] = static_cast<scalar>(-double(clean[ex].data[i]));
    return loss;
  };
  return pgd_attack(model, v, obj, cfg, threads);
}

std::pair<ImageBatch, AttackTrace> fga_targeted_patch(
    const EmbeddingModel& model, const ImageBatch& v, const GuidanceSet& G,
    const std::vector<int>& targets, const std::vector<PatchSpec>& specs,
    const PatchConfig& cfg, int threads) {
  std::size_t B = v.shape[0];
  if (targets.empty() || (targets.size() != 1 && targets.size() != B))
    throw ConfigError("fga_targeted_patch: need one target or one per example");
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= G.m())
      throw ConfigError("fga_targeted_patch: target out of range");

  EmbeddingObjective obj = [&G, &targets](std::size_t ex, const Tensor& e,
                                          Tensor& ge) {
    int target = targets.size() == 1 ? targets[0] : targets[ex];
    double loss = loss_gui_targeted(e, G.W, target);
    ge = grad_gui_targeted_embedding(e, G.W, target);
    return loss;
  };
  return patch_attack(model, v, obj, specs, cfg, threads);
}

}  // namespace fga
