#include "fga/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fga/numkit.hpp"

namespace fga {

namespace {

// y = x W^T + b, x: B x in, W: out x in.
Tensor linear_forward(const Linear& lin, const Tensor& x) {
  std::size_t B = x.shape[0], in = x.shape[1], out = lin.W.shape[0];
  if (in != lin.W.shape[1]) throw DimError("linear: input dim mismatch");
  Tensor y({B, out});
  for (std::size_t b = 0; b < B; ++b) {
    const scalar* xb = x.data.data() + b * in;
    scalar* yb = y.data.data() + b * out;
    for (std::size_t o = 0; o < out; ++o) {
      const scalar* w = lin.W.data.data() + o * in;
      double acc = lin.b.data[o];
      for (std::size_t i = 0; i < in; ++i) acc += double(w[i]) * double(xb[i]);
      yb[o] = static_cast<scalar>(acc);
    }
  }
  return y;
}

// Given dL/dy, accumulates dL/dW, dL/db and returns dL/dx.
Tensor linear_backward(const Linear& lin, const Tensor& x, const Tensor& gy,
                       Linear* grads) {
  std::size_t B = x.shape[0], in = x.shape[1], out = lin.W.shape[0];
  Tensor gx({B, in});
  for (std::size_t b = 0; b < B; ++b) {
    const scalar* xb = x.data.data() + b * in;
    const scalar* gyb = gy.data.data() + b * out;
    scalar* gxb = gx.data.data() + b * in;
    for (std::size_t o = 0; o < out; ++o) {
      double g = gyb[o];
      const scalar* w = lin.W.data.data() + o * in;
      if (grads) {
        scalar* gw = grads->W.data.data() + o * in;
        for (std::size_t i = 0; i < in; ++i)
          gw[i] += static_cast<scalar>(g * double(xb[i]));
        grads->b.data[o] += static_cast<scalar>(g);
      }
      for (std::size_t i = 0; i < in; ++i)
        gxb[i] += static_cast<scalar>(g * double(w[i]));
    }
  }
  return gx;
}

void tanh_inplace(Tensor& t) {
  for (scalar& v : t.data) v = static_cast<scalar>(std::tanh(double(v)));
}

Linear make_linear(std::size_t out, std::size_t in, RngStream& rng) {
  Linear lin;
  lin.W = Tensor({out, in});
  lin.b = Tensor({out});
  double s = 1.0 / std::sqrt(static_cast<double>(in));
  for (scalar& w : lin.W.data) w = static_cast<scalar>(rng.uniform(-s, s));
  return lin;
}

Linear zeros_like(const Linear& lin) {
  Linear g;
  g.W = Tensor(lin.W.shape);
  g.b = Tensor(lin.b.shape);
  return g;
}

// Row-wise e = z / ||z||; zero rows pass through.
Tensor normalize_rows(const Tensor& z, std::vector<double>* norms) {
  std::size_t B = z.shape[0], d = z.shape[1];
  Tensor e = z;
  if (norms) norms->assign(B, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    double n = 0;
    for (std::size_t i = 0; i < d; ++i) {
      double v = z.data[b * d + i];
      n += v * v;
    }
    n = std::sqrt(n);
    if (norms) (*norms)[b] = n;
    if (n > 0)
      for (std::size_t i = 0; i < d; ++i)
        e.data[b * d + i] = static_cast<scalar>(double(z.data[b * d + i]) / n);
  }
  return e;
}

// VJP of row normalization: dL/dz = (g - (g . e) e) / ||z||.
Tensor normalize_rows_vjp(const Tensor& e, const std::vector<double>& norms,
                          const Tensor& g) {
  std::size_t B = e.shape[0], d = e.shape[1];
  Tensor gz({B, d});
  for (std::size_t b = 0; b < B; ++b) {
    double n = norms[b];
    if (n <= 0) {
      for (std::size_t i = 0; i < d; ++i) gz.data[b * d + i] = g.data[b * d + i];
      continue;
    }
    double dot = 0;
    for (std::size_t i = 0; i < d; ++i)
      dot += double(g.data[b * d + i]) * double(e.data[b * d + i]);
    for (std::size_t i = 0; i < d; ++i)
      gz.data[b * d + i] = static_cast<scalar>(
          (double(g.data[b * d + i]) - dot * double(e.data[b * d + i])) / n);
  }
  return gz;
}

Tensor flatten_images(const ImageBatch& v) {
  if (v.rank() != 4) throw DimError("expected B x C x H x W image batch");
  Tensor x({v.shape[0], v.shape[1] * v.shape[2] * v.shape[3]});
  x.data = v.data;
  return x;
}

// Mean-pooled token embeddings for a batch of sequences.
Tensor pool_tokens(const TextEncoder& enc, const std::vector<TokenSeq>& batch) {
  std::size_t d = enc.embed.shape[1];
  Tensor x({batch.size(), d});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const TokenSeq& seq = batch[b];
    if (seq.ids.empty()) throw DimError("forward_text: empty token sequence");
    for (int id : seq.ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= enc.embed.shape[0])
        throw DimError("forward_text: token id out of range");
      for (std::size_t i = 0; i < d; ++i)
        x.data[b * d + i] += enc.embed.data[static_cast<std::size_t>(id) * d + i];
    }
    auto inv = static_cast<scalar>(1.0 / double(seq.ids.size()));
    for (std::size_t i = 0; i < d; ++i) x.data[b * d + i] *= inv;
  }
  return x;
}

struct EncoderCache {
  MlpCache mlp;
  Tensor normalized;
  std::vector<double> norms;
};

Tensor encode_rows(const Mlp& mlp, bool normalize, const Tensor& x,
                   EncoderCache* cache) {
  MlpCache local;
  Tensor z = mlp_forward(mlp, x, cache ? &cache->mlp : &local);
  if (!normalize) {
    if (cache) {
      cache->normalized = z;
      cache->norms.assign(z.shape[0], -1.0);
    }
    return z;
  }
  std::vector<double> norms;
  Tensor e = normalize_rows(z, &norms);
  if (cache) {
    cache->normalized = e;
    cache->norms = std::move(norms);
  }
  return e;
}

Tensor encode_rows_vjp(const Mlp& mlp, bool normalize, const EncoderCache& cache,
                       const Tensor& grad_emb, MlpGrads* grads = nullptr) {
  Tensor g = grad_emb;
  if (normalize) g = normalize_rows_vjp(cache.normalized, cache.norms, grad_emb);
  return mlp_backward(mlp, cache.mlp, g, grads);
}

}  // namespace

Mlp make_mlp(std::size_t in_dim, const std::vector<std::size_t>& hidden,
             std::size_t out_dim, RngStream& rng) {
  Mlp mlp;
  std::size_t prev = in_dim;
  for (std::size_t h : hidden) {
    mlp.layers.push_back(make_linear(h, prev, rng));
    prev = h;
  }
  mlp.layers.push_back(make_linear(out_dim, prev, rng));
  return mlp;
}

Tensor mlp_forward(const Mlp& mlp, const Tensor& x, MlpCache* cache) {
  if (x.rank() != 2) throw DimError("mlp_forward: expected B x in");
  Tensor a = x;
  if (cache) {
    cache->acts.clear();
    cache->acts.push_back(a);
  }
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    a = linear_forward(mlp.layers[l], a);
    if (l + 1 < mlp.layers.size()) tanh_inplace(a);
    if (cache) cache->acts.push_back(a);
  }
  return a;
}

Tensor mlp_backward(const Mlp& mlp, const MlpCache& cache, const Tensor& grad_out,
                    MlpGrads* grads) {
  if (grads && grads->g.empty())
    for (const Linear& lin : mlp.layers) grads->g.push_back(zeros_like(lin));
  Tensor g = grad_out;
  for (std::size_t l = mlp.layers.size(); l-- > 0;) {
    if (l + 1 < mlp.layers.size()) {
      // through tanh: dL/dz = dL/dh * (1 - h^2)
      const Tensor& h = cache.acts[l + 1];
      for (std::size_t i = 0; i < g.numel(); ++i) {
        double hv = h.data[i];
        g.data[i] = static_cast<scalar>(double(g.data[i]) * (1.0 - hv * hv));
      }
    }
    g = linear_backward(mlp.layers[l], cache.acts[l], g, grads ? &grads->g[l] : nullptr);
  }
  return g;
}

ImageEncoder make_image_encoder(std::size_t channels, std::size_t height,
                                std::size_t width,
                                const std::vector<std::size_t>& hidden,
                                std::size_t out_dim, bool normalize,
                                std::uint64_t seed) {
  ImageEncoder enc;
  enc.channels = channels;
  enc.height = height;
  enc.width = width;
  enc.out_dim = out_dim;
  enc.normalize_output = normalize;
  RngStream rng(seed, 100);
  enc.mlp = make_mlp(channels * height * width, hidden, out_dim, rng);
  return enc;
}

TextEncoder make_text_encoder(std::size_t vocab_size, std::size_t token_dim,
                              const std::vector<std::size_t>& hidden,
                              std::size_t out_dim, bool normalize,
                              std::uint64_t seed) {
  TextEncoder enc;
  enc.out_dim = out_dim;
  enc.normalize_output = normalize;
  RngStream rng(seed, 200);
  enc.embed = Tensor({vocab_size, token_dim});
  double s = 1.0 / std::sqrt(static_cast<double>(token_dim));
  for (scalar& w : enc.embed.data) w = static_cast<scalar>(rng.uniform(-s, s));
  enc.mlp = make_mlp(token_dim, hidden, out_dim, rng);
  return enc;
}

FusionHead make_fusion_head(std::size_t d_v, std::size_t d_t,
                            const std::vector<std::size_t>& hidden,
                            std::size_t fused_dim, std::size_t classes,
                            std::uint64_t seed) {
  if (classes < 2) throw ConfigError("fusion head needs at least 2 classes");
  FusionHead head;
  RngStream rng(seed, 300);
  head.fuse = make_mlp(d_v + d_t, hidden, fused_dim, rng);
  head.head = make_linear(classes, fused_dim, rng);
  return head;
}

Tensor forward_image(const ImageEncoder& enc, const ImageBatch& v) {
  if (v.rank() != 4 || v.shape[1] != enc.channels || v.shape[2] != enc.height ||
      v.shape[3] != enc.width)
    throw DimError("forward_image: image shape mismatch");
  return encode_rows(enc.mlp, enc.normalize_output, flatten_images(v), nullptr);
}

ImageBatch vjp_image(const ImageEncoder& enc, const ImageBatch& v,
                     const Tensor& grad_emb) {
  if (grad_emb.rank() != 2 || grad_emb.shape[0] != v.shape[0] ||
      grad_emb.shape[1] != enc.out_dim)
    throw DimError("vjp_image: grad shape mismatch");
  EncoderCache cache;
  encode_rows(enc.mlp, enc.normalize_output, flatten_images(v), &cache);
  Tensor gx = encode_rows_vjp(enc.mlp, enc.normalize_output, cache, grad_emb);
  ImageBatch out(v.shape);
  out.data = std::move(gx.data);
  return out;
}

Tensor forward_text(const TextEncoder& enc, const std::vector<TokenSeq>& batch) {
  return encode_rows(enc.mlp, enc.normalize_output, pool_tokens(enc, batch), nullptr);
}

Tensor forward_text_one(const TextEncoder& enc, const TokenSeq& seq) {
  return row(forward_text(enc, {seq}), 0);
}

Tensor forward_fused(const FusionHead& head, const Tensor& e_v, const Tensor& e_t) {
  if (e_v.rank() != 2 || e_t.rank() != 2 || e_v.shape[0] != e_t.shape[0])
    throw DimError("forward_fused: embedding batch mismatch");
  std::size_t B = e_v.shape[0], dv = e_v.shape[1], dt = e_t.shape[1];
  Tensor x({B, dv + dt});
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(e_v.data.begin() + b * dv, dv, x.data.begin() + b * (dv + dt));
    std::copy_n(e_t.data.begin() + b * dt, dt, x.data.begin() + b * (dv + dt) + dv);
  }
  return mlp_forward(head.fuse, x);
}

Tensor fused_logits(const FusionHead& head, const Tensor& fused) {
  if (fused.rank() != 2 || fused.shape[1] != head.head.W.shape[1])
    throw DimError("fused_logits: fused dim mismatch");
  return linear_forward(head.head, fused);
}

Tensor forward_fused_from_image(const ImageEncoder& enc, const FusionHead& head,
                                const ImageBatch& v, const Tensor& e_t) {
  return forward_fused(head, forward_image(enc, v), e_t);
}

ImageBatch vjp_fused_image(const ImageEncoder& enc, const FusionHead& head,
                           const ImageBatch& v, const Tensor& e_t,
                           const Tensor& grad_fused) {
  std::size_t B = v.shape[0];
  std::size_t dv = enc.out_dim, dt = e_t.shape[1];

  EncoderCache img_cache;
  Tensor e_v = encode_rows(enc.mlp, enc.normalize_output, flatten_images(v), &img_cache);

  Tensor x({B, dv + dt});
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(e_v.data.begin() + b * dv, dv, x.data.begin() + b * (dv + dt));
    std::copy_n(e_t.data.begin() + b * dt, dt, x.data.begin() + b * (dv + dt) + dv);
  }
  MlpCache fuse_cache;
  mlp_forward(head.fuse, x, &fuse_cache);
  Tensor gx = mlp_backward(head.fuse, fuse_cache, grad_fused);

  Tensor g_ev({B, dv});
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(gx.data.begin() + b * (dv + dt), dv, g_ev.data.begin() + b * dv);

  Tensor g_img = encode_rows_vjp(enc.mlp, enc.normalize_output, img_cache, g_ev);
  ImageBatch out(v.shape);
  out.data = std::move(g_img.data);
  return out;
}

namespace {

void sgd_step(Mlp& mlp, const MlpGrads& grads, double lr) {
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    Linear& lin = mlp.layers[l];
    const Linear& g = grads.g[l];
    for (std::size_t i = 0; i < lin.W.numel(); ++i)
      lin.W.data[i] -= static_cast<scalar>(lr * double(g.W.data[i]));
    for (std::size_t i = 0; i < lin.b.numel(); ++i)
      lin.b.data[i] -= static_cast<scalar>(lr * double(g.b.data[i]));
  }
}

std::vector<TokenSeq> pick_captions(const PairedDataset& data, RngStream& rng) {
  std::vector<TokenSeq> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& caps = data.captions[i];
    out.push_back(caps[rng.index(caps.size())]);
  }
  return out;
}

}  // namespace

void train_itc(ImageEncoder& img_enc, TextEncoder& txt_enc,
               const PairedDataset& data, const ItcConfig& cfg,
               std::uint64_t seed, std::vector<double>* epoch_losses) {
  if (data.size() == 0) throw TrainError("train_itc: empty dataset");
  if (cfg.temperature <= 0) throw ConfigError("train_itc: temperature must be > 0");
  std::size_t B = data.size();
  double tau = cfg.temperature;

  Tensor x_img = flatten_images(data.images);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    RngStream rng(seed, 400 + static_cast<std::uint64_t>(epoch));
    std::vector<TokenSeq> caps = pick_captions(data, rng);

    EncoderCache img_cache, txt_cache;
    Tensor pooled = pool_tokens(txt_enc, caps);
    Tensor I = encode_rows(img_enc.mlp, img_enc.normalize_output, x_img, &img_cache);
    Tensor T = encode_rows(txt_enc.mlp, txt_enc.normalize_output, pooled, &txt_cache);
    std::size_t d = I.shape[1];

    // S_ij = I_i . T_j / tau
    std::vector<double> S(B * B);
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < B; ++j) {
        double acc = 0;
        for (std::size_t k = 0; k < d; ++k)
          acc += double(I.data[i * d + k]) * double(T.data[j * d + k]);
        S[i * B + j] = acc / tau;
      }

    // Row and column softmax for the symmetric InfoNCE.
    std::vector<double> Prow(B * B), Pcol(B * B);
    double loss = 0;
    for (std::size_t i = 0; i < B; ++i) {
      double mx = -HUGE_VAL;
      for (std::size_t j = 0; j < B; ++j) mx = std::max(mx, S[i * B + j]);
      double sum = 0;
      for (std::size_t j = 0; j < B; ++j) sum += std::exp(S[i * B + j] - mx);
      for (std::size_t j = 0; j < B; ++j)
        Prow[i * B + j] = std::exp(S[i * B + j] - mx) / sum;
      loss -= std::log(std::max(Prow[i * B + i], 1e-300));
    }
    for (std::size_t j = 0; j < B; ++j) {
      double mx = -HUGE_VAL;
      for (std::size_t i = 0; i < B; ++i) mx = std::max(mx, S[i * B + j]);
      double sum = 0;
      for (std::size_t i = 0; i < B; ++i) sum += std::exp(S[i * B + j] - mx);
      for (std::size_t i = 0; i < B; ++i)
        Pcol[i * B + j] = std::exp(S[i * B + j] - mx) / sum;
      loss -= std::log(std::max(Pcol[j * B + j], 1e-300));
    }
    loss /= 2.0 * double(B);
    if (!std::isfinite(loss))
      throw TrainError("train_itc: non-finite loss at epoch " + std::to_string(epoch));
    if (epoch_losses) epoch_losses->push_back(loss);

    // dL/dS
    std::vector<double> G(B * B);
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < B; ++j) {
        double diag = i == j ? 1.0 : 0.0;
        G[i * B + j] =
            0.5 / double(B) * (Prow[i * B + j] - diag + Pcol[i * B + j] - diag);
      }

    Tensor gI({B, d}), gT({B, d});
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t k = 0; k < d; ++k) {
        double accI = 0, accT = 0;
        for (std::size_t j = 0; j < B; ++j) {
          accI += G[i * B + j] * double(T.data[j * d + k]);
          accT += G[j * B + i] * double(I.data[j * d + k]);
        }
        gI.data[i * d + k] = static_cast<scalar>(accI / tau);
        gT.data[i * d + k] = static_cast<scalar>(accT / tau);
      }

    MlpGrads img_grads, txt_grads;
    encode_rows_vjp(img_enc.mlp, img_enc.normalize_output, img_cache, gI, &img_grads);
    Tensor g_pool =
        encode_rows_vjp(txt_enc.mlp, txt_enc.normalize_output, txt_cache, gT, &txt_grads);

    // Embedding-table gradient through the mean pool.
    Tensor g_embed(txt_enc.embed.shape);
    std::size_t dt = txt_enc.embed.shape[1];
    for (std::size_t b = 0; b < B; ++b) {
      const TokenSeq& seq = caps[b];
      double inv = 1.0 / double(seq.ids.size());
      for (int id : seq.ids)
        for (std::size_t k = 0; k < dt; ++k)
          g_embed.data[static_cast<std::size_t>(id) * dt + k] +=
              static_cast<scalar>(inv * double(g_pool.data[b * dt + k]));
    }

    sgd_step(img_enc.mlp, img_grads, cfg.lr);
    sgd_step(txt_enc.mlp, txt_grads, cfg.lr);
    for (std::size_t i = 0; i < txt_enc.embed.numel(); ++i)
      txt_enc.embed.data[i] -= static_cast<scalar>(cfg.lr * double(g_embed.data[i]));
  }
}

void train_fusion(FusionHead& head, const ImageEncoder& img_enc,
                  const TextEncoder& txt_enc, const PairedDataset& data,
                  const FusionTrainConfig& cfg, std::uint64_t seed,
                  std::vector<double>* epoch_losses) {
  if (data.size() == 0) throw TrainError("train_fusion: empty dataset");
  std::size_t B = data.size();
  std::size_t c = head.head.W.shape[0];

  Tensor e_v = forward_image(img_enc, data.images);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    RngStream rng(seed, 500 + static_cast<std::uint64_t>(epoch));
    std::vector<TokenSeq> caps = pick_captions(data, rng);
    Tensor e_t = forward_text(txt_enc, caps);

    std::size_t dv = e_v.shape[1], dt = e_t.shape[1];
    Tensor x({B, dv + dt});
    for (std::size_t b = 0; b < B; ++b) {
      std::copy_n(e_v.data.begin() + b * dv, dv, x.data.begin() + b * (dv + dt));
      std::copy_n(e_t.data.begin() + b * dt, dt, x.data.begin() + b * (dv + dt) + dv);
    }

    MlpCache fuse_cache;
    Tensor fused = mlp_forward(head.fuse, x, &fuse_cache);
    Tensor logits = linear_forward(head.head, fused);

    double loss = 0;
    Tensor g_logits({B, c});
    for (std::size_t b = 0; b < B; ++b) {
      double mx = -HUGE_VAL;
      for (std::size_t j = 0; j < c; ++j)
        mx = std::max(mx, double(logits.data[b * c + j]));
      double sum = 0;
      for (std::size_t j = 0; j < c; ++j)
        sum += std::exp(double(logits.data[b * c + j]) - mx);
      auto y = static_cast<std::size_t>(data.labels[b]);
      loss -= double(logits.data[b * c + y]) - mx - std::log(sum);
      for (std::size_t j = 0; j < c; ++j) {
        double p = std::exp(double(logits.data[b * c + j]) - mx) / sum;
        g_logits.data[b * c + j] =
            static_cast<scalar>((p - (j == y ? 1.0 : 0.0)) / double(B));
      }
    }
    loss /= double(B);
    if (!std::isfinite(loss))
      throw TrainError("train_fusion: non-finite loss at epoch " +
                       std::to_string(epoch));
    if (epoch_losses) epoch_losses->push_back(loss);

    Linear head_grads = zeros_like(head.head);
    Tensor g_fused = linear_backward(head.head, fused, g_logits, &head_grads);
    MlpGrads fuse_grads;
    mlp_backward(head.fuse, fuse_cache, g_fused, &fuse_grads);

    sgd_step(head.fuse, fuse_grads, cfg.lr);
    for (std::size_t i = 0; i < head.head.W.numel(); ++i)
      head.head.W.data[i] -= static_cast<scalar>(cfg.lr * double(head_grads.W.data[i]));
    for (std::size_t i = 0; i < head.head.b.numel(); ++i)
      head.head.b.data[i] -= static_cast<scalar>(cfg.lr * double(head_grads.b.data[i]));
  }
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  write_tensor_file(path, ckpt.tensors);
  nlohmann::json meta(ckpt.metadata);
  std::ofstream out(path + ".json", std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + ".json' for writing");
  out << meta.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  Checkpoint ckpt;
  ckpt.tensors = read_tensor_file(path);
  std::ifstream in(path + ".json");
  if (in) {
    nlohmann::json meta = nlohmann::json::parse(in, nullptr, true);
    for (const auto& [k, v] : meta.items())
      ckpt.metadata[k] = v.get<std::string>();
  }
  return ckpt;
}

namespace {

void pack_mlp(NamedTensors& out, const std::string& prefix, const Mlp& mlp) {
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    out.emplace_back(prefix + ".layer" + std::to_string(l) + ".W", mlp.layers[l].W);
    out.emplace_back(prefix + ".layer" + std::to_string(l) + ".b", mlp.layers[l].b);
  }
}

Mlp unpack_mlp(const NamedTensors& tensors, const std::string& prefix) {
  Mlp mlp;
  for (std::size_t l = 0;; ++l) {
    std::string wname = prefix + ".layer" + std::to_string(l) + ".W";
    bool found = false;
    for (const auto& [n, t] : tensors)
      if (n == wname) {
        found = true;
        break;
      }
    if (!found) break;
    Linear lin;
    lin.W = find_tensor(tensors, wname);
    lin.b = find_tensor(tensors, prefix + ".layer" + std::to_string(l) + ".b");
    mlp.layers.push_back(std::move(lin));
  }
  if (mlp.layers.empty())
    throw FormatError("checkpoint: no layers under '" + prefix + "'");
  return mlp;
}

}  // namespace

void save_models(const std::string& path, const ModelBundle& bundle) {
  Checkpoint ckpt;
  pack_mlp(ckpt.tensors, "image", bundle.image.mlp);
  ckpt.tensors.emplace_back("text.embed", bundle.text.embed);
  pack_mlp(ckpt.tensors, "text", bundle.text.mlp);
  if (bundle.has_fusion) {
    pack_mlp(ckpt.tensors, "fusion", bundle.fusion.fuse);
    ckpt.tensors.emplace_back("fusion.head.W", bundle.fusion.head.W);
    ckpt.tensors.emplace_back("fusion.head.b", bundle.fusion.head.b);
  }
  ckpt.metadata = bundle.metadata;
  ckpt.metadata["image.channels"] = std::to_string(bundle.image.channels);
  ckpt.metadata["image.height"] = std::to_string(bundle.image.height);
  ckpt.metadata["image.width"] = std::to_string(bundle.image.width);
  ckpt.metadata["image.normalize"] = bundle.image.normalize_output ? "1" : "0";
  ckpt.metadata["text.normalize"] = bundle.text.normalize_output ? "1" : "0";
  ckpt.metadata["has_fusion"] = bundle.has_fusion ? "1" : "0";
  save_checkpoint(path, ckpt);
}

ModelBundle load_models(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  ModelBundle bundle;
  bundle.metadata = ckpt.metadata;

  auto meta_or = [&](const std::string& key, const std::string& dflt) {
    auto it = ckpt.metadata.find(key);
    return it == ckpt.metadata.end() ? dflt : it->second;
  };

  bundle.image.mlp = unpack_mlp(ckpt.tensors, "image");
  bundle.image.channels = std::stoul(meta_or("image.channels", "3"));
  bundle.image.height = std::stoul(meta_or("image.height", "16"));
  bundle.image.width = std::stoul(meta_or("image.width", "16"));
  bundle.image.normalize_output = meta_or("image.normalize", "1") == "1";
  bundle.image.out_dim = bundle.image.mlp.out_dim();
  if (bundle.image.mlp.in_dim() !=
      bundle.image.channels * bundle.image.height * bundle.image.width)
    throw FormatError("checkpoint '" + path + "': image dims inconsistent");

  bundle.text.embed = find_tensor(ckpt.tensors, "text.embed");
  bundle.text.mlp = unpack_mlp(ckpt.tensors, "text");
  bundle.text.normalize_output = meta_or("text.normalize", "1") == "1";
  bundle.text.out_dim = bundle.text.mlp.out_dim();

  bundle.has_fusion = meta_or("has_fusion", "0") == "1";
  if (bundle.has_fusion) {
    bundle.fusion.fuse = unpack_mlp(ckpt.tensors, "fusion");
    bundle.fusion.head.W = find_tensor(ckpt.tensors, "fusion.head.W");
    bundle.fusion.head.b = find_tensor(ckpt.tensors, "fusion.head.b");
  }
  return bundle;
}

EmbeddingModel image_embedding_model(const ImageEncoder& enc) {
  EmbeddingModel model;
  model.forward = [&enc](std::size_t, const Tensor& img) {
    ImageBatch batch({1, img.shape[0], img.shape[1], img.shape[2]});
    batch.data = img.data;
    return row(forward_image(enc, batch), 0);
  };
  model.vjp = [&enc](std::size_t, const Tensor& img, const Tensor& grad_emb) {
    ImageBatch batch({1, img.shape[0], img.shape[1], img.shape[2]});
    batch.data = img.data;
    Tensor g({1, grad_emb.numel()});
    g.data = grad_emb.data;
    ImageBatch gb = vjp_image(enc, batch, g);
    Tensor out({img.shape[0], img.shape[1], img.shape[2]});
    out.data = std::move(gb.data);
    return out;
  };
  return model;
}

EmbeddingModel fused_embedding_model(const ImageEncoder& enc, const FusionHead& head,
                                     const Tensor& text_embeddings) {
  EmbeddingModel model;
  const Tensor& e_t_all = text_embeddings;
  model.forward = [&enc, &head, &e_t_all](std::size_t ex, const Tensor& img) {
    ImageBatch batch({1, img.shape[0], img.shape[1], img.shape[2]});
    batch.data = img.data;
    Tensor e_t({1, e_t_all.shape[1]});
    e_t.data = row(e_t_all, ex).data;
    return row(forward_fused_from_image(enc, head, batch, e_t), 0);
  };
  model.vjp = [&enc, &head, &e_t_all](std::size_t ex, const Tensor& img,
                                      const Tensor& grad_emb) {
    ImageBatch batch({1, img.shape[0], img.shape[1], img.shape[2]});
    batch.data = img.data;
    Tensor e_t({1, e_t_all.shape[1]});
    e_t.data = row(e_t_all, ex).data;
    Tensor g({1, grad_emb.numel()});
    g.data = grad_emb.data;
    ImageBatch gb = vjp_fused_image(enc, head, batch, e_t, g);
    Tensor out({img.shape[0], img.shape[1], img.shape[2]});
    out.data = std::move(gb.data);
    return out;
  };
  return model;
}

}  // namespace fga
