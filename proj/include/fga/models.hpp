#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fga/dataset.hpp"
#include "fga/tensor.hpp"
#include "fga/tensor_io.hpp"

namespace fga {

struct Linear {
  Tensor W;  // out x in
  Tensor b;  // out
};

// Plain MLP: tanh after every layer except the last.
struct Mlp {
  std::vector<Linear> layers;

  std::size_t in_dim() const { return layers.front().W.shape[1]; }
  std::size_t out_dim() const { return layers.back().W.shape[0]; }
};

struct MlpCache {
  std::vector<Tensor> acts;  // acts[0] = input, acts[i] = output of layer i-1
};

struct MlpGrads {
  std::vector<Linear> g;
};

Mlp make_mlp(std::size_t in_dim, const std::vector<std::size_t>& hidden,
             std::size_t out_dim, RngStream& rng);
Tensor mlp_forward(const Mlp& mlp, const Tensor& x, MlpCache* cache = nullptr);
// Returns grad w.r.t. input; accumulates parameter grads when grads != nullptr.
Tensor mlp_backward(const Mlp& mlp, const MlpCache& cache, const Tensor& grad_out,
                    MlpGrads* grads = nullptr);

// MLP over flattened pixels; the stand-in visual encoder.
struct ImageEncoder {
  std::size_t channels = 3, height = 16, width = 16;
  std::size_t out_dim = 16;
  bool normalize_output = true;
  Mlp mlp;
};

// Token embedding table, mean pool, MLP head.
struct TextEncoder {
  Tensor embed;  // V x token_dim
  std::size_t out_dim = 16;
  bool normalize_output = true;
  Mlp mlp;
};

// Fusion MLP over concatenated unimodal embeddings plus a linear
// classification head over the fused embedding.
struct FusionHead {
  Mlp fuse;     // (d_v + d_t) -> d_f, linear output
  Linear head;  // c x d_f
};

ImageEncoder make_image_encoder(std::size_t channels, std::size_t height,
                                std::size_t width,
                                const std::vector<std::size_t>& hidden,
                                std::size_t out_dim, bool normalize,
                                std::uint64_t seed);
TextEncoder make_text_encoder(std::size_t vocab_size, std::size_t token_dim,
                              const std::vector<std::size_t>& hidden,
                              std::size_t out_dim, bool normalize,
                              std::uint64_t seed);
FusionHead make_fusion_head(std::size_t d_v, std::size_t d_t,
                            const std::vector<std::size_t>& hidden,
                            std::size_t fused_dim, std::size_t classes,
                            std::uint64_t seed);

Tensor forward_image(const ImageEncoder& enc, const ImageBatch& v);  // B x d
ImageBatch vjp_image(const ImageEncoder& enc, const ImageBatch& v,
                     const Tensor& grad_emb);

Tensor forward_text(const TextEncoder& enc, const std::vector<TokenSeq>& batch);
Tensor forward_text_one(const TextEncoder& enc, const TokenSeq& seq);

Tensor forward_fused(const FusionHead& head, const Tensor& e_v, const Tensor& e_t);
Tensor fused_logits(const FusionHead& head, const Tensor& fused);  // B x c

// Fused embedding as a function of the image with the text side frozen.
Tensor forward_fused_from_image(const ImageEncoder& enc, const FusionHead& head,
                                const ImageBatch& v, const Tensor& e_t);
ImageBatch vjp_fused_image(const ImageEncoder& enc, const FusionHead& head,
                           const ImageBatch& v, const Tensor& e_t,
                           const Tensor& grad_fused);

struct ItcConfig {
  int epochs = 300;
  double lr = 0.5;
  double temperature = 0.1;
};

// Symmetric in-batch InfoNCE over image-caption pairs, full-batch gradient
// descent. Deterministic given seed (drives per-epoch caption choice).
void train_itc(ImageEncoder& img_enc, TextEncoder& txt_enc,
               const PairedDataset& data, const ItcConfig& cfg,
               std::uint64_t seed, std::vector<double>* epoch_losses = nullptr);

struct FusionTrainConfig {
  int epochs = 200;
  double lr = 0.3;
};

// Supervised cross-entropy on (image, caption) -> class with frozen encoders.
void train_fusion(FusionHead& head, const ImageEncoder& img_enc,
                  const TextEncoder& txt_enc, const PairedDataset& data,
                  const FusionTrainConfig& cfg, std::uint64_t seed,
                  std::vector<double>* epoch_losses = nullptr);

struct Checkpoint {
  NamedTensors tensors;
  std::map<std::string, std::string> metadata;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Whole model trio as one checkpoint.
struct ModelBundle {
  ImageEncoder image;
  TextEncoder text;
  FusionHead fusion;
  bool has_fusion = false;
  std::map<std::string, std::string> metadata;
};

void save_models(const std::string& path, const ModelBundle& bundle);
ModelBundle load_models(const std::string& path);

// Per-example image-to-embedding closure with its VJP; what the attack
// engine consumes. The example index selects per-example frozen context
// (e.g. the text embedding of the fused path).
struct EmbeddingModel {
  std::function<Tensor(std::size_t ex, const Tensor& img_chw)> forward;
  std::function<Tensor(std::size_t ex, const Tensor& img_chw, const Tensor& grad_emb)>
      vjp;
};

EmbeddingModel image_embedding_model(const ImageEncoder& enc);
EmbeddingModel fused_embedding_model(const ImageEncoder& enc, const FusionHead& head,
                                     const Tensor& text_embeddings);

}  // namespace fga
