#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fga/dataset.hpp"
#include "fga/guidance.hpp"
#include "fga/imgattack.hpp"
#include "fga/models.hpp"

namespace fga {

struct ZeroShotResult {
  double top1 = 0, top5 = 0;
  std::vector<int> pred;       // argmax class per example
  std::vector<int> runner_up;  // argmax excluding the true label
  std::vector<bool> correct1;
};

// Cosine classification of image embeddings against the rows of G;
// ties broken by lower index.
ZeroShotResult zeroshot_eval(const ImageEncoder& enc, const ImageBatch& images,
                             const std::vector<int>& labels, const GuidanceSet& G);
ZeroShotResult zeroshot_eval(const ImageEncoder& enc, const PairedDataset& data,
                             const GuidanceSet& G);

struct RetrievalResult {
  std::map<int, double> tr;  // text retrieval: k -> recall
  std::map<int, double> ir;  // image retrieval: k -> recall
  std::vector<bool> tr_hit1;  // per image
  std::vector<bool> ir_hit1;  // per text
};

// Cosine ranking over the full caption corpus; override arguments swap in
// adversarial images/texts while keeping the match structure.
RetrievalResult retrieval_eval(
    const ImageEncoder& img_enc, const TextEncoder& txt_enc,
    const PairedDataset& data, const std::vector<int>& ks = {1, 5, 10},
    const ImageBatch* images_override = nullptr,
    const std::vector<std::vector<TokenSeq>>* texts_override = nullptr);

// Success-conditional flip rate; empty when nothing was cleanly correct.
std::optional<double> attack_success_rate(const std::vector<bool>& clean_success,
                                          const std::vector<bool>& adv_success);

struct ProximityResult {
  Tensor matrix;  // m x m counts: row clean runner-up, col adversarial pred
  double diagonal_mass = 0;
  std::size_t total = 0;
};

ProximityResult proximity_confusion(const ImageEncoder& enc,
                                    const PairedDataset& data,
                                    const GuidanceSet& G,
                                    const std::vector<int>& adv_pred);

struct ModelPair {
  ImageEncoder image;
  TextEncoder text;
};

struct AdvPair {
  ImageBatch images;
  std::vector<std::vector<TokenSeq>> texts;  // empty -> originals
};

using CraftFn = std::function<AdvPair(const ModelPair& source, const PairedDataset&)>;

struct TransferMatrix {
  std::size_t n = 0;
  std::vector<double> tr_asr, ir_asr;  // row-major source x target
  double cell(std::size_t s, std::size_t t) const {
    return 0.5 * (tr_asr[s * n + t] + ir_asr[s * n + t]);
  }
  double mean_off_diagonal() const;
};

// Crafts on each source and scores retrieval ASR on every target; the
// diagonal is the white-box result.
TransferMatrix transfer_eval(const std::vector<ModelPair>& models,
                             const CraftFn& craft, const PairedDataset& data);

struct AblationCell {
  double epsilon = 0;
  int steps = 0;
  double tr_r1 = 0, ir_r1 = 0;
  double mean_r1() const { return 0.5 * (tr_r1 + ir_r1); }
};

// Cross product of budgets and iteration counts, each cell attacked with
// feature guidance and scored on retrieval.
std::vector<AblationCell> ablation_sweep(const ImageEncoder& img_enc,
                                         const TextEncoder& txt_enc,
                                         const PairedDataset& data,
                                         const GuidanceSet& G,
                                         const std::vector<double>& eps_list,
                                         const std::vector<int>& step_list,
                                         const AttackConfig& base, int threads = 1);

// Paper grids on the 0-255 scale, normalized.
std::vector<double> default_ablation_eps();       // {0.5,1,2,4,8,16}/255
std::vector<int> default_ablation_steps();        // {1,3,7,10}

std::string matrix_csv(const Tensor& m);
std::string transfer_csv(const TransferMatrix& m);

}  // namespace fga
