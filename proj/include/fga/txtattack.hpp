#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fga/dataset.hpp"
#include "fga/imgattack.hpp"
#include "fga/models.hpp"

namespace fga {

enum class CandidateSource { SynonymTable, EmbeddingKnn };

struct TextAttackConfig {
  int budget = 1;  // max substituted tokens
  CandidateSource source = CandidateSource::SynonymTable;
  int knn_k = 5;
  std::uint64_t seed = 0;
};

// Scalar objective over a token sequence, maximized by the search.
using TextObjective = std::function<double(const TokenSeq&)>;

// Positions ranked by how much replacing the token with <unk> increases the
// objective; ties broken by position.
std::vector<std::size_t> token_importance(const TokenSeq& t, const Vocab& vocab,
                                          const TextObjective& objective);

// Substitution candidates for one token: the synonym table or the k nearest
// vocabulary tokens in embedding space (self and <unk> excluded).
std::vector<int> substitution_candidates(int token_id, const Vocab& vocab,
                                         const TextEncoder* enc,
                                         const TextAttackConfig& cfg);

struct SubstituteResult {
  TokenSeq text;
  int substitutions = 0;
  bool no_candidates = false;  // no position had any candidate
  double objective = 0;        // objective of the returned text
};

// Greedy search: walk positions in importance order, keep the best strict
// improvement at each, stop after `budget` substitutions.
SubstituteResult greedy_substitute(const TokenSeq& t, const Vocab& vocab,
                                   const TextEncoder* enc,
                                   const TextObjective& objective,
                                   const TextAttackConfig& cfg);

struct FgaTResult {
  ImageBatch adv_images;
  std::vector<std::vector<TokenSeq>> adv_texts;  // parallel to the input sets
  AttackTrace trace;
  GuidanceSet union_guidance;  // batch-union text set with own-label sets
};

// Full text-then-image pipeline: adversarial texts via cosine deviation,
// then pgd over the set-level guidance loss whose denominator spans the
// batch union of matched and adversarial texts. Scale augmentation and
// momentum come from img_cfg.
FgaTResult fga_t(const ImageEncoder& img_enc, const TextEncoder& txt_enc,
                 const ImageBatch& v,
                 const std::vector<std::vector<TokenSeq>>& texts,
                 const Vocab& vocab, const AttackConfig& img_cfg,
                 const TextAttackConfig& txt_cfg, int threads = 1);

}  // namespace fga
