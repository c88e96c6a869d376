#pragma once

#include <string>
#include <vector>

#include "fga/dataset.hpp"
#include "fga/models.hpp"
#include "fga/tensor.hpp"

namespace fga {

enum class GuidanceSource { ClassMean, Prompt, DatasetTexts, TopK };

const char* guidance_source_name(GuidanceSource s);

// Guiding-vector matrix W plus per-example guiding-label sets. For
// untargeted use every bound label set must leave at least one row of W
// unguided, otherwise there is no nearby vector left to move toward.
struct GuidanceSet {
  Tensor W;  // m x d
  std::vector<std::vector<int>> labels;  // may be empty when not yet bound
  GuidanceSource source = GuidanceSource::Prompt;
  bool duplicate_rows = false;  // surfaced in reports

  std::size_t m() const { return W.shape.empty() ? 0 : W.shape[0]; }
  std::size_t dim() const { return W.shape.size() < 2 ? 0 : W.shape[1]; }
};

// Throws ConfigError if any bound label set is empty, out of range, or
// covers all m rows.
void validate_untargeted(const GuidanceSet& g);

// W row c = mean embedding of class-c images; labels = own class.
GuidanceSet class_mean_guidance(const ImageEncoder& enc, const PairedDataset& data);

// W row c = text embedding of the template instantiated with class c.
// When example_labels is non-empty, labels[i] = {example_labels[i]}.
GuidanceSet prompt_guidance(const TextEncoder& enc, const Vocab& vocab,
                            const std::vector<std::string>& class_names,
                            const std::string& tmpl,
                            const std::vector<int>& example_labels = {});

// W = embeddings of all deduplicated captions; labels = own caption indices.
GuidanceSet dataset_text_guidance(const TextEncoder& enc, const PairedDataset& data);

// Indices of the k rows of W most cosine-similar to emb; ties to lower index.
std::vector<int> topk_match_labels(const Tensor& emb, const GuidanceSet& g,
                                   std::size_t k);

// Binds labels[i] = top-k matches of example i's embedding; the annotation-free
// label construction.
GuidanceSet with_topk_labels(const ImageEncoder& enc, const PairedDataset& data,
                             GuidanceSet g, std::size_t k);

void save_guidance(const std::string& path_prefix, const GuidanceSet& g);
GuidanceSet load_guidance(const std::string& path_prefix);

}  // namespace fga
