#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "fga/tensor.hpp"

namespace fga {

inline constexpr std::size_t kMaxCaptionLen = 16;

struct Vocab {
  std::vector<std::string> tokens;
  int unk_id = 0;
  // token id -> substitution candidates (never containing the key itself)
  std::map<int, std::vector<int>> synonyms;

  int id_of(const std::string& word) const;
  bool knows(const std::string& word) const;
  int size() const { return static_cast<int>(tokens.size()); }
  void rebuild_index();

 private:
  std::unordered_map<std::string, int> index_;
};

struct TokenSeq {
  std::vector<int> ids;

  bool operator==(const TokenSeq& o) const { return ids == o.ids; }
  std::size_t size() const { return ids.size(); }
};

struct PairedDataset {
  ImageBatch images;  // B x C x H x W in [0,1]
  std::vector<std::vector<TokenSeq>> captions;  // >= 1 per image
  std::vector<int> labels;                      // class index in [0,K)
  std::vector<std::string> class_names;
  Vocab vocab;

  std::size_t size() const { return labels.size(); }
  int num_classes() const { return static_cast<int>(class_names.size()); }
};

// Class names for a desk-scale dataset; the first ten follow the usual
// small-image benchmark naming, further classes are generated.
std::vector<std::string> default_class_names(int k);

// Template words + class names + neutral adjectives, with a synonym table
// mapping adjectives to adjectives and class names to other class names.
Vocab make_default_vocab(const std::vector<std::string>& class_names);

TokenSeq tokenize(const std::string& text, const Vocab& vocab);
std::string detokenize(const TokenSeq& seq, const Vocab& vocab);

struct SynthConfig {
  int classes = 10;
  int per_class = 20;
  int channels = 3;
  int height = 16;
  int width = 16;
  double noise_sigma = 0.05;
  int captions_per_image = 2;
  int max_distractors = 3;
};

// Class prototypes drawn uniformly in [0,1]; each sample is the prototype
// plus clamped gaussian noise. Captions follow "a photo of a {class_name}"
// with 0..max_distractors neutral words appended.
PairedDataset gen_dataset(const SynthConfig& cfg, const Vocab& vocab,
                          std::uint64_t seed);
PairedDataset gen_dataset(const SynthConfig& cfg, std::uint64_t seed);

// CIFAR-10 binary batches: 3073-byte records, 1 label byte then the 32x32
// R, G, B planes. max_records == 0 loads everything.
PairedDataset load_cifar10(const std::string& path, std::size_t max_records = 0);

void save_dataset(const std::string& path_prefix, const PairedDataset& ds);
PairedDataset load_dataset(const std::string& path_prefix);

}  // namespace fga
