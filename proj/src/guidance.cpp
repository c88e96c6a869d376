#include "fga/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "fga/tensor_io.hpp"

namespace fga {

const char* guidance_source_name(GuidanceSource s) {
  switch (s) {
    case GuidanceSource::ClassMean: return "class-mean";
    case GuidanceSource::Prompt: return "prompt";
    case GuidanceSource::DatasetTexts: return "dataset-texts";
    case GuidanceSource::TopK: return "topk";
  }
  return "?";
}

void validate_untargeted(const GuidanceSet& g) {
  std::size_t m = g.m();
  for (std::size_t i = 0; i < g.labels.size(); ++i) {
    const auto& set = g.labels[i];
    if (set.empty())
      throw ConfigError("guidance: example " + std::to_string(i) +
                        " has no guiding labels");
    if (set.size() > m - 1)
      throw ConfigError("guidance: example " + std::to_string(i) +
                        " guides all " + std::to_string(m) +
                        " vectors; at least one must remain unguided");
    for (int y : set)
      if (y < 0 || static_cast<std::size_t>(y) >= m)
        throw ConfigError("guidance: label " + std::to_string(y) + " out of range");
  }
}

GuidanceSet class_mean_guidance(const ImageEncoder& enc, const PairedDataset& data) {
  int K = data.num_classes();
  if (K < 2) throw ConfigError("class_mean_guidance: need at least 2 classes");
  Tensor emb = forward_image(enc, data.images);
  std::size_t d = emb.shape[1];

  GuidanceSet g;
  g.source = GuidanceSource::ClassMean;
  g.W = Tensor({static_cast<std::size_t>(K), d});
  std::vector<std::size_t> counts(static_cast<std::size_t>(K), 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto k = static_cast<std::size_t>(data.labels[i]);
    counts[k]++;
    for (std::size_t j = 0; j < d; ++j) g.W.data[k * d + j] += emb.data[i * d + j];
  }
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] == 0)
      throw ConfigError("class_mean_guidance: class '" + data.class_names[k] +
                        "' has no images");
    auto inv = static_cast<scalar>(1.0 / double(counts[k]));
    for (std::size_t j = 0; j < d; ++j) g.W.data[k * d + j] *= inv;
  }
  for (int label : data.labels) g.labels.push_back({label});
  validate_untargeted(g);
  return g;
}

GuidanceSet prompt_guidance(const TextEncoder& enc, const Vocab& vocab,
                            const std::vector<std::string>& class_names,
                            const std::string& tmpl,
                            const std::vector<int>& example_labels) {
  auto pos = tmpl.find("{}");
  if (pos == std::string::npos)
    throw ConfigError("prompt_guidance: template lacks '{}' placeholder");

  GuidanceSet g;
  g.source = GuidanceSource::Prompt;
  std::vector<TokenSeq> prompts;
  for (const auto& name : class_names) {
    std::string text = tmpl;
    text.replace(pos, 2, name);
    prompts.push_back(tokenize(text, vocab));
  }
  g.W = forward_text(enc, prompts);

  std::vector<std::string> sorted = class_names;
  std::sort(sorted.begin(), sorted.end());
  g.duplicate_rows =
      std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();

  for (int y : example_labels) g.labels.push_back({y});
  if (!g.labels.empty()) validate_untargeted(g);
  return g;
}

GuidanceSet dataset_text_guidance(const TextEncoder& enc, const PairedDataset& data) {
  GuidanceSet g;
  g.source = GuidanceSource::DatasetTexts;

  // Deduplicate captions by token sequence, first occurrence wins.
  std::map<std::vector<int>, int> seen;
  std::vector<TokenSeq> unique;
  g.labels.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.captions[i].empty())
      throw ConfigError("dataset_text_guidance: example " + std::to_string(i) +
                        " has no captions");
    for (const TokenSeq& cap : data.captions[i]) {
      auto it = seen.find(cap.ids);
      int idx;
      if (it == seen.end()) {
        idx = static_cast<int>(unique.size());
        seen.emplace(cap.ids, idx);
        unique.push_back(cap);
      } else {
        idx = it->second;
      }
      if (std::find(g.labels[i].begin(), g.labels[i].end(), idx) == g.labels[i].end())
        g.labels[i].push_back(idx);
    }
  }
  g.W = forward_text(enc, unique);
  validate_untargeted(g);
  return g;
}

std::vector<int> topk_match_labels(const Tensor& emb, const GuidanceSet& g,
                                   std::size_t k) {
  std::size_t m = g.m();
  if (k < 1 || k > m - 1)
    throw ConfigError("topk_match_labels: k must lie in [1, m-1]");
  std::size_t d = g.dim();
  if (emb.numel() != d) throw DimError("topk_match_labels: embedding dim mismatch");

  double en = 0;
  for (scalar v : emb.data) en += double(v) * double(v);
  en = std::sqrt(en);

  std::vector<double> sims(m);
  for (std::size_t r = 0; r < m; ++r) {
    double dot = 0, wn = 0;
    for (std::size_t j = 0; j < d; ++j) {
      double w = g.W.data[r * d + j];
      dot += w * double(emb.data[j]);
      wn += w * w;
    }
    double denom = en * std::sqrt(wn);
    sims[r] = denom > 0 ? dot / denom : 0.0;
  }

  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&sims](int a, int b) {
    if (sims[static_cast<std::size_t>(a)] != sims[static_cast<std::size_t>(b)])
      return sims[static_cast<std::size_t>(a)] > sims[static_cast<std::size_t>(b)];
    return a < b;
  });
  order.resize(k);
  return order;
}

GuidanceSet with_topk_labels(const ImageEncoder& enc, const PairedDataset& data,
                             GuidanceSet g, std::size_t k) {
  Tensor emb = forward_image(enc, data.images);
  g.labels.clear();
  for (std::size_t i = 0; i < data.size(); ++i)
    g.labels.push_back(topk_match_labels(row(emb, i), g, k));
  g.source = GuidanceSource::TopK;
  validate_untargeted(g);
  return g;
}

void save_guidance(const std::string& path_prefix, const GuidanceSet& g) {
  write_tensor_file(path_prefix + ".fgat", {{"W", g.W}});
  nlohmann::json side;
  side["source"] = guidance_source_name(g.source);
  side["duplicate_rows"] = g.duplicate_rows;
  side["labels"] = g.labels;
  std::ofstream out(path_prefix + ".json", std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path_prefix + ".json' for writing");
  out << side.dump(2) << "\n";
}

GuidanceSet load_guidance(const std::string& path_prefix) {
  GuidanceSet g;
  g.W = find_tensor(read_tensor_file(path_prefix + ".fgat"), "W");
  std::ifstream in(path_prefix + ".json");
  if (!in) throw IoError("cannot open '" + path_prefix + ".json'");
  nlohmann::json side = nlohmann::json::parse(in, nullptr, true);
  std::string src = side.at("source").get<std::string>();
  for (GuidanceSource s : {GuidanceSource::ClassMean, GuidanceSource::Prompt,
                           GuidanceSource::DatasetTexts, GuidanceSource::TopK})
    if (src == guidance_source_name(s)) g.source = s;
  g.duplicate_rows = side.at("duplicate_rows").get<bool>();
  g.labels = side.at("labels").get<std::vector<std::vector<int>>>();
  if (!g.labels.empty()) validate_untargeted(g);
  return g;
}

}  // namespace fga
