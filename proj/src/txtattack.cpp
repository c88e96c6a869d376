#include "fga/txtattack.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "fga/losses.hpp"
#include "fga/parallel.hpp"

namespace fga {

std::vector<std::size_t> token_importance(const TokenSeq& t, const Vocab& vocab,
                                          const TextObjective& objective) {
  if (t.ids.empty()) throw DimError("token_importance: empty sequence");
  double base = objective(t);
  std::vector<double> gain(t.size());
  for (std::size_t pos = 0; pos < t.size(); ++pos) {
    TokenSeq probe = t;
    probe.ids[pos] = vocab.unk_id;
    gain[pos] = objective(probe) - base;
  }
  std::vector<std::size_t> order(t.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&gain](std::size_t a, std::size_t b) {
    if (gain[a] != gain[b]) return gain[a] > gain[b];
    return a < b;
  });
  return order;
}

std::vector<int> substitution_candidates(int token_id, const Vocab& vocab,
                                         const TextEncoder* enc,
                                         const TextAttackConfig& cfg) {
  if (cfg.source == CandidateSource::SynonymTable) {
    auto it = vocab.synonyms.find(token_id);
    return it == vocab.synonyms.end() ? std::vector<int>{} : it->second;
  }
  if (!enc) throw ConfigError("embedding-knn candidates need a text encoder");
  if (cfg.knn_k < 1) throw ConfigError("knn_k must be >= 1");

  std::size_t V = enc->embed.shape[0], d = enc->embed.shape[1];
  const scalar* self = enc->embed.data.data() + static_cast<std::size_t>(token_id) * d;
  std::vector<std::pair<double, int>> scored;
  for (std::size_t r = 0; r < V; ++r) {
    if (static_cast<int>(r) == token_id || static_cast<int>(r) == vocab.unk_id)
      continue;
    const scalar* other = enc->embed.data.data() + r * d;
    double dist = 0;
    for (std::size_t j = 0; j < d; ++j) {
      double diff = double(self[j]) - double(other[j]);
      dist += diff * diff;
    }
    scored.emplace_back(dist, static_cast<int>(r));
  }
  std::sort(scored.begin(), scored.end());
  std::vector<int> out;
  for (std::size_t i = 0; i < scored.size() && i < static_cast<std::size_t>(cfg.knn_k);
       ++i)
    out.push_back(scored[i].second);
  return out;
}

SubstituteResult greedy_substitute(const TokenSeq& t, const Vocab& vocab,
                                   const TextEncoder* enc,
                                   const TextObjective& objective,
                                   const TextAttackConfig& cfg) {
  if (cfg.budget < 0) throw ConfigError("text attack: budget must be >= 0");
  SubstituteResult result;
  result.text = t;
  result.objective = objective(t);
  if (cfg.budget == 0) return result;

  std::vector<std::size_t> order = token_importance(t, vocab, objective);
  bool saw_candidates = false;
  for (std::size_t pos : order) {
    if (result.substitutions >= cfg.budget) break;
    std::vector<int> candidates =
        substitution_candidates(result.text.ids[pos], vocab, enc, cfg);
    if (candidates.empty()) continue;
    saw_candidates = true;

    double best_obj = result.objective;
    int best_id = -1;
    for (int cand : candidates) {
      if (cand == result.text.ids[pos]) continue;
      TokenSeq trial = result.text;
      trial.ids[pos] = cand;
      double obj = objective(trial);
      if (obj > best_obj) {  // strict improvement only
        best_obj = obj;
        best_id = cand;
      }
    }
    if (best_id >= 0) {
      result.text.ids[pos] = best_id;
      result.objective = best_obj;
      result.substitutions++;
    }
  }
  result.no_candidates = !saw_candidates;
  return result;
}

FgaTResult fga_t(const ImageEncoder& img_enc, const TextEncoder& txt_enc,
                 const ImageBatch& v,
                 const std::vector<std::vector<TokenSeq>>& texts,
                 const Vocab& vocab, const AttackConfig& img_cfg,
                 const TextAttackConfig& txt_cfg, int threads) {
  std::size_t B = v.shape[0];
  if (texts.size() != B) throw ConfigError("fga_t: one text set per image required");
  for (std::size_t i = 0; i < B; ++i)
    if (texts[i].empty())
      throw ConfigError("fga_t: image " + std::to_string(i) + " has no matched text");

  Tensor e_v = forward_image(img_enc, v);

  // Text attack first: each matched text moves against its image embedding.
  FgaTResult result;
  result.adv_texts.assign(B, {});
  for (std::size_t i = 0; i < B; ++i)
    result.adv_texts[i].resize(texts[i].size());
  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < texts[i].size(); ++j) jobs.emplace_back(i, j);
  parallel_for(jobs.size(), threads, [&](std::size_t idx) {
    auto [i, j] = jobs[idx];
    Tensor img_emb = row(e_v, i);
    TextObjective obj = [&txt_enc, &img_emb](const TokenSeq& seq) {
      return cosine_deviation(forward_text_one(txt_enc, seq), img_emb).value;
    };
    result.adv_texts[i][j] =
        greedy_substitute(texts[i][j], vocab, &txt_enc, obj, txt_cfg).text;
  });

  // Batch-union text set T = T_1 u ... u T_n u T_1' u ... u T_n'; per-image
  // own sets keep duplicates so len_i counts both occurrences.
  std::map<std::vector<int>, int> seen;
  std::vector<TokenSeq> unique;
  auto intern = [&seen, &unique](const TokenSeq& seq) {
    auto it = seen.find(seq.ids);
    if (it != seen.end()) return it->second;
    int idx = static_cast<int>(unique.size());
    seen.emplace(seq.ids, idx);
    unique.push_back(seq);
    return idx;
  };
  std::vector<std::vector<int>> own(B);
  for (std::size_t i = 0; i < B; ++i)
    for (const TokenSeq& t : texts[i]) own[i].push_back(intern(t));
  for (std::size_t i = 0; i < B; ++i)
    for (const TokenSeq& t : result.adv_texts[i]) own[i].push_back(intern(t));

  result.union_guidance.W = forward_text(txt_enc, unique);
  result.union_guidance.labels = own;
  result.union_guidance.source = GuidanceSource::DatasetTexts;

  const GuidanceSet& G = result.union_guidance;
  EmbeddingObjective obj = [&G](std::size_t ex, const Tensor& e, Tensor& ge) {
    double loss = loss_set_gui(e, G.W, G.labels[ex]);
    ge = grad_gui_embedding(e, G.W, G.labels[ex]);
    return loss;
  };
  EmbeddingModel model = image_embedding_model(img_enc);
  auto [adv, trace] = pgd_attack(model, v, obj, img_cfg, threads);
  result.adv_images = std::move(adv);
  result.trace = std::move(trace);
  return result;
}

}  // namespace fga
