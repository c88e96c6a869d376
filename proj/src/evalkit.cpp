#include "fga/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace fga {

namespace {

std::vector<double> cosine_row(const Tensor& emb, std::size_t ex, const Tensor& W) {
  std::size_t d = emb.shape[1], m = W.shape[0];
  const scalar* e = emb.data.data() + ex * d;
  double en = 0;
  for (std::size_t j = 0; j < d; ++j) en += double(e[j]) * double(e[j]);
  en = std::sqrt(en);
  std::vector<double> sims(m);
  for (std::size_t r = 0; r < m; ++r) {
    const scalar* w = W.data.data() + r * d;
    double dot = 0, wn = 0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += double(e[j]) * double(w[j]);
      wn += double(w[j]) * double(w[j]);
    }
    double denom = en * std::sqrt(wn);
    sims[r] = denom > 0 ? dot / denom : 0.0;
  }
  return sims;
}

// Indices sorted by score descending, ties to lower index.
std::vector<std::size_t> ranked(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  return order;
}

}  // namespace

ZeroShotResult zeroshot_eval(const ImageEncoder& enc, const ImageBatch& images,
                             const std::vector<int>& labels, const GuidanceSet& G) {
  if (images.shape[0] != labels.size())
    throw DimError("zeroshot_eval: image/label count mismatch");
  std::size_t m = G.m();
  if (m < 1) throw ConfigError("zeroshot_eval: empty guidance set");

  Tensor emb = forward_image(enc, images);
  ZeroShotResult res;
  std::size_t B = labels.size();
  std::size_t hits1 = 0, hits5 = 0;
  for (std::size_t ex = 0; ex < B; ++ex) {
    std::vector<double> sims = cosine_row(emb, ex, G.W);
    std::vector<std::size_t> order = ranked(sims);
    auto y = static_cast<std::size_t>(labels[ex]);
    res.pred.push_back(static_cast<int>(order[0]));
    bool in5 = false;
    for (std::size_t k = 0; k < std::min<std::size_t>(5, m); ++k)
      if (order[k] == y) in5 = true;
    bool top1 = order[0] == y;
    res.correct1.push_back(top1);
    hits1 += top1 ? 1 : 0;
    hits5 += in5 ? 1 : 0;

    int ru = -1;
    double best = -HUGE_VAL;
    for (std::size_t r = 0; r < m; ++r) {
      if (r == y) continue;
      if (sims[r] > best) {
        best = sims[r];
        ru = static_cast<int>(r);
      }
    }
    res.runner_up.push_back(ru);
  }
  res.top1 = B ? double(hits1) / double(B) : 0;
  res.top5 = B ? double(hits5) / double(B) : 0;
  return res;
}

ZeroShotResult zeroshot_eval(const ImageEncoder& enc, const PairedDataset& data,
                             const GuidanceSet& G) {
  return zeroshot_eval(enc, data.images, data.labels, G);
}

RetrievalResult retrieval_eval(const ImageEncoder& img_enc,
                               const TextEncoder& txt_enc,
                               const PairedDataset& data, const std::vector<int>& ks,
                               const ImageBatch* images_override,
                               const std::vector<std::vector<TokenSeq>>* texts_override) {
  std::size_t B = data.size();
  if (B == 0) throw ConfigError("retrieval_eval: empty dataset");

  const ImageBatch& images = images_override ? *images_override : data.images;
  const auto& captions = texts_override ? *texts_override : data.captions;
  if (captions.size() != B)
    throw DimError("retrieval_eval: caption structure mismatch");

  std::vector<TokenSeq> corpus;
  std::vector<std::size_t> owner;
  for (std::size_t i = 0; i < B; ++i) {
    if (captions[i].empty())
      throw ConfigError("retrieval_eval: example " + std::to_string(i) +
                        " has no captions");
    for (const TokenSeq& t : captions[i]) {
      corpus.push_back(t);
      owner.push_back(i);
    }
  }
  std::size_t N = corpus.size();
  for (int k : ks) {
    if (k < 1) throw ConfigError("retrieval_eval: k must be >= 1");
    if (static_cast<std::size_t>(k) > N || static_cast<std::size_t>(k) > B)
      throw ConfigError("retrieval_eval: k=" + std::to_string(k) +
                        " exceeds corpus size");
  }

  Tensor e_img = forward_image(img_enc, images);
  Tensor e_txt = forward_text(txt_enc, corpus);
  std::size_t d = e_img.shape[1];

  // Full similarity matrix (B images x N texts). Cosine.
  std::vector<double> img_norm(B), txt_norm(N);
  for (std::size_t i = 0; i < B; ++i) {
    double n = 0;
    for (std::size_t j = 0; j < d; ++j) {
      double v = e_img.data[i * d + j];
      n += v * v;
    }
    img_norm[i] = std::sqrt(n);
  }
  for (std::size_t t = 0; t < N; ++t) {
    double n = 0;
    for (std::size_t j = 0; j < d; ++j) {
      double v = e_txt.data[t * d + j];
      n += v * v;
    }
    txt_norm[t] = std::sqrt(n);
  }
  std::vector<double> S(B * N);
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t t = 0; t < N; ++t) {
      double dot = 0;
      for (std::size_t j = 0; j < d; ++j)
        dot += double(e_img.data[i * d + j]) * double(e_txt.data[t * d + j]);
      double denom = img_norm[i] * txt_norm[t];
      S[i * N + t] = denom > 0 ? dot / denom : 0;
    }

  RetrievalResult res;
  int max_k = *std::max_element(ks.begin(), ks.end());

  // Text retrieval: image query over the caption corpus.
  std::vector<std::size_t> tr_hits(ks.size(), 0);
  for (std::size_t i = 0; i < B; ++i) {
    std::vector<double> scores(S.begin() + static_cast<std::ptrdiff_t>(i * N),
                               S.begin() + static_cast<std::ptrdiff_t>((i + 1) * N));
    std::vector<std::size_t> order = ranked(scores);
    int best_rank = -1;
    for (std::size_t r = 0; r < static_cast<std::size_t>(max_k); ++r)
      if (owner[order[r]] == i) {
        best_rank = static_cast<int>(r);
        break;
      }
    for (std::size_t ki = 0; ki < ks.size(); ++ki)
      if (best_rank >= 0 && best_rank < ks[ki]) tr_hits[ki]++;
    res.tr_hit1.push_back(best_rank == 0);
  }
  for (std::size_t ki = 0; ki < ks.size(); ++ki)
    res.tr[ks[ki]] = double(tr_hits[ki]) / double(B);

  // Image retrieval: text query over the image set.
  std::vector<std::size_t> ir_hits(ks.size(), 0);
  for (std::size_t t = 0; t < N; ++t) {
    std::vector<double> scores(B);
    for (std::size_t i = 0; i < B; ++i) scores[i] = S[i * N + t];
    std::vector<std::size_t> order = ranked(scores);
    int best_rank = -1;
    for (std::size_t r = 0; r < static_cast<std::size_t>(max_k); ++r)
      if (order[r] == owner[t]) {
        best_rank = static_cast<int>(r);
        break;
      }
    for (std::size_t ki = 0; ki < ks.size(); ++ki)
      if (best_rank >= 0 && best_rank < ks[ki]) ir_hits[ki]++;
    res.ir_hit1.push_back(best_rank == 0);
  }
  for (std::size_t ki = 0; ki < ks.size(); ++ki)
    res.ir[ks[ki]] = double(ir_hits[ki]) / double(N);

  return res;
}

std::optional<double> attack_success_rate(const std::vector<bool>& clean_success,
                                          const std::vector<bool>& adv_success) {
  if (clean_success.size() != adv_success.size())
    throw DimError("attack_success_rate: example sets differ");
  std::size_t clean = 0, flipped = 0;
  for (std::size_t i = 0; i < clean_success.size(); ++i) {
    if (!clean_success[i]) continue;
    clean++;
    if (!adv_success[i]) flipped++;
  }
  if (clean == 0) return std::nullopt;
  return double(flipped) / double(clean);
}

ProximityResult proximity_confusion(const ImageEncoder& enc,
                                    const PairedDataset& data,
                                    const GuidanceSet& G,
                                    const std::vector<int>& adv_pred) {
  std::size_t m = G.m();
  if (m < 2) throw ConfigError("proximity_confusion: need m >= 2 guiding vectors");
  if (adv_pred.size() != data.size())
    throw DimError("proximity_confusion: prediction count mismatch");

  ZeroShotResult clean = zeroshot_eval(enc, data, G);
  ProximityResult res;
  res.matrix = Tensor({m, m});
  for (std::size_t ex = 0; ex < data.size(); ++ex) {
    auto r = static_cast<std::size_t>(clean.runner_up[ex]);
    auto c = static_cast<std::size_t>(adv_pred[ex]);
    res.matrix.data[r * m + c] += 1;
    res.total++;
  }
  double diag = 0;
  for (std::size_t k = 0; k < m; ++k) diag += res.matrix.data[k * m + k];
  res.diagonal_mass = res.total ? diag / double(res.total) : 0;
  return res;
}

double TransferMatrix::mean_off_diagonal() const {
  double acc = 0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t t = 0; t < n; ++t) {
      if (s == t) continue;
      acc += cell(s, t);
      count++;
    }
  return count ? acc / double(count) : 0;
}

TransferMatrix transfer_eval(const std::vector<ModelPair>& models,
                             const CraftFn& craft, const PairedDataset& data) {
  if (models.size() < 2)
    throw ConfigError("transfer_eval: need at least 2 model pairs");
  std::size_t n = models.size();
  TransferMatrix mat;
  mat.n = n;
  mat.tr_asr.assign(n * n, 0);
  mat.ir_asr.assign(n * n, 0);

  std::vector<RetrievalResult> clean(n);
  for (std::size_t t = 0; t < n; ++t)
    clean[t] = retrieval_eval(models[t].image, models[t].text, data, {1});

  for (std::size_t s = 0; s < n; ++s) {
    AdvPair adv = craft(models[s], data);
    const auto* texts = adv.texts.empty() ? nullptr : &adv.texts;
    for (std::size_t t = 0; t < n; ++t) {
      RetrievalResult post = retrieval_eval(models[t].image, models[t].text, data,
                                            {1}, &adv.images, texts);
      mat.tr_asr[s * n + t] =
          attack_success_rate(clean[t].tr_hit1, post.tr_hit1).value_or(0);
      mat.ir_asr[s * n + t] =
          attack_success_rate(clean[t].ir_hit1, post.ir_hit1).value_or(0);
    }
  }
  return mat;
}

std::vector<double> default_ablation_eps() {
  return {0.5 / 255, 1.0 / 255, 2.0 / 255, 4.0 / 255, 8.0 / 255, 16.0 / 255};
}

std::vector<int> default_ablation_steps() { return {1, 3, 7, 10}; }

std::vector<AblationCell> ablation_sweep(const ImageEncoder& img_enc,
                                         const TextEncoder& txt_enc,
                                         const PairedDataset& data,
                                         const GuidanceSet& G,
                                         const std::vector<double>& eps_list,
                                         const std::vector<int>& step_list,
                                         const AttackConfig& base, int threads) {
  if (eps_list.empty() || step_list.empty())
    throw ConfigError("ablation_sweep: empty grid");
  EmbeddingModel model = image_embedding_model(img_enc);
  std::vector<AblationCell> cells;
  for (double eps : eps_list)
    for (int steps : step_list) {
      AttackConfig cfg = base;
      cfg.epsilon = eps;
      cfg.steps = steps;
      cfg.alpha = 0;  // rescale the default step to the cell budget
      AblationCell cell;
      cell.epsilon = eps;
      cell.steps = steps;
      if (eps == 0) {
        RetrievalResult r = retrieval_eval(img_enc, txt_enc, data, {1});
        cell.tr_r1 = r.tr.at(1);
        cell.ir_r1 = r.ir.at(1);
      } else {
        auto [adv, trace] = fga(model, data.images, G, cfg, threads);
        RetrievalResult r = retrieval_eval(img_enc, txt_enc, data, {1}, &adv);
        cell.tr_r1 = r.tr.at(1);
        cell.ir_r1 = r.ir.at(1);
      }
      cells.push_back(cell);
    }
  return cells;
}

std::string matrix_csv(const Tensor& m) {
  if (m.rank() != 2) throw DimError("matrix_csv: expected rank-2 tensor");
  std::ostringstream out;
  for (std::size_t r = 0; r < m.shape[0]; ++r) {
    for (std::size_t c = 0; c < m.shape[1]; ++c) {
      if (c) out << ',';
      out << double(m.data[r * m.shape[1] + c]);
    }
    out << '\n';
  }
  return out.str();
}

std::string transfer_csv(const TransferMatrix& m) {
  std::ostringstream out;
  out << "source\\target";
  for (std::size_t t = 0; t < m.n; ++t) out << ",model" << t;
  out << '\n';
  for (std::size_t s = 0; s < m.n; ++s) {
    out << "model" << s;
    for (std::size_t t = 0; t < m.n; ++t) out << ',' << m.cell(s, t);
    out << '\n';
  }
  return out.str();
}

}  // namespace fga
