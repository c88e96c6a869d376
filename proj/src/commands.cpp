#include "fga/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fga/dataset.hpp"
#include "fga/evalkit.hpp"
#include "fga/guidance.hpp"
#include "fga/imgattack.hpp"
#include "fga/losses.hpp"
#include "fga/models.hpp"
#include "fga/tensor_io.hpp"
#include "fga/txtattack.hpp"

namespace fga {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> known) {
  if (!j.is_object())
    throw ConfigError("config: '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    (void)v;
    bool ok = false;
    for (const char* name : known)
      if (k == name) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError("config: unknown key '" + where + "." + k + "'");
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value at '" + where + "." + key + "'");
  }
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream out;
  out << std::hex << h;
  return out.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

void write_report(const RunConfig& cfg, const std::string& path, json body) {
  body["config"] = json::parse(cfg.to_json_text());
  body["config_hash"] = cfg.config_hash();
  body["seed"] = cfg.seed;
  write_text(path, body.dump(2) + "\n");
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text,
                                    const std::string& source_name) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + source_name + "': " + e.what());
  }
  check_keys(j, source_name,
             {"seed", "threads", "out", "data_path", "model_path", "data", "model",
              "train", "attack", "eval", "ablate", "transfer"});

  RunConfig cfg;
  get_if(j, "seed", cfg.seed, source_name);
  get_if(j, "threads", cfg.threads, source_name);
  get_if(j, "out", cfg.out, source_name);
  get_if(j, "data_path", cfg.data_path, source_name);
  get_if(j, "model_path", cfg.model_path, source_name);

  if (j.contains("data")) {
    const json& s = j.at("data");
    std::string w = source_name + ".data";
    check_keys(s, w,
               {"source", "path", "classes", "per_class", "channels", "height",
                "width", "noise_sigma", "captions_per_image", "max_records"});
    get_if(s, "source", cfg.data.source, w);
    get_if(s, "path", cfg.data.path, w);
    get_if(s, "classes", cfg.data.classes, w);
    get_if(s, "per_class", cfg.data.per_class, w);
    get_if(s, "channels", cfg.data.channels, w);
    get_if(s, "height", cfg.data.height, w);
    get_if(s, "width", cfg.data.width, w);
    get_if(s, "noise_sigma", cfg.data.noise_sigma, w);
    get_if(s, "captions_per_image", cfg.data.captions_per_image, w);
    get_if(s, "max_records", cfg.data.max_records, w);
  }
  if (j.contains("model")) {
    const json& s = j.at("model");
    std::string w = source_name + ".model";
    check_keys(s, w,
               {"embed_dim", "image_hidden", "text_hidden", "token_dim",
                "normalize", "fusion_hidden", "fused_dim"});
    get_if(s, "embed_dim", cfg.model.embed_dim, w);
    get_if(s, "image_hidden", cfg.model.image_hidden, w);
    get_if(s, "text_hidden", cfg.model.text_hidden, w);
    get_if(s, "token_dim", cfg.model.token_dim, w);
    get_if(s, "normalize", cfg.model.normalize, w);
    get_if(s, "fusion_hidden", cfg.model.fusion_hidden, w);
    get_if(s, "fused_dim", cfg.model.fused_dim, w);
  }
  if (j.contains("train")) {
    const json& s = j.at("train");
    std::string w = source_name + ".train";
    check_keys(s, w, {"epochs", "lr", "temperature", "fusion_epochs", "fusion_lr"});
    get_if(s, "epochs", cfg.train.epochs, w);
    get_if(s, "lr", cfg.train.lr, w);
    get_if(s, "temperature", cfg.train.temperature, w);
    get_if(s, "fusion_epochs", cfg.train.fusion_epochs, w);
    get_if(s, "fusion_lr", cfg.train.fusion_lr, w);
  }
  if (j.contains("attack")) {
    const json& s = j.at("attack");
    std::string w = source_name + ".attack";
    check_keys(s, w,
               {"method", "norm", "epsilon", "steps", "alpha", "momentum_mu",
                "q_percentile", "scales", "random_start", "guidance", "topk",
                "prompt_template", "text_budget", "text_candidates", "knn_k",
                "patch_area", "patch_steps", "patch_alpha", "target"});
    get_if(s, "method", cfg.attack.method, w);
    get_if(s, "norm", cfg.attack.norm, w);
    get_if(s, "epsilon", cfg.attack.epsilon, w);
    get_if(s, "steps", cfg.attack.steps, w);
    get_if(s, "alpha", cfg.attack.alpha, w);
    get_if(s, "momentum_mu", cfg.attack.momentum_mu, w);
    get_if(s, "q_percentile", cfg.attack.q_percentile, w);
    get_if(s, "scales", cfg.attack.scales, w);
    get_if(s, "random_start", cfg.attack.random_start, w);
    get_if(s, "guidance", cfg.attack.guidance, w);
    get_if(s, "topk", cfg.attack.topk, w);
    get_if(s, "prompt_template", cfg.attack.prompt_template, w);
    get_if(s, "text_budget", cfg.attack.text_budget, w);
    get_if(s, "text_candidates", cfg.attack.text_candidates, w);
    get_if(s, "knn_k", cfg.attack.knn_k, w);
    get_if(s, "patch_area", cfg.attack.patch_area, w);
    get_if(s, "patch_steps", cfg.attack.patch_steps, w);
    get_if(s, "patch_alpha", cfg.attack.patch_alpha, w);
    get_if(s, "target", cfg.attack.target, w);
  }
  if (j.contains("eval")) {
    const json& s = j.at("eval");
    std::string w = source_name + ".eval";
    check_keys(s, w, {"ks", "adv_images"});
    get_if(s, "ks", cfg.eval.ks, w);
    get_if(s, "adv_images", cfg.eval.adv_images, w);
  }
  if (j.contains("ablate")) {
    const json& s = j.at("ablate");
    std::string w = source_name + ".ablate";
    check_keys(s, w, {"eps_list", "step_list"});
    get_if(s, "eps_list", cfg.ablate.eps_list, w);
    get_if(s, "step_list", cfg.ablate.step_list, w);
  }
  if (j.contains("transfer")) {
    const json& s = j.at("transfer");
    std::string w = source_name + ".transfer";
    check_keys(s, w, {"seeds", "methods", "models"});
    get_if(s, "seeds", cfg.transfer.seeds, w);
    get_if(s, "methods", cfg.transfer.methods, w);
    get_if(s, "models", cfg.transfer.models, w);
  }
  return cfg;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return from_json_text(text, path);
}

std::string RunConfig::to_json_text() const {
  json j;
  j["seed"] = seed;
  j["threads"] = threads;
  j["out"] = out;
  j["data_path"] = data_path;
  j["model_path"] = model_path;
  j["data"] = {{"source", data.source},
               {"path", data.path},
               {"classes", data.classes},
               {"per_class", data.per_class},
               {"channels", data.channels},
               {"height", data.height},
               {"width", data.width},
               {"noise_sigma", data.noise_sigma},
               {"captions_per_image", data.captions_per_image},
               {"max_records", data.max_records}};
  j["model"] = {{"embed_dim", model.embed_dim},
                {"image_hidden", model.image_hidden},
                {"text_hidden", model.text_hidden},
                {"token_dim", model.token_dim},
                {"normalize", model.normalize},
                {"fusion_hidden", model.fusion_hidden},
                {"fused_dim", model.fused_dim}};
  j["train"] = {{"epochs", train.epochs},
                {"lr", train.lr},
                {"temperature", train.temperature},
                {"fusion_epochs", train.fusion_epochs},
                {"fusion_lr", train.fusion_lr}};
  j["attack"] = {{"method", attack.method},
                 {"norm", attack.norm},
                 {"epsilon", attack.epsilon},
                 {"steps", attack.steps},
                 {"alpha", attack.alpha},
                 {"momentum_mu", attack.momentum_mu},
                 {"q_percentile", attack.q_percentile},
                 {"scales", attack.scales},
                 {"random_start", attack.random_start},
                 {"guidance", attack.guidance},
                 {"topk", attack.topk},
                 {"prompt_template", attack.prompt_template},
                 {"text_budget", attack.text_budget},
                 {"text_candidates", attack.text_candidates},
                 {"knn_k", attack.knn_k},
                 {"patch_area", attack.patch_area},
                 {"patch_steps", attack.patch_steps},
                 {"patch_alpha", attack.patch_alpha},
                 {"target", attack.target}};
  j["eval"] = {{"ks", eval.ks}, {"adv_images", eval.adv_images}};
  j["ablate"] = {{"eps_list", ablate.eps_list}, {"step_list", ablate.step_list}};
  j["transfer"] = {{"seeds", transfer.seeds},
                   {"methods", transfer.methods},
                   {"models", transfer.models}};
  return j.dump(2);
}

std::string RunConfig::config_hash() const { return fnv1a_hex(to_json_text()); }

std::string RunConfig::resolved_data_path() const {
  return data_path.empty() ? join_path(out, "dataset") : data_path;
}

std::string RunConfig::resolved_model_path() const {
  return model_path.empty() ? join_path(out, "model.fgat") : model_path;
}

int exit_code_for(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const IoError*>(&e)) return kExitMissingFile;
  if (dynamic_cast<const FormatError*>(&e)) return kExitFormat;
  return kExitRuntime;
}

namespace {

PairedDataset build_dataset(const RunConfig& cfg) {
  if (cfg.data.source == "synthetic") {
    SynthConfig sc;
    sc.classes = cfg.data.classes;
    sc.per_class = cfg.data.per_class;
    sc.channels = cfg.data.channels;
    sc.height = cfg.data.height;
    sc.width = cfg.data.width;
    sc.noise_sigma = cfg.data.noise_sigma;
    sc.captions_per_image = cfg.data.captions_per_image;
    return gen_dataset(sc, cfg.seed);
  }
  if (cfg.data.source == "cifar10") {
    if (cfg.data.path.empty())
      throw ConfigError("config: data.path required for cifar10 source");
    return load_cifar10(cfg.data.path,
                        static_cast<std::size_t>(std::max(0, cfg.data.max_records)));
  }
  if (cfg.data.source == "file") {
    if (cfg.data.path.empty())
      throw ConfigError("config: data.path required for file source");
    return load_dataset(cfg.data.path);
  }
  throw ConfigError("config: unknown data.source '" + cfg.data.source + "'");
}

std::vector<std::size_t> widths_of(const std::vector<int>& v) {
  std::vector<std::size_t> out;
  for (int w : v) {
    if (w < 1) throw ConfigError("config: hidden widths must be >= 1");
    out.push_back(static_cast<std::size_t>(w));
  }
  return out;
}

ModelBundle train_bundle(const RunConfig& cfg, const PairedDataset& ds,
                         std::uint64_t seed, double width_scale,
                         std::vector<double>* itc_losses = nullptr) {
  const ModelSection& m = cfg.model;
  std::vector<std::size_t> img_hidden, txt_hidden;
  for (int w : m.image_hidden)
    img_hidden.push_back(std::max<std::size_t>(
        2, static_cast<std::size_t>(std::lround(w * width_scale))));
  for (int w : m.text_hidden)
    txt_hidden.push_back(std::max<std::size_t>(
        2, static_cast<std::size_t>(std::lround(w * width_scale))));

  ModelBundle bundle;
  bundle.image = make_image_encoder(
      static_cast<std::size_t>(cfg.data.channels), ds.images.shape[2],
      ds.images.shape[3], img_hidden, static_cast<std::size_t>(m.embed_dim),
      m.normalize, seed);
  bundle.text = make_text_encoder(static_cast<std::size_t>(ds.vocab.size()),
                                  static_cast<std::size_t>(m.token_dim), txt_hidden,
                                  static_cast<std::size_t>(m.embed_dim), m.normalize,
                                  seed + 1);

  ItcConfig itc;
  itc.epochs = cfg.train.epochs;
  itc.lr = cfg.train.lr;
  itc.temperature = cfg.train.temperature;
  train_itc(bundle.image, bundle.text, ds, itc, seed, itc_losses);

  if (cfg.train.fusion_epochs > 0) {
    bundle.fusion = make_fusion_head(
        bundle.image.out_dim, bundle.text.out_dim, widths_of(m.fusion_hidden),
        static_cast<std::size_t>(m.fused_dim),
        static_cast<std::size_t>(ds.num_classes()), seed + 2);
    FusionTrainConfig fc;
    fc.epochs = cfg.train.fusion_epochs;
    fc.lr = cfg.train.fusion_lr;
    train_fusion(bundle.fusion, bundle.image, bundle.text, ds, fc, seed + 3);
    bundle.has_fusion = true;
  }
  return bundle;
}

GuidanceSet build_guidance(const RunConfig& cfg, const ModelBundle& models,
                           const PairedDataset& ds) {
  const std::string& kind = cfg.attack.guidance;
  if (kind == "class-mean") return class_mean_guidance(models.image, ds);
  if (kind == "prompt")
    return prompt_guidance(models.text, ds.vocab, ds.class_names,
                           cfg.attack.prompt_template, ds.labels);
  if (kind == "dataset-texts") return dataset_text_guidance(models.text, ds);
  if (kind == "topk") {
    GuidanceSet g = prompt_guidance(models.text, ds.vocab, ds.class_names,
                                    cfg.attack.prompt_template);
    return with_topk_labels(models.image, ds, std::move(g),
                            static_cast<std::size_t>(cfg.attack.topk));
  }
  throw ConfigError("config: unknown attack.guidance '" + kind + "'");
}

AttackConfig attack_config_of(const RunConfig& cfg, bool scales_on, bool momentum_on) {
  AttackConfig a;
  a.p = parse_norm(cfg.attack.norm);
  a.epsilon = cfg.attack.epsilon;
  a.steps = cfg.attack.steps;
  a.alpha = cfg.attack.alpha;
  a.momentum_mu = momentum_on ? cfg.attack.momentum_mu : 0.0;
  a.q_percentile = cfg.attack.q_percentile;
  if (scales_on) a.scales = cfg.attack.scales;
  a.random_start = cfg.attack.random_start;
  a.seed = cfg.seed;
  return a;
}

TextAttackConfig text_config_of(const RunConfig& cfg) {
  TextAttackConfig t;
  t.budget = cfg.attack.text_budget;
  if (cfg.attack.text_candidates == "synonym-table")
    t.source = CandidateSource::SynonymTable;
  else if (cfg.attack.text_candidates == "embedding-knn")
    t.source = CandidateSource::EmbeddingKnn;
  else
    throw ConfigError("config: unknown attack.text_candidates '" +
                      cfg.attack.text_candidates + "'");
  t.knn_k = cfg.attack.knn_k;
  t.seed = cfg.seed;
  return t;
}

std::vector<PatchSpec> make_patch_specs(const RunConfig& cfg, const PairedDataset& ds) {
  std::size_t H = ds.images.shape[2], W = ds.images.shape[3];
  std::vector<PatchSpec> specs;
  for (std::size_t ex = 0; ex < ds.size(); ++ex) {
    RngStream rng = RngStream(cfg.seed, 901).fork(ex);
    specs.push_back(PatchSpec::random_square(H, W, cfg.attack.patch_area, rng));
  }
  return specs;
}

std::vector<int> make_patch_targets(const RunConfig& cfg, const GuidanceSet& G,
                                    const PairedDataset& ds) {
  if (cfg.attack.target >= 0) {
    if (static_cast<std::size_t>(cfg.attack.target) >= G.m())
      throw ConfigError("config: attack.target out of range");
    return {cfg.attack.target};
  }
  // A wrong row per example, drawn deterministically.
  std::vector<int> targets;
  for (std::size_t ex = 0; ex < ds.size(); ++ex) {
    RngStream rng = RngStream(cfg.seed, 902).fork(ex);
    const std::vector<int>& own =
        G.labels.empty() ? std::vector<int>{ds.labels[ex]} : G.labels[ex];
    int pick;
    do {
      pick = static_cast<int>(rng.index(G.m()));
    } while (std::find(own.begin(), own.end(), pick) != own.end());
    targets.push_back(pick);
  }
  return targets;
}

struct AttackOutputs {
  ImageBatch adv;
  AttackTrace trace;
  std::vector<std::vector<TokenSeq>> adv_texts;  // empty for image-only methods
};

AttackOutputs run_attack_method(const RunConfig& cfg, const ModelBundle& models,
                                const PairedDataset& ds) {
  const std::string& method = cfg.attack.method;
  EmbeddingModel model = image_embedding_model(models.image);
  AttackOutputs out;

  if (method == "fda") {
    auto [adv, trace] = fda(model, ds.images, attack_config_of(cfg, false, false),
                            cfg.threads);
    out.adv = std::move(adv);
    out.trace = std::move(trace);
    return out;
  }
  if (method == "fga" || method == "fga_l1") {
    AttackConfig a = attack_config_of(cfg, false, false);
    if (method == "fga_l1") a.p = Norm::L1;
    GuidanceSet G = build_guidance(cfg, models, ds);
    auto [adv, trace] = fga(model, ds.images, G, a, cfg.threads);
    out.adv = std::move(adv);
    out.trace = std::move(trace);
    return out;
  }
  if (method == "fga_fused") {
    if (!models.has_fusion)
      throw ConfigError("fga_fused requires a checkpoint with a fusion head");
    // Guidance = rows of the linear classification head; the attacked
    // embedding is the fused one.
    std::vector<TokenSeq> caps;
    for (std::size_t i = 0; i < ds.size(); ++i) caps.push_back(ds.captions[i][0]);
    Tensor e_t = forward_text(models.text, caps);
    EmbeddingModel fused = fused_embedding_model(models.image, models.fusion, e_t);
    GuidanceSet G;
    G.W = models.fusion.head.W;
    G.source = GuidanceSource::ClassMean;
    for (int label : ds.labels) G.labels.push_back({label});
    auto [adv, trace] =
        fga(fused, ds.images, G, attack_config_of(cfg, false, false), cfg.threads);
    out.adv = std::move(adv);
    out.trace = std::move(trace);
    return out;
  }
  if (method == "fga_t" || method == "fga_t_aug" || method == "mfga_t_aug") {
    bool aug = method != "fga_t";
    bool mom = method == "mfga_t_aug";
    FgaTResult res = fga_t(models.image, models.text, ds.images, ds.captions,
                           ds.vocab, attack_config_of(cfg, aug, mom),
                           text_config_of(cfg), cfg.threads);
    out.adv = std::move(res.adv_images);
    out.trace = std::move(res.trace);
    out.adv_texts = std::move(res.adv_texts);
    return out;
  }
  if (method == "fga_patch") {
    GuidanceSet G = build_guidance(cfg, models, ds);
    validate_untargeted(G);
    if (G.labels.size() != ds.size())
      throw ConfigError("fga_patch: guidance labels must cover every example");
    EmbeddingObjective obj = [&G](std::size_t ex, const Tensor& e, Tensor& ge) {
      double loss = loss_gui(e, G.W, G.labels[ex]);
      ge = grad_gui_embedding(e, G.W, G.labels[ex]);
      return loss;
    };
    PatchConfig pc;
    pc.steps = cfg.attack.patch_steps;
    pc.alpha = cfg.attack.patch_alpha;
    pc.seed = cfg.seed;
    auto [adv, trace] = patch_attack(model, ds.images, obj,
                                     make_patch_specs(cfg, ds), pc, cfg.threads);
    out.adv = std::move(adv);
    out.trace = std::move(trace);
    return out;
  }
  if (method == "fga_targeted_patch") {
    GuidanceSet G = build_guidance(cfg, models, ds);
    PatchConfig pc;
    pc.steps = cfg.attack.patch_steps;
    pc.alpha = cfg.attack.patch_alpha;
    pc.seed = cfg.seed;
    auto [adv, trace] =
        fga_targeted_patch(model, ds.images, G, make_patch_targets(cfg, G, ds),
                           make_patch_specs(cfg, ds), pc, cfg.threads);
    out.adv = std::move(adv);
    out.trace = std::move(trace);
    return out;
  }
  throw ConfigError("config: unknown attack.method '" + method + "'");
}

json metrics_json(const ModelBundle& models, const PairedDataset& ds,
                  const std::vector<int>& ks, const ImageBatch* adv_images,
                  const std::vector<std::vector<TokenSeq>>* adv_texts) {
  json out;
  GuidanceSet classifier = prompt_guidance(models.text, ds.vocab, ds.class_names,
                                           "a photo of a {}", ds.labels);
  ZeroShotResult clean_zc = zeroshot_eval(models.image, ds, classifier);
  RetrievalResult clean_ret = retrieval_eval(models.image, models.text, ds, ks);
  out["clean"]["top1"] = clean_zc.top1;
  out["clean"]["top5"] = clean_zc.top5;
  for (int k : ks) {
    out["clean"]["tr"][std::to_string(k)] = clean_ret.tr.at(k);
    out["clean"]["ir"][std::to_string(k)] = clean_ret.ir.at(k);
  }

  if (adv_images) {
    ZeroShotResult adv_zc =
        zeroshot_eval(models.image, *adv_images, ds.labels, classifier);
    RetrievalResult adv_ret =
        retrieval_eval(models.image, models.text, ds, ks, adv_images, adv_texts);
    out["adversarial"]["top1"] = adv_zc.top1;
    out["adversarial"]["top5"] = adv_zc.top5;
    for (int k : ks) {
      out["adversarial"]["tr"][std::to_string(k)] = adv_ret.tr.at(k);
      out["adversarial"]["ir"][std::to_string(k)] = adv_ret.ir.at(k);
    }
    std::vector<bool> clean_ok(clean_zc.correct1.begin(), clean_zc.correct1.end());
    std::vector<bool> adv_ok(adv_zc.correct1.begin(), adv_zc.correct1.end());
    auto asr_top1 = attack_success_rate(clean_ok, adv_ok);
    auto asr_tr = attack_success_rate(clean_ret.tr_hit1, adv_ret.tr_hit1);
    auto asr_ir = attack_success_rate(clean_ret.ir_hit1, adv_ret.ir_hit1);
    out["asr"]["top1"] = asr_top1 ? json(*asr_top1) : json(nullptr);
    out["asr"]["tr1"] = asr_tr ? json(*asr_tr) : json(nullptr);
    out["asr"]["ir1"] = asr_ir ? json(*asr_ir) : json(nullptr);
    out["predictions"]["clean"] = clean_zc.pred;
    out["predictions"]["adversarial"] = adv_zc.pred;
  }
  return out;
}

}  // namespace

void cmd_gen_data(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out);
  PairedDataset ds = build_dataset(cfg);
  save_dataset(cfg.resolved_data_path(), ds);

  json body;
  body["examples"] = ds.size();
  body["classes"] = ds.num_classes();
  body["image_shape"] = ds.images.shape;
  body["vocab_size"] = ds.vocab.size();
  write_report(cfg, join_path(cfg.out, "gen_data_report.json"), std::move(body));
}

void cmd_train(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out);
  PairedDataset ds = load_dataset(cfg.resolved_data_path());
  std::vector<double> itc_losses;
  ModelBundle bundle = train_bundle(cfg, ds, cfg.seed, 1.0, &itc_losses);
  bundle.metadata["seed"] = std::to_string(cfg.seed);
  bundle.metadata["config_hash"] = cfg.config_hash();
  save_models(cfg.resolved_model_path(), bundle);

  json body;
  body["itc_losses"] = itc_losses;
  body["final_loss"] = itc_losses.empty() ? json(nullptr) : json(itc_losses.back());
  body["has_fusion"] = bundle.has_fusion;
  write_report(cfg, join_path(cfg.out, "train_report.json"), std::move(body));
}

void cmd_attack(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out);
  PairedDataset ds = load_dataset(cfg.resolved_data_path());
  ModelBundle models = load_models(cfg.resolved_model_path());

  AttackOutputs res = run_attack_method(cfg, models, ds);
  write_tensor_file(join_path(cfg.out, "adv_images.fgat"),
                    {{"images", res.adv}});

  json body;
  body["method"] = cfg.attack.method;
  body["zero_budget"] = cfg.attack.epsilon == 0;
  body["iterations"] = res.trace.iterations;
  body["warnings"] = res.trace.warnings;
  body["losses_per_iteration"] = res.trace.losses;
  json norms = json::array();
  for (const auto& n : res.trace.final_norms)
    norms.push_back({{"l1", n[0]}, {"l2", n[1]}, {"linf", n[2]}});
  body["final_norms"] = norms;

  if (!res.adv_texts.empty()) {
    json texts = json::array();
    for (const auto& per_image : res.adv_texts) {
      json arr = json::array();
      for (const TokenSeq& t : per_image) arr.push_back(detokenize(t, ds.vocab));
      texts.push_back(arr);
    }
    body["adv_texts"] = texts;
  }

  const auto* texts = res.adv_texts.empty() ? nullptr : &res.adv_texts;
  body["metrics"] = metrics_json(models, ds, cfg.eval.ks, &res.adv, texts);
  write_report(cfg, join_path(cfg.out, "attack_report.json"), std::move(body));
}

void cmd_eval(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out);
  PairedDataset ds = load_dataset(cfg.resolved_data_path());
  ModelBundle models = load_models(cfg.resolved_model_path());

  json body;
  if (cfg.eval.adv_images.empty()) {
    body["metrics"] = metrics_json(models, ds, cfg.eval.ks, nullptr, nullptr);
  } else {
    ImageBatch adv =
        find_tensor(read_tensor_file(cfg.eval.adv_images), "images");
    body["metrics"] = metrics_json(models, ds, cfg.eval.ks, &adv, nullptr);

    GuidanceSet classifier = prompt_guidance(models.text, ds.vocab, ds.class_names,
                                             "a photo of a {}", ds.labels);
    ZeroShotResult adv_zc = zeroshot_eval(models.image, adv, ds.labels, classifier);
    ProximityResult prox =
        proximity_confusion(models.image, ds, classifier, adv_zc.pred);
    body["proximity"]["diagonal_mass"] = prox.diagonal_mass;
    body["proximity"]["null_model"] = 1.0 / double(prox.matrix.shape[0] - 1);
    write_text(join_path(cfg.out, "confusion.csv"), matrix_csv(prox.matrix));
  }
  write_report(cfg, join_path(cfg.out, "metrics_report.json"), std::move(body));
}

void cmd_transfer(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out);
  PairedDataset ds = load_dataset(cfg.resolved_data_path());
  if (cfg.transfer.models < 2)
    throw ConfigError("config: transfer.models must be >= 2");

  json body;
  std::ostringstream csv;
  csv << "seed,method,source,target,tr_asr,ir_asr,cell\n";

  for (std::uint64_t seed : cfg.transfer.seeds) {
    std::vector<ModelPair> pairs;
    for (int k = 0; k < cfg.transfer.models; ++k) {
      // Independently seeded instances with staggered widths.
      double width_scale = 1.0 - 0.25 * k;
      RunConfig train_cfg = cfg;
      train_cfg.seed = seed;
      ModelBundle bundle = train_bundle(train_cfg, ds,
                                        seed * 1000 + static_cast<std::uint64_t>(k),
                                        width_scale);
      pairs.push_back({std::move(bundle.image), std::move(bundle.text)});
    }

    for (const std::string& method : cfg.transfer.methods) {
      bool aug = method == "fga_t_aug" || method == "mfga_t_aug";
      bool mom = method == "mfga_t_aug";
      if (method != "fga_t" && !aug)
        throw ConfigError("config: unknown transfer method '" + method + "'");

      RunConfig atk_cfg = cfg;
      atk_cfg.seed = seed;
      CraftFn craft = [&](const ModelPair& source, const PairedDataset& data) {
        FgaTResult res =
            fga_t(source.image, source.text, data.images, data.captions, data.vocab,
                  attack_config_of(atk_cfg, aug, mom), text_config_of(atk_cfg),
                  cfg.threads);
        return AdvPair{std::move(res.adv_images), std::move(res.adv_texts)};
      };
      TransferMatrix mat = transfer_eval(pairs, craft, ds);

      std::string key = "seed" + std::to_string(seed);
      body["matrices"][key][method]["tr_asr"] = mat.tr_asr;
      body["matrices"][key][method]["ir_asr"] = mat.ir_asr;
      body["matrices"][key][method]["mean_off_diagonal"] = mat.mean_off_diagonal();
      for (std::size_t s = 0; s < mat.n; ++s)
        for (std::size_t t = 0; t < mat.n; ++t)
          csv << seed << ',' << method << ',' << s << ',' << t << ','
              << mat.tr_asr[s * mat.n + t] << ',' << mat.ir_asr[s * mat.n + t] << ','
              << mat.cell(s, t) << '\n';
    }
  }

  write_text(join_path(cfg.out, "transfer.csv"), csv.str());
  write_report(cfg, join_path(cfg.out, "transfer_report.json"), std::move(body));
}

void cmd_ablate(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out);
  PairedDataset ds = load_dataset(cfg.resolved_data_path());
  ModelBundle models = load_models(cfg.resolved_model_path());

  std::vector<double> eps_list =
      cfg.ablate.eps_list.empty() ? default_ablation_eps() : cfg.ablate.eps_list;
  std::vector<int> step_list =
      cfg.ablate.step_list.empty() ? default_ablation_steps() : cfg.ablate.step_list;

  GuidanceSet G = build_guidance(cfg, models, ds);
  std::vector<AblationCell> cells =
      ablation_sweep(models.image, models.text, ds, G, eps_list, step_list,
                     attack_config_of(cfg, false, false), cfg.threads);

  json body;
  std::ostringstream csv;
  csv << "epsilon,steps,tr_r1,ir_r1,mean_r1\n";
  json grid = json::array();
  for (const AblationCell& cell : cells) {
    grid.push_back({{"epsilon", cell.epsilon},
                    {"steps", cell.steps},
                    {"tr_r1", cell.tr_r1},
                    {"ir_r1", cell.ir_r1},
                    {"mean_r1", cell.mean_r1()}});
    csv << cell.epsilon << ',' << cell.steps << ',' << cell.tr_r1 << ','
        << cell.ir_r1 << ',' << cell.mean_r1() << '\n';
  }
  body["grid"] = grid;
  write_text(join_path(cfg.out, "ablation.csv"), csv.str());
  write_report(cfg, join_path(cfg.out, "ablation_report.json"), std::move(body));
}

void cmd_report(const RunConfig& cfg, const std::vector<std::string>& inputs) {
  std::filesystem::create_directories(cfg.out);
  json merged;
  std::ostringstream csv;
  csv << "report,key,value\n";
  for (const std::string& path : inputs) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report '" + path + "'");
    json content = json::parse(in, nullptr, true);
    std::string name = std::filesystem::path(path).stem().string();
    merged[name] = content;
    for (const auto& [k, v] : content.items())
      if (v.is_number())
        csv << name << ',' << k << ',' << v.dump() << '\n';
  }
  json body;
  body["reports"] = merged;
  write_text(join_path(cfg.out, "summary.csv"), csv.str());
  write_report(cfg, join_path(cfg.out, "summary.json"), std::move(body));
}

}  // namespace fga
