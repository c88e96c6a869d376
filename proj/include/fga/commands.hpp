#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fga/errors.hpp"

namespace fga {

// Process exit codes for the CLI; each error family gets its own code so
// scripts can branch on failures.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitMissingFile = 3;
inline constexpr int kExitFormat = 4;

struct DataSection {
  std::string source = "synthetic";  // synthetic | cifar10 | file
  std::string path;                  // cifar10 binary or dataset prefix
  int classes = 10;
  int per_class = 20;
  int channels = 3;
  int height = 16;
  int width = 16;
  double noise_sigma = 0.05;
  int captions_per_image = 2;
  int max_records = 1000;  // cifar10 record cap, 0 = all
};

struct ModelSection {
  int embed_dim = 16;
  std::vector<int> image_hidden = {64, 32};
  std::vector<int> text_hidden = {32};
  int token_dim = 16;
  bool normalize = true;
  std::vector<int> fusion_hidden = {32};
  int fused_dim = 16;
};

struct TrainSection {
  int epochs = 300;
  double lr = 0.5;
  double temperature = 0.1;
  int fusion_epochs = 0;
  double fusion_lr = 0.3;
};

struct AttackSection {
  std::string method = "fga";  // fda | fga | fga_l1 | fga_t | fga_t_aug |
                               // mfga_t_aug | fga_patch | fga_targeted_patch
  std::string norm = "inf";
  double epsilon = 2.0 / 255.0;
  int steps = 10;
  double alpha = 0.0;
  double momentum_mu = 1.0;  // applied by momentum methods
  double q_percentile = 90.0;
  std::vector<double> scales = {0.5, 0.75, 1.25, 1.5};  // applied by aug methods
  bool random_start = false;
  std::string guidance = "dataset-texts";  // class-mean | prompt | dataset-texts | topk
  int topk = 5;
  std::string prompt_template = "a photo of a {}";
  int text_budget = 1;
  std::string text_candidates = "synonym-table";  // synonym-table | embedding-knn
  int knn_k = 5;
  double patch_area = 0.02;
  int patch_steps = 100;
  double patch_alpha = 8.0 / 255.0;
  int target = -1;  // targeted patch class; -1 draws a wrong class per example
};

struct EvalSection {
  std::vector<int> ks = {1, 5, 10};
  std::string adv_images;  // optional adversarial tensor file
};

struct AblateSection {
  std::vector<double> eps_list;  // empty -> paper grid
  std::vector<int> step_list;    // empty -> paper grid
};

struct TransferSection {
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<std::string> methods = {"fga_t", "fga_t_aug", "mfga_t_aug"};
  int models = 2;
};

struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out = "out";
  std::string data_path;   // defaults to <out>/dataset
  std::string model_path;  // defaults to <out>/model.fgat
  DataSection data;
  ModelSection model;
  TrainSection train;
  AttackSection attack;
  EvalSection eval;
  AblateSection ablate;
  TransferSection transfer;

  static RunConfig from_json_text(const std::string& text,
                                  const std::string& source_name);
  static RunConfig from_json_file(const std::string& path);
  std::string to_json_text() const;  // resolved config echo; lossless round trip
  std::string config_hash() const;   // fnv1a-64 hex of the echo

  std::string resolved_data_path() const;
  std::string resolved_model_path() const;
};

void cmd_gen_data(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_attack(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);
void cmd_transfer(const RunConfig& cfg);
void cmd_ablate(const RunConfig& cfg);
void cmd_report(const RunConfig& cfg, const std::vector<std::string>& inputs);

int exit_code_for(const Error& e);

}  // namespace fga
