#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fga/commands.hpp"

namespace {

struct CommonArgs {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  int threads = 0;
  bool seed_set = false;
  bool threads_set = false;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config, "JSON run configuration");
  sub->add_option("--out", args.out, "output directory (overrides config)");
  sub->add_option("--seed", args.seed, "master seed (overrides config)")
      ->each([&args](const std::string&) { args.seed_set = true; });
  sub->add_option("--threads", args.threads,
                  "worker threads; must not affect results")
      ->each([&args](const std::string&) { args.threads_set = true; });
}

fga::RunConfig resolve(const CommonArgs& args) {
  fga::RunConfig cfg = args.config.empty()
                           ? fga::RunConfig{}
                           : fga::RunConfig::from_json_file(args.config);
  if (!args.out.empty()) cfg.out = args.out;
  if (args.seed_set) cfg.seed = args.seed;
  if (args.threads_set) cfg.threads = args.threads;
  if (cfg.threads < 1) cfg.threads = 1;
  return cfg;
}

int error_record(const fga::Error& e) {
  int code = fga::exit_code_for(e);
  nlohmann::json err;
  err["error"]["message"] = e.what();
  err["error"]["exit_code"] = code;
  std::cerr << err.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"feature-guidance adversarial attack toolkit"};
  app.require_subcommand(1);

  CommonArgs args;
  std::vector<std::string> report_inputs;

  CLI::App* gen = app.add_subcommand("gen-data", "generate or ingest a dataset");
  add_common(gen, args);
  CLI::App* train = app.add_subcommand("train", "train contrastive encoders");
  add_common(train, args);
  CLI::App* attack = app.add_subcommand("attack", "craft adversarial examples");
  add_common(attack, args);
  CLI::App* eval = app.add_subcommand("eval", "score clean/adversarial metrics");
  add_common(eval, args);
  CLI::App* transfer = app.add_subcommand("transfer", "source/target transfer study");
  add_common(transfer, args);
  CLI::App* ablate = app.add_subcommand("ablate", "budget and iteration sweep");
  add_common(ablate, args);
  CLI::App* report = app.add_subcommand("report", "merge report files");
  add_common(report, args);
  report->add_option("inputs", report_inputs, "report JSON files to merge");

  CLI11_PARSE(app, argc, argv);

  try {
    fga::RunConfig cfg = resolve(args);
    if (gen->parsed()) fga::cmd_gen_data(cfg);
    if (train->parsed()) fga::cmd_train(cfg);
    if (attack->parsed()) fga::cmd_attack(cfg);
    if (eval->parsed()) fga::cmd_eval(cfg);
    if (transfer->parsed()) fga::cmd_transfer(cfg);
    if (ablate->parsed()) fga::cmd_ablate(cfg);
    if (report->parsed()) fga::cmd_report(cfg, report_inputs);
  } catch (const fga::Error& e) {
    return error_record(e);
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["error"]["message"] = e.what();
    err["error"]["exit_code"] = fga::kExitRuntime;
    std::cerr << err.dump() << "\n";
    return fga::kExitRuntime;
  }
  return fga::kExitOk;
}
