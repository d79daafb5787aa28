// uasam: dataset generation, two-stage training, evaluation, ablations,
// sweeps and checkpoint inspection.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "uasam/checkpoint.hpp"
#include "uasam/experiments.hpp"

namespace fs = std::filesystem;
using namespace uasam;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool with_out = true) {
  cmd->add_option("--config", c.config, "JSON run config (defaults when omitted)");
  cmd->add_option("--set", c.overrides, "Override a config field, e.g. --set train.epochs=20");
  cmd->add_option("--seed", c.seed, "Run seed (falls back to $UASAM_SEED, then the config)");
  if (with_out) cmd->add_option("--out", c.out, "Output directory (default: config 'out')");
}

std::string env_seed() {
  const char* v = std::getenv("UASAM_SEED");
  return v ? v : "";
}

RunConfig resolve(const Common& c, nlohmann::json extra = nlohmann::json::object(), const char* seed_key = "seed") {
  nlohmann::json doc = read_config_document(c.config);
  for (const auto& o : c.overrides) apply_override(doc, o);
  for (auto it = extra.begin(); it != extra.end(); ++it) apply_override(doc, it.key() + "=" + it.value().dump());
  const std::string seed = c.seed.empty() ? env_seed() : c.seed;
  if (!seed.empty()) {
    try {
      apply_override(doc, std::string(seed_key) + "=" + std::to_string(std::stoull(seed)));
    } catch (const std::logic_error&) {
      throw ConfigError("seed '" + seed + "' is not a non-negative integer");
    }
  }
  RunConfig cfg = run_config_from_json(doc);
  if (!c.out.empty()) cfg.out = c.out;
  return cfg;
}

void echo_config(const RunConfig& cfg) {
  fs::create_directories(cfg.out);
  std::ofstream out(fs::path(cfg.out) / "config.json");
  out << to_json(cfg).dump(2) << "\n";
  if (!out) throw Error("cannot write " + (fs::path(cfg.out) / "config.json").string());
}

std::vector<std::size_t> parse_dims(const std::string& text) {
  std::vector<std::size_t> dims;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(item, &used);
      if (used != item.size() || v == 0) throw std::invalid_argument(item);
      dims.push_back(v);
    } catch (const std::logic_error&) {
      throw ConfigError("--dims: '" + item + "' is not a positive integer");
    }
  }
  if (dims.empty()) throw ConfigError("--dims: empty list");
  return dims;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Uncertainty-aware adapters on a desk-scale segment-anything model"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  Common gen_c;
  auto* gen = app.add_subcommand("generate", "Write a synthetic multi-annotator dataset (train/ and test/ manifests)");
  add_common(gen, gen_c);

  Common train_c;
  std::string stage = "pretrain", manifest, from, mode;
  bool verbose = false;
  auto* train = app.add_subcommand("train", "Run Stage 1 (pretrain) or Stage 2 (finetune)");
  add_common(train, train_c);
  train->add_option("--stage", stage, "pretrain | finetune")->check(CLI::IsMember({"pretrain", "finetune"}));
  train->add_option("--manifest", manifest, "Training manifest")->required();
  train->add_option("--from", from, "Stage-1 checkpoint (required for finetune)");
  train->add_option("--mode", mode, "Adapter mode: adapter | z | p | wms | cmsm (default: config)");
  train->add_flag("--verbose", verbose, "Log every epoch to stderr");

  Common eval_c;
  std::string eval_ckpt, eval_manifest;
  std::size_t k_samples = 4;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint; writes eval.csv");
  add_common(eval, eval_c);
  eval->add_option("--from,--checkpoint", eval_ckpt, "Checkpoint to evaluate")->required();
  eval->add_option("--manifest", eval_manifest, "Test manifest")->required();
  eval->add_option("--k-samples", k_samples, "Latent samples per image fused by majority vote");

  Common abl_c;
  std::string abl_manifest, abl_test, abl_from, abl_modes;
  auto* ablate = app.add_subcommand("ablate", "Fine-tune and evaluate each adapter mode; writes ablation.csv");
  add_common(ablate, abl_c);
  ablate->add_option("--manifest", abl_manifest, "Training manifest")->required();
  ablate->add_option("--test-manifest", abl_test, "Test manifest")->required();
  ablate->add_option("--from", abl_from, "Stage-1 checkpoint (trained first when omitted)");
  ablate->add_option("--mode", abl_modes, "Comma-separated modes (default: config ablation.modes)");
  ablate->add_flag("--verbose", verbose, "Log every epoch to stderr");

  Common sw_c;
  std::string sw_manifest, sw_test, sw_from, sw_dims;
  auto* sweep = app.add_subcommand("sweep", "Fine-tune and evaluate per latent dimension; writes sweep.csv");
  add_common(sweep, sw_c);
  sweep->add_option("--manifest", sw_manifest, "Training manifest")->required();
  sweep->add_option("--test-manifest", sw_test, "Test manifest")->required();
  sweep->add_option("--from", sw_from, "Stage-1 checkpoint (trained first when omitted)");
  sweep->add_option("--dims", sw_dims, "Comma-separated latent dimensions (default: config sweep.dims)");
  sweep->add_flag("--verbose", verbose, "Log every epoch to stderr");

  std::string inspect_ckpt;
  auto* inspect = app.add_subcommand("inspect", "Print checkpoint metadata and parameter counts");
  inspect->add_option("checkpoint", inspect_ckpt, "Checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (*gen) {
    RunConfig cfg = resolve(gen_c, nlohmann::json::object(), "synth.seed");
    echo_config(cfg);
    Dataset data = generate(cfg.synth);
    auto [tr, te] = split(data, cfg.split_ratio, cfg.synth.seed);
    const auto train_manifest = write_dataset((fs::path(cfg.out) / "train").string(), tr);
    const auto test_manifest = write_dataset((fs::path(cfg.out) / "test").string(), te);
    std::cout << "train_manifest=" << train_manifest << " (" << tr.size() << " examples)\n"
              << "test_manifest=" << test_manifest << " (" << te.size() << " examples)\n";
    return kOk;
  }
  if (*train) {
    nlohmann::json extra = nlohmann::json::object();
    if (!mode.empty()) extra["adapter.mode"] = mode;
    RunConfig cfg = resolve(train_c, extra);
    const Stage st = parse_stage(stage);
    if (st == Stage::kFinetune && from.empty()) throw ConfigError("train --stage finetune requires --from <checkpoint>");
    echo_config(cfg);
    Dataset data = load_manifest(manifest);
    auto opts = stage_options(cfg, cfg.out, from);
    opts.verbose = verbose;
    auto result = run_stage(st, data, opts);
    std::cout << "best_checkpoint=" << result.best_checkpoint << " best_val_dice=" << csv_number(result.state.best_val_dice)
              << " epochs=" << result.state.epoch << "\nmetrics=" << result.metrics_csv << "\n";
    return kOk;
  }
  if (*eval) {
    nlohmann::json extra = nlohmann::json::object();
    if (eval->count("--k-samples") > 0) extra["eval.k_samples"] = k_samples;
    RunConfig cfg = resolve(eval_c, extra);
    echo_config(cfg);
    auto model = load_model(eval_ckpt);
    Dataset data = load_manifest(eval_manifest);
    auto report = evaluate(*model, data, {cfg.eval.k_samples, cfg.seed, cfg.eval.tie});
    write_eval_csv((fs::path(cfg.out) / "eval.csv").string(), report);
    std::cout << "mean_dice=" << csv_number(report.mean_dice) << " diversity=" << csv_number(report.diversity)
              << " K=" << report.k << "\n";
    return kOk;
  }
  if (*ablate) {
    nlohmann::json extra = nlohmann::json::object();
    if (!abl_modes.empty()) extra["ablation.modes"] = split_list(abl_modes);
    RunConfig cfg = resolve(abl_c, extra);
    echo_config(cfg);
    Dataset tr = load_manifest(abl_manifest), te = load_manifest(abl_test);
    auto rows = run_ablation_grid(tr, te, cfg, abl_from, cfg.out, verbose);
    const auto path = (fs::path(cfg.out) / "ablation.csv").string();
    write_ablation_csv(path, rows);
    for (const auto& r : rows) std::cout << r.mode << " dice=" << csv_number(r.dice) << " diversity=" << csv_number(r.diversity) << "\n";
    std::cout << "ablation=" << path << "\n";
    return kOk;
  }
  if (*sweep) {
    nlohmann::json extra = nlohmann::json::object();
    if (!sw_dims.empty()) extra["sweep.dims"] = parse_dims(sw_dims);
    RunConfig cfg = resolve(sw_c, extra);
    echo_config(cfg);
    Dataset tr = load_manifest(sw_manifest), te = load_manifest(sw_test);
    auto rows = latent_dim_sweep(cfg.sweep_dims, tr, te, cfg, sw_from, cfg.out, verbose);
    const auto path = (fs::path(cfg.out) / "sweep.csv").string();
    write_sweep_csv(path, rows);
    for (const auto& r : rows) std::cout << "latent_dim=" << r.latent_dim << " dice=" << csv_number(r.dice) << "\n";
    std::cout << "sweep=" << path << "\n";
    return kOk;
  }
  if (*inspect) {
    if (!fs::exists(inspect_ckpt)) throw MissingFileError(inspect_ckpt);
    auto contents = load_checkpoint(inspect_ckpt);
    auto model = load_model(inspect_ckpt);
    auto counts = count_parameters(model->store());
    nlohmann::json by_prefix(counts.by_prefix);
    nlohmann::json meta = contents.meta;
    meta.erase("run_config");
    std::cout << "meta " << meta.dump() << "\n"
              << "params total=" << counts.total << " trainable=" << counts.trainable << " frozen=" << counts.frozen
              << "\nby_prefix " << by_prefix.dump() << "\nbackbone_checksum=" << std::hex
              << params_checksum(model->store(), kBackbonePrefix) << std::dec << "\n";
    return kOk;
  }
  return kUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
}
