#include "uasam/experiments.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace uasam {

namespace fs = std::filesystem;

StageOptions stage_options(const RunConfig& config, const std::string& out_dir, const std::string& from) {
  StageOptions o;
  o.model = config.model;
  o.loss = config.loss;
  o.train = config.train;
  o.tie = config.eval.tie;
  o.seed = config.seed;
  o.out_dir = out_dir;
  o.from_checkpoint = from;
  o.run_config = to_json(config);
  return o;
}

std::string ensure_stage1(const Dataset& train, const RunConfig& config, const std::string& stage1_checkpoint,
                          const std::string& out_dir, bool verbose) {
  if (!stage1_checkpoint.empty()) return stage1_checkpoint;
  auto opts = stage_options(config, (fs::path(out_dir) / "stage1").string());
  opts.verbose = verbose;
  return run_stage(Stage::kPretrain, train, opts).best_checkpoint;
}

namespace {

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

EvalReport finetune_and_evaluate(const Dataset& train, const Dataset& test, const RunConfig& config,
                                 const std::string& from, const std::string& dir, bool verbose) {
  auto opts = stage_options(config, dir, from);
  opts.verbose = verbose;
  auto result = run_stage(Stage::kFinetune, train, opts);
  auto model = load_model(result.best_checkpoint);
  return evaluate(*model, test, {config.eval.k_samples, config.seed, config.eval.tie});
}

}  // namespace

std::vector<AblationRow> run_ablation_grid(const Dataset& train, const Dataset& test, const RunConfig& config,
                                           const std::string& stage1_checkpoint, const std::string& out_dir,
                                           bool verbose) {
  const std::string from = ensure_stage1(train, config, stage1_checkpoint, out_dir, verbose);
  std::vector<AblationRow> rows;
  for (const auto& name : config.ablation_modes) {
    RunConfig c = config;
    c.model.adapter.mode = parse_adapter_mode(name);
    const std::string mode = to_string(c.model.adapter.mode);
    const bool sweep = c.model.adapter.uses_latent() && config.ablation_betas.size() > 1;
    const std::vector<double> betas =
        c.model.adapter.uses_latent() ? config.ablation_betas : std::vector<double>{config.loss.beta};
    for (double beta : betas) {
      c.loss.beta = beta;
      const std::string label = sweep ? mode + "@beta=" + short_number(beta) : mode;
      const std::string dir = sweep ? "mode_" + mode + "_beta" + short_number(beta) : "mode_" + mode;
      auto report = finetune_and_evaluate(train, test, c, from, (fs::path(out_dir) / dir).string(), verbose);
      rows.push_back({label, beta, report.mean_dice, report.diversity});
    }
  }
  return rows;
}

std::vector<SweepRow> latent_dim_sweep(const std::vector<std::size_t>& dims, const Dataset& train,
                                       const Dataset& test, const RunConfig& config,
                                       const std::string& stage1_checkpoint, const std::string& out_dir,
                                       bool verbose) {
  if (dims.empty()) throw ConfigError("latent_dim_sweep: no dimensions given");
  const std::string from = ensure_stage1(train, config, stage1_checkpoint, out_dir, verbose);
  std::vector<SweepRow> rows;
  for (std::size_t d : dims) {
    if (d == 0) throw ConfigError("latent_dim_sweep: dimensions must be at least 1");
    RunConfig c = config;
    c.model.latent.latent_dim = d;
    c.model.adapter.latent_dim = d;
    auto report =
        finetune_and_evaluate(train, test, c, from, (fs::path(out_dir) / ("latent_" + std::to_string(d))).string(),
                              verbose);
    rows.push_back({d, report.mean_dice});
  }
  return rows;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "mode,dice,diversity\n";
  for (const auto& r : rows) out << r.mode << "," << csv_number(r.dice) << "," << csv_number(r.diversity) << "\n";
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "latent_dim,dice\n";
  for (const auto& r : rows) out << r.latent_dim << "," << csv_number(r.dice) << "\n";
}

}  // namespace uasam
