#pragma once

#include <string>
#include <vector>

#include "uasam/config.hpp"

namespace uasam {

struct AblationRow {
  /// The mode name, suffixed "@beta=<b>" when several KL weights are swept.
  std::string mode;
  double beta = 0;
  double dice = 0;
  double diversity = 0;
};

struct SweepRow {
  std::size_t latent_dim = 0;
  double dice = 0;
};

/// Runs Stage 1 into `<out_dir>/stage1` unless `stage1_checkpoint` is given;
/// returns the checkpoint to fine-tune from.
std::string ensure_stage1(const Dataset& train, const RunConfig& config, const std::string& stage1_checkpoint,
                          const std::string& out_dir, bool verbose = false);

/// Fine-tunes config.ablation_modes from one Stage-1 checkpoint with identical
/// seeds and settings apart from the adapter mode, then evaluates each best
/// checkpoint on `test`. Modes with a latent are run once per entry of
/// config.ablation_betas; the others once, at config.loss.beta.
std::vector<AblationRow> run_ablation_grid(const Dataset& train, const Dataset& test, const RunConfig& config,
                                           const std::string& stage1_checkpoint, const std::string& out_dir,
                                           bool verbose = false);

/// Fine-tunes and evaluates one model per latent dimension.
std::vector<SweepRow> latent_dim_sweep(const std::vector<std::size_t>& dims, const Dataset& train,
                                       const Dataset& test, const RunConfig& config,
                                       const std::string& stage1_checkpoint, const std::string& out_dir,
                                       bool verbose = false);

/// Header: mode,dice,diversity
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);
/// Header: latent_dim,dice
void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

/// Stage options for `stage` as configured by `config`.
StageOptions stage_options(const RunConfig& config, const std::string& out_dir, const std::string& from = "");

}  // namespace uasam
