#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "uasam/data.hpp"
#include "uasam/metrics.hpp"
#include "uasam/model.hpp"
#include "uasam/optimizer.hpp"

namespace uasam {

struct LossConfig {
  /// Weight of the KL term.
  double beta = 1.0;
  double dice_weight = 1.0;
  double ce_weight = 1.0;
  double epsilon_dice = 1e-5;

  void validate() const;
};

/// dice_weight * (1 - softDice(sigmoid(logits), target)) + ce_weight * BCE,
/// each computed per example and averaged over the batch. logits and target
/// are [B, S, S]; target must be binary.
Tensor dice_ce_loss(const Tensor& logits, const Tensor& target, const LossConfig& cfg);

/// A training batch: images [B, 1, S, S], one chosen mask per example
/// [B, S, S], and one prompt per example.
struct Batch {
  Tensor images;
  Tensor masks;
  std::vector<PromptPoint> prompts;
};

/// For the example indices given: the annotator is drawn uniformly, the
/// prompt from the union of the annotator masks. With `fused` the target is
/// the majority vote of the annotators instead of a drawn one.
Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, Rng& rng, bool fused,
                 TieRule tie = TieRule::kBackground);

struct ElboParts {
  Tensor loss;
  double recon = 0;
  double kl = 0;
};

/// recon(S(X, z), Y) + beta * KL(Q || P) with z drawn from the posterior.
/// Latent-free models reduce to the reconstruction term.
ElboParts elbo_loss(const UaSamModel& model, const Batch& batch, const LossConfig& cfg, Rng& rng);
/// Same, with caller-supplied standard normal noise eps [B, C].
ElboParts elbo_loss_with_noise(const UaSamModel& model, const Batch& batch, const LossConfig& cfg, const Tensor& eps);

enum class Stage { kPretrain, kFinetune };
std::string to_string(Stage stage);
Stage parse_stage(const std::string& name);

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  double pretrain_lr = 1e-3;
  double finetune_lr = 1e-4;
  /// StepLR period in epochs and its factor.
  std::size_t decay_epochs = 10;
  double decay_factor = 0.5;
  std::size_t patience = 10;
  /// Fraction of the training set held out for validation.
  double val_fraction = 0.1;
  /// Seed of the validation split and validation sampling; shared by both
  /// stages so their validation scores are comparable.
  std::uint64_t val_seed = 7;
  std::size_t val_samples = 4;

  void validate() const;
};

struct TrainState {
  Stage stage = Stage::kPretrain;
  std::size_t epoch = 0;
  std::size_t step = 0;
  double best_val_dice = -1;
  std::size_t best_epoch = 0;
  std::size_t patience_counter = 0;
};

struct MetricsRow {
  std::size_t epoch = 0;
  Stage stage = Stage::kPretrain;
  double loss = 0;
  double recon = 0;
  double kl = 0;
  double val_dice = 0;
  double lr = 0;
};

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

struct StageOptions {
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  TieRule tie = TieRule::kBackground;
  std::uint64_t seed = 42;
  /// Directory receiving best.ckpt, final.ckpt and metrics.csv.
  std::string out_dir;
  /// Stage-1 checkpoint; required for finetune.
  std::string from_checkpoint;
  /// Stored verbatim in checkpoint metadata.
  nlohmann::json run_config = nlohmann::json::object();
  bool verbose = false;
};

struct StageResult {
  TrainState state;
  std::vector<MetricsRow> rows;
  std::string best_checkpoint;
  std::string final_checkpoint;
  std::string metrics_csv;
};

/// Holds out a validation split from `train` (TrainConfig::val_fraction,
/// val_seed), then trains. Epoch 0 is a validation-only row. Early stopping
/// keeps the checkpoint with the best validation majority-vote Dice.
StageResult run_stage(Stage stage, const Dataset& train, const StageOptions& options);

/// Splits off the validation examples exactly as run_stage does.
std::pair<Dataset, Dataset> validation_split(const Dataset& train, const TrainConfig& cfg);

/// Builds the Stage-2 model and loads the Stage-1 backbone into it (frozen).
std::unique_ptr<UaSamModel> finetune_model(const ModelConfig& config, std::uint64_t seed,
                                           const std::string& stage1_checkpoint);

/// Rebuilds a model from any checkpoint written by run_stage.
std::unique_ptr<UaSamModel> load_model(const std::string& checkpoint);

/// One optimizer step on a batch; returns the loss parts.
ElboParts train_step(UaSamModel& model, OptimizerState& opt, const Batch& batch, const LossConfig& cfg, Rng& rng);

}  // namespace uasam
