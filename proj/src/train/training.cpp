#include "uasam/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "uasam/checkpoint.hpp"
#include "uasam/config.hpp"
#include "uasam/sampling.hpp"

namespace uasam {

namespace fs = std::filesystem;

void LossConfig::validate() const {
  for (double w : {beta, dice_weight, ce_weight, epsilon_dice}) {
    if (!std::isfinite(w) || w < 0) throw ConfigError("loss weights must be finite and non-negative");
  }
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(pretrain_lr > 0) || !(finetune_lr > 0)) throw ConfigError("learning rates must be positive");
  if (decay_epochs == 0) throw ConfigError("train.decay_epochs must be positive");
  if (!(decay_factor > 0 && decay_factor <= 1)) throw ConfigError("train.decay_factor must lie in (0, 1]");
  if (patience == 0) throw ConfigError("train.patience must be positive");
  if (!(val_fraction > 0 && val_fraction < 1)) throw ConfigError("train.val_fraction must lie in (0, 1)");
  if (val_samples == 0) throw ConfigError("train.val_samples must be positive");
}

std::string to_string(Stage stage) { return stage == Stage::kPretrain ? "pretrain" : "finetune"; }

Stage parse_stage(const std::string& name) {
  if (name == "pretrain") return Stage::kPretrain;
  if (name == "finetune") return Stage::kFinetune;
  throw ConfigError("unknown stage '" + name + "' (expected pretrain or finetune)");
}

Tensor dice_ce_loss(const Tensor& logits, const Tensor& target, const LossConfig& cfg) {
  if (logits.rank() != 3 || logits.shape() != target.shape()) {
    throw ShapeError("dice_ce_loss: logits " + shape_str(logits.shape()) + " and target " +
                     shape_str(target.shape()) + " must both be [B, S, S]");
  }
  for (double v : target.data()) {
    if (v != 0.0 && v != 1.0) throw DataError("dice_ce_loss: target is not binary (found " + std::to_string(v) + ")");
  }
  const std::size_t b = logits.dim(0), n = logits.dim(1) * logits.dim(2);
  Tensor p = ops::reshape(ops::sigmoid(logits), {b, n});
  Tensor t = ops::reshape(target, {b, n});
  Tensor inter = ops::sum_axis(ops::mul(p, t), 1, false);
  Tensor denom = ops::add(ops::sum_axis(p, 1, false), ops::sum_axis(t, 1, false));
  Tensor soft_dice =
      ops::div(ops::add_scalar(ops::scale(inter, 2.0), cfg.epsilon_dice), ops::add_scalar(denom, cfg.epsilon_dice));
  Tensor dice_loss = ops::mean(ops::add_scalar(ops::neg(soft_dice), 1.0));
  Tensor ce = ops::mean(ops::bce_with_logits(logits, target));
  return ops::add(ops::scale(dice_loss, cfg.dice_weight), ops::scale(ce, cfg.ce_weight));
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, Rng& rng, bool fused, TieRule tie) {
  if (indices.empty()) throw DataError("make_batch: no examples");
  const std::size_t s = data.at(indices.front()).size(), b = indices.size();
  std::vector<double> images, masks;
  images.reserve(b * s * s);
  masks.reserve(b * s * s);
  Batch batch;
  for (std::size_t idx : indices) {
    const auto& ex = data.at(idx);
    if (ex.size() != s) throw ShapeMismatchError("make_batch: example " + ex.id + " has a different image size");
    const Tensor target = fused ? majority_vote(ex.masks, tie) : ex.masks[sample_annotator(ex, rng)];
    batch.prompts.push_back(sample_prompt_point(ex, rng).point);
    auto img = ex.image.data();
    auto m = target.data();
    images.insert(images.end(), img.begin(), img.end());
    masks.insert(masks.end(), m.begin(), m.end());
  }
  batch.images = Tensor({b, 1, s, s}, std::move(images));
  batch.masks = Tensor({b, s, s}, std::move(masks));
  return batch;
}

ElboParts elbo_loss_with_noise(const UaSamModel& model, const Batch& batch, const LossConfig& cfg, const Tensor& eps) {
  Tensor prompt = model.sam().encode_prompts(batch.prompts);
  ElboParts parts;
  if (!model.stochastic()) {
    parts.loss = dice_ce_loss(model.logits(batch.images, prompt), batch.masks, cfg);
    parts.recon = parts.loss.item();
    return parts;
  }
  const std::size_t b = batch.masks.dim(0), s = batch.masks.dim(1);
  LatentGaussian q = model.latent()->posterior(batch.images, ops::reshape(batch.masks, {b, 1, s, s}));
  LatentGaussian p = model.latent()->prior(batch.images);
  Tensor z = sample_with_noise(q, eps);
  Tensor recon = dice_ce_loss(model.logits(batch.images, prompt, &z), batch.masks, cfg);
  Tensor kl = kl_divergence(q, p);
  parts.recon = recon.item();
  parts.kl = kl.item();
  parts.loss = cfg.beta == 0.0 ? recon : ops::add(recon, ops::scale(kl, cfg.beta));
  return parts;
}

ElboParts elbo_loss(const UaSamModel& model, const Batch& batch, const LossConfig& cfg, Rng& rng) {
  Tensor eps;
  if (model.stochastic()) {
    std::vector<double> e(batch.masks.dim(0) * model.latent()->config().latent_dim);
    for (auto& v : e) v = rng.normal();
    eps = Tensor({batch.masks.dim(0), model.latent()->config().latent_dim}, std::move(e));
  }
  return elbo_loss_with_noise(model, batch, cfg, eps);
}

ElboParts train_step(UaSamModel& model, OptimizerState& opt, const Batch& batch, const LossConfig& cfg, Rng& rng) {
  model.store().zero_grad();
  ElboParts parts = elbo_loss(model, batch, cfg, rng);
  if (!std::isfinite(parts.loss.item())) throw NumericError("train_step: non-finite loss");
  backward(parts.loss);
  adam_step(model.store(), opt);
  return parts;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "epoch,stage,loss,recon,kl,val_dice,lr\n";
  for (const auto& r : rows) {
    out << r.epoch << "," << to_string(r.stage) << ",";
    // Epoch 0 is a validation-only row.
    if (r.epoch == 0) {
      out << ",,";
    } else {
      out << csv_number(r.loss) << "," << csv_number(r.recon) << "," << csv_number(r.kl);
    }
    char lr[32];
    std::snprintf(lr, sizeof lr, "%.6e", r.lr);
    out << "," << csv_number(r.val_dice) << "," << lr << "\n";
  }
  if (!out) throw Error("write failed: " + path);
}

std::pair<Dataset, Dataset> validation_split(const Dataset& train, const TrainConfig& cfg) {
  if (train.size() < 2) throw DataError("training set needs at least 2 examples to hold out validation");
  return split(train, 1.0 - cfg.val_fraction, cfg.val_seed);
}

std::unique_ptr<UaSamModel> finetune_model(const ModelConfig& config, std::uint64_t seed,
                                           const std::string& stage1_checkpoint) {
  if (stage1_checkpoint.empty()) throw ConfigError("finetune requires a Stage-1 checkpoint (--from)");
  if (!fs::exists(stage1_checkpoint)) throw MissingFileError(stage1_checkpoint);
  CheckpointContents contents = load_checkpoint(stage1_checkpoint);
  if (contents.meta.value("stage", "") != "pretrain") {
    throw CheckpointError(stage1_checkpoint + " is not a Stage-1 (pretrain) checkpoint");
  }
  ModelConfig mc = config;
  mc.with_adapters = true;
  if (contents.meta.contains("model")) {
    const auto stored = contents.meta["model"].at("backbone");
    if (stored != model_to_json(mc).at("backbone")) {
      throw ConfigError("backbone config differs from the Stage-1 checkpoint: " + stored.dump());
    }
  }
  auto model = std::make_unique<UaSamModel>(mc, seed);
  restore_prefix(model->store(), contents, kBackbonePrefix);
  freeze_backbone(model->store());
  return model;
}

std::unique_ptr<UaSamModel> load_model(const std::string& checkpoint) {
  if (!fs::exists(checkpoint)) throw MissingFileError(checkpoint);
  CheckpointContents contents = load_checkpoint(checkpoint);
  if (!contents.meta.contains("model")) throw CheckpointError(checkpoint + ": no model config in metadata");
  ModelConfig mc = model_from_json(contents.meta["model"]);
  auto model = std::make_unique<UaSamModel>(mc, contents.meta.value("seed", std::uint64_t{0}));
  restore_params(model->store(), contents);
  return model;
}

StageResult run_stage(Stage stage, const Dataset& train, const StageOptions& options) {
  const TrainConfig& tc = options.train;
  tc.validate();
  options.loss.validate();
  if (train.empty()) throw DataError("run_stage: empty training set");
  if (options.out_dir.empty()) throw ConfigError("run_stage: no output directory");
  fs::create_directories(options.out_dir);
  auto [fit, val] = validation_split(train, tc);

  std::unique_ptr<UaSamModel> model;
  ModelConfig mc = options.model;
  if (stage == Stage::kPretrain) {
    mc.with_adapters = false;
    model = std::make_unique<UaSamModel>(mc, options.seed);
  } else {
    mc.with_adapters = true;
    model = finetune_model(mc, options.seed, options.from_checkpoint);
  }

  const std::size_t steps_per_epoch = (fit.size() + tc.batch_size - 1) / tc.batch_size;
  AdamConfig ac;
  ac.learning_rate = stage == Stage::kPretrain ? tc.pretrain_lr : tc.finetune_lr;
  ac.decay_every = tc.decay_epochs * steps_per_epoch;
  ac.decay_factor = tc.decay_factor;
  OptimizerState opt = OptimizerState::from_config(ac);

  const EvalOptions val_opts{tc.val_samples, tc.val_seed, options.tie};
  Rng rng = Rng::derive(options.seed, stage == Stage::kPretrain ? 101 : 102);

  StageResult result;
  result.state.stage = stage;
  result.best_checkpoint = (fs::path(options.out_dir) / "best.ckpt").string();
  result.final_checkpoint = (fs::path(options.out_dir) / "final.ckpt").string();
  result.metrics_csv = (fs::path(options.out_dir) / "metrics.csv").string();

  auto meta = [&](double val_dice) {
    return nlohmann::json{{"stage", to_string(stage)},
                          {"epoch", result.state.epoch},
                          {"step", result.state.step},
                          {"val_dice", val_dice},
                          {"seed", options.seed},
                          {"model", model_to_json(mc)},
                          {"run_config", options.run_config}};
  };
  auto validate_and_track = [&](MetricsRow row) {
    row.val_dice = evaluate(*model, val, val_opts).mean_dice;
    row.lr = opt.learning_rate;
    result.rows.push_back(row);
    if (options.verbose) {
      std::cerr << to_string(stage) << " epoch " << row.epoch << " loss " << row.loss << " recon " << row.recon
                << " kl " << row.kl << " val_dice " << row.val_dice << "\n";
    }
    if (row.val_dice > result.state.best_val_dice) {
      result.state.best_val_dice = row.val_dice;
      result.state.best_epoch = row.epoch;
      result.state.patience_counter = 0;
      save_checkpoint(result.best_checkpoint, model->store(), nullptr, meta(row.val_dice));
    } else {
      ++result.state.patience_counter;
    }
  };

  validate_and_track({0, stage, 0, 0, 0, 0, 0});
  std::vector<std::size_t> order(fit.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    result.state.epoch = epoch;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double loss = 0, recon = 0, kl = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      Batch batch = make_batch(fit, idx, rng, stage == Stage::kPretrain, options.tie);
      ElboParts parts;
      try {
        parts = train_step(*model, opt, batch, options.loss, rng);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (" + to_string(stage) + " epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(result.state.step + 1) + ")");
      }
      ++result.state.step;
      const double w = static_cast<double>(idx.size());
      loss += parts.loss.item() * w;
      recon += parts.recon * w;
      kl += parts.kl * w;
    }
    const double n = static_cast<double>(order.size());
    validate_and_track({epoch, stage, loss / n, recon / n, kl / n, 0, 0});
    if (result.state.patience_counter >= tc.patience) break;
  }

  save_checkpoint(result.final_checkpoint, model->store(), &opt, meta(result.rows.back().val_dice));
  write_metrics_csv(result.metrics_csv, result.rows);
  return result;
}

}  // namespace uasam
