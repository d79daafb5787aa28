#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "uasam/data.hpp"
#include "uasam/metrics.hpp"
#include "uasam/model.hpp"
#include "uasam/training.hpp"

namespace uasam {

struct EvalConfig {
  std::size_t k_samples = 4;
  TieRule tie = TieRule::kBackground;
};

/// Everything a CLI run needs. Every field has a default.
struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  SynthConfig synth;
  EvalConfig eval;
  std::uint64_t seed = 42;
  std::string out = "out";
  /// Train share of the train/test split applied by `generate`.
  double split_ratio = 0.8;
  std::vector<std::size_t> sweep_dims = {2, 4, 6, 8};
  std::vector<std::string> ablation_modes = {"z", "p", "wms", "cmsm"};
  /// KL weights tried by the ablation runner for modes with a latent.
  std::vector<double> ablation_betas = {0.1, 1.0, 10.0};

  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Rejects unknown keys and wrongly typed values, naming the dotted key.
RunConfig run_config_from_json(const nlohmann::json& doc);

nlohmann::json model_to_json(const ModelConfig& config);
ModelConfig model_from_json(const nlohmann::json& doc);

/// Reads a JSON config file; an empty path gives the defaults.
nlohmann::json read_config_document(const std::string& path);

/// Applies "a.b.c=value" to a config document. The value is parsed as JSON
/// when possible, otherwise taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace uasam
