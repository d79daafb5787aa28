#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "uasam/data.hpp"
#include "uasam/model.hpp"

namespace uasam {

/// Resolution of an exact half/half split in a majority vote.
enum class TieRule { kBackground, kForeground };

std::string to_string(TieRule rule);
TieRule parse_tie_rule(const std::string& name);

/// 2|a & b| / (|a| + |b|); 1 when both masks are empty.
double dice(const Tensor& a, const Tensor& b);

/// Foreground iff more than half of the masks vote foreground; an exact tie
/// (even n) follows `tie`.
Tensor majority_vote(std::span<const Tensor> masks, TieRule tie = TieRule::kBackground);

/// Mean pairwise 1 - Dice; 0 for fewer than two samples.
double diversity(std::span<const Tensor> samples);

/// Thresholds sigmoid(logits) > 0.5, i.e. logits > 0. logits [S, S].
Tensor binarize_logits(const Tensor& logits);

struct SampleSet {
  std::vector<Tensor> samples;
  Tensor fused;
};

/// K binarized predictions for one example, each from its own prior draw
/// (a single deterministic prediction repeated K times for latent-free models).
SampleSet predict_samples(const UaSamModel& model, const AnnotatedExample& example, const PromptPoint& prompt,
                          std::size_t k, Rng& rng, TieRule tie = TieRule::kBackground);

struct ExampleScore {
  std::string id;
  double dice = 0;
  double diversity = 0;
};

struct EvalReport {
  double mean_dice = 0;
  double diversity = 0;
  std::size_t k = 0;
  std::vector<ExampleScore> per_example;
  std::string fingerprint;
};

struct EvalOptions {
  std::size_t k = 4;
  std::uint64_t seed = 0;
  TieRule tie = TieRule::kBackground;
};

/// Example i uses Rng::derive(seed, i): first the prompt point, then K prior
/// draws. The fused prediction is scored against the fused annotator masks.
EvalReport evaluate(const UaSamModel& model, const Dataset& data, const EvalOptions& options);

/// Header: example_id,dice,diversity
void write_eval_csv(const std::string& path, const EvalReport& report);

struct ParamCounts {
  std::size_t total = 0;
  std::size_t trainable = 0;
  std::size_t frozen = 0;
  /// Keyed by the first path component ("sam", "adapter", ...).
  std::map<std::string, std::size_t> by_prefix;
};

ParamCounts count_parameters(const ParamStore& store);

/// Fixed-precision CSV field.
std::string csv_number(double v);

}  // namespace uasam
