#pragma once

#include <cstddef>

#include "uasam/data.hpp"
#include "uasam/mini_sam.hpp"
#include "uasam/rng.hpp"

namespace uasam {

/// Uniform choice among the example's annotator masks; returns the index.
std::size_t sample_annotator(const AnnotatedExample& example, Rng& rng);

struct PromptDraw {
  PromptPoint point;
  /// Set when the mask had no foreground and the image center was used.
  bool fallback = false;
};

/// Uniform draw over the foreground pixels of an [S, S] mask.
PromptDraw sample_prompt_point(const Tensor& mask, Rng& rng);

/// Draw from the union of the example's annotator masks, so the prompt does
/// not reveal which annotator's mask is the target.
PromptDraw sample_prompt_point(const AnnotatedExample& example, Rng& rng);

}  // namespace uasam
