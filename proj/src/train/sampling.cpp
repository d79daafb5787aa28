#include "uasam/sampling.hpp"

#include <vector>

namespace uasam {

std::size_t sample_annotator(const AnnotatedExample& example, Rng& rng) {
  if (example.masks.empty()) throw DataError("example " + example.id + " has no masks to sample from");
  return static_cast<std::size_t>(rng.below(example.masks.size()));
}

PromptDraw sample_prompt_point(const Tensor& mask, Rng& rng) {
  if (mask.rank() != 2) throw ShapeError("sample_prompt_point: expected [S, S] mask, got " + shape_str(mask.shape()));
  const std::size_t cols = mask.dim(1);
  std::vector<std::size_t> fg;
  auto d = mask.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] != 0.0) fg.push_back(i);
  }
  if (fg.empty()) return {{mask.dim(0) / 2, cols / 2, true}, true};
  const std::size_t idx = fg[rng.below(fg.size())];
  return {{idx / cols, idx % cols, true}, false};
}

PromptDraw sample_prompt_point(const AnnotatedExample& example, Rng& rng) {
  return sample_prompt_point(union_mask(example), rng);
}

}  // namespace uasam
