#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "uasam/tensor.hpp"

namespace uasam {

/// One image with M annotator masks. image is [1, S, S] in [0, 1]; every mask
/// is a {0, 1}-valued [S, S] tensor.
struct AnnotatedExample {
  std::string id;
  Tensor image;
  std::vector<Tensor> masks;

  std::size_t size() const { return image.dim(1); }
  /// Throws DataError / ShapeMismatchError naming the example.
  void validate() const;
};

using Dataset = std::vector<AnnotatedExample>;

struct SynthConfig {
  std::size_t num_examples = 1000;
  std::size_t image_size = 32;
  std::size_t num_annotators = 4;
  /// Scale, in pixels, of each annotator's smooth boundary displacement.
  double boundary_jitter = 1.5;
  /// Probability that an annotator includes the ambiguous lobe.
  double ambiguity_rate = 0.5;
  /// Std-dev of additive Gaussian pixel noise.
  double noise = 0.05;
  std::uint64_t seed = 42;

  void validate() const;
};

struct SynthExample {
  AnnotatedExample example;
  /// Per annotator: whether the lobe was included.
  std::vector<bool> lobe_included;
};

/// Pure function of the config; example i draws from Rng::derive(seed, i).
Dataset generate(const SynthConfig& config);
std::vector<SynthExample> generate_detailed(const SynthConfig& config);

/// Seeded shuffle, then the first round(ratio * n) examples go to train.
std::pair<Dataset, Dataset> split(const Dataset& data, double ratio, std::uint64_t seed);

/// Pixelwise OR over the annotator masks, [S, S].
Tensor union_mask(const AnnotatedExample& example);

/// Keeps the 4-connected component of `mask` containing `seed`, or the one
/// nearest to it when the seed pixel is background. mask is S x S row-major.
std::vector<double> keep_component(const std::vector<double>& mask, std::size_t rows, std::size_t cols,
                                   std::size_t seed_row, std::size_t seed_col);

// Grid files: int32 rows, int32 cols (little-endian), then rows*cols
// little-endian float64 values.
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
};

void write_grid(const std::string& path, const Grid& grid);
Grid read_grid(const std::string& path);

/// Writes images/ and masks/ grid files plus manifest.json under `dir`;
/// returns the manifest path. Manifest paths are relative to the manifest.
std::string write_dataset(const std::string& dir, const Dataset& data);

/// Reads a manifest {"examples": [{id, image_path, mask_paths[]}]}. Masks
/// are binarized at 0.5.
Dataset load_manifest(const std::string& path);

}  // namespace uasam
