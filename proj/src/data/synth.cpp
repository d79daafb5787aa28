#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>
#include <numeric>

#include "uasam/data.hpp"
#include "uasam/errors.hpp"
#include "uasam/rng.hpp"

namespace uasam {

namespace {

// Sum of a few random plane waves with wavelengths of 8..16 px, scaled to
// unit variance and clipped to +-2.
struct SmoothField {
  static constexpr int kWaves = 4;
  double kx[kWaves], ky[kWaves], phase[kWaves];

  explicit SmoothField(Rng& rng) {
    for (int k = 0; k < kWaves; ++k) {
      const double wavelength = rng.uniform(8.0, 16.0);
      const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
      kx[k] = 2.0 * std::numbers::pi / wavelength * std::cos(dir);
      ky[k] = 2.0 * std::numbers::pi / wavelength * std::sin(dir);
      phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
  }

  double operator()(double r, double c) const {
    double v = 0;
    for (int k = 0; k < kWaves; ++k) v += std::sin(kx[k] * c + ky[k] * r + phase[k]);
    return std::clamp(v * std::sqrt(2.0 / kWaves), -2.0, 2.0);
  }
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

SynthExample make_example(const SynthConfig& cfg, std::size_t index) {
  Rng rng = Rng::derive(cfg.seed, index);
  const std::size_t s = cfg.image_size;
  const double sd = static_cast<double>(s);
  const double unit = sd / 32.0;

  // Core ellipse with a shared wobble.
  const double cy = rng.uniform(0.35, 0.65) * sd, cx = rng.uniform(0.35, 0.65) * sd;
  const double a = rng.uniform(5.0, 8.0) * unit, b = rng.uniform(5.0, 8.0) * unit;
  const double theta = rng.uniform(0.0, std::numbers::pi);
  const double ct = std::cos(theta), st = std::sin(theta);
  SmoothField wobble(rng);
  auto core_sdf = [&](double r, double c) {
    const double u = (c - cx) * ct + (r - cy) * st, v = -(c - cx) * st + (r - cy) * ct;
    const double rn = std::sqrt(u * u / (a * a) + v * v / (b * b));
    return (rn - 1.0) * std::min(a, b) + 0.6 * unit * wobble(r, c);
  };

  // Lobe disc protruding from the core boundary.
  const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double lobe_r = rng.uniform(2.5, 4.0) * unit;
  const double du = std::cos(phi), dv = std::sin(phi);
  const double edge = 1.0 / std::sqrt(du * du / (a * a) + dv * dv / (b * b));
  const double ly = cy + (du * st + dv * ct) * (edge + 0.6 * lobe_r);
  const double lx = cx + (du * ct - dv * st) * (edge + 0.6 * lobe_r);
  auto lobe_sdf = [&](double r, double c) { return std::hypot(r - ly, c - lx) - lobe_r; };

  SmoothField texture(rng);
  const double bg_level = rng.uniform(0.1, 0.25);
  const double core_level = rng.uniform(0.7, 0.9);
  const double lobe_level = 0.5 * (bg_level + core_level);

  std::vector<double> image(s * s);
  for (std::size_t r = 0; r < s; ++r) {
    for (std::size_t c = 0; c < s; ++c) {
      const double rr = static_cast<double>(r), cc = static_cast<double>(c);
      double v = bg_level + 0.06 * texture(rr, cc);
      v += (lobe_level - v) * sigmoid(-lobe_sdf(rr, cc) / 0.7);
      v += (core_level - v) * sigmoid(-core_sdf(rr, cc) / 0.7);
      v += cfg.noise * rng.normal();
      image[r * s + c] = std::clamp(v, 0.0, 1.0);
    }
  }

  SynthExample out;
  out.example.id = "ex" + std::to_string(index);
  out.example.image = Tensor({1, s, s}, std::move(image));
  const auto seed_r = static_cast<std::size_t>(std::clamp(std::lround(cy), 0L, static_cast<long>(s - 1)));
  const auto seed_c = static_cast<std::size_t>(std::clamp(std::lround(cx), 0L, static_cast<long>(s - 1)));
  for (std::size_t m = 0; m < cfg.num_annotators; ++m) {
    SmoothField jitter(rng);
    const bool lobe = rng.bernoulli(cfg.ambiguity_rate);
    std::vector<double> mask(s * s);
    for (std::size_t r = 0; r < s; ++r) {
      for (std::size_t c = 0; c < s; ++c) {
        const double rr = static_cast<double>(r), cc = static_cast<double>(c);
        double d = core_sdf(rr, cc);
        if (lobe) d = std::min(d, lobe_sdf(rr, cc));
        mask[r * s + c] = d + cfg.boundary_jitter * jitter(rr, cc) < 0 ? 1.0 : 0.0;
      }
    }
    out.example.masks.emplace_back(Shape{s, s}, keep_component(mask, s, s, seed_r, seed_c));
    out.lobe_included.push_back(lobe);
  }
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (num_examples == 0) throw ConfigError("synth: num_examples must be positive");
  if (image_size < 8) throw ConfigError("synth: image_size must be at least 8");
  if (num_annotators == 0) throw ConfigError("synth: num_annotators must be at least 1");
  if (!(boundary_jitter >= 0) || !std::isfinite(boundary_jitter)) {
    throw ConfigError("synth: boundary_jitter must be finite and >= 0");
  }
  if (!(ambiguity_rate >= 0 && ambiguity_rate <= 1)) throw ConfigError("synth: ambiguity_rate must lie in [0, 1]");
  if (!(noise >= 0) || !std::isfinite(noise)) throw ConfigError("synth: noise must be finite and >= 0");
}

std::vector<SynthExample> generate_detailed(const SynthConfig& config) {
  config.validate();
  std::vector<SynthExample> out(config.num_examples);
  const auto n = static_cast<std::ptrdiff_t>(config.num_examples);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = make_example(config, static_cast<std::size_t>(i));
  return out;
}

Dataset generate(const SynthConfig& config) {
  auto detailed = generate_detailed(config);
  Dataset out;
  out.reserve(detailed.size());
  for (auto& d : detailed) out.push_back(std::move(d.example));
  return out;
}

std::vector<double> keep_component(const std::vector<double>& mask, std::size_t rows, std::size_t cols,
                                   std::size_t seed_row, std::size_t seed_col) {
  std::vector<double> out(mask.size(), 0.0);
  // Nearest foreground pixel to the seed (the seed itself when set).
  std::size_t best = mask.size();
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (mask[r * cols + c] == 0.0) continue;
      const double dr = static_cast<double>(r) - static_cast<double>(seed_row);
      const double dc = static_cast<double>(c) - static_cast<double>(seed_col);
      const double d = dr * dr + dc * dc;
      if (d < best_d) {
        best_d = d;
        best = r * cols + c;
      }
    }
  }
  if (best == mask.size()) return out;
  std::deque<std::size_t> queue{best};
  out[best] = 1.0;
  while (!queue.empty()) {
    const std::size_t idx = queue.front();
    queue.pop_front();
    const std::size_t r = idx / cols, c = idx % cols;
    auto visit = [&](std::size_t j) {
      if (mask[j] != 0.0 && out[j] == 0.0) {
        out[j] = 1.0;
        queue.push_back(j);
      }
    };
    if (r > 0) visit(idx - cols);
    if (r + 1 < rows) visit(idx + cols);
    if (c > 0) visit(idx - 1);
    if (c + 1 < cols) visit(idx + 1);
  }
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& data, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split: ratio must lie in (0, 1)");
  const auto n_train = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(data.size())));
  if (n_train == 0 || n_train >= data.size()) {
    throw DataError("split: ratio " + std::to_string(ratio) + " on " + std::to_string(data.size()) +
                    " examples leaves one side empty");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::pair<Dataset, Dataset> out;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_train ? out.first : out.second).push_back(data[order[i]]);
  return out;
}

Tensor union_mask(const AnnotatedExample& example) {
  if (example.masks.empty()) throw DataError("example " + example.id + " has no masks");
  std::vector<double> u(example.masks.front().numel(), 0.0);
  for (const auto& m : example.masks) {
    auto d = m.data();
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = (u[i] != 0.0 || d[i] != 0.0) ? 1.0 : 0.0;
  }
  return Tensor(example.masks.front().shape(), std::move(u));
}

void AnnotatedExample::validate() const {
  if (!image.defined() || image.rank() != 3 || image.dim(0) != 1 || image.dim(1) != image.dim(2)) {
    throw ShapeMismatchError("example " + id + ": image must be [1, S, S]");
  }
  if (masks.empty()) throw DataError("example " + id + " has no masks");
  const Shape want{image.dim(1), image.dim(2)};
  for (std::size_t m = 0; m < masks.size(); ++m) {
    if (masks[m].shape() != want) {
      throw ShapeMismatchError("example " + id + ": mask " + std::to_string(m) + " is " +
                               shape_str(masks[m].shape()) + ", image is " + shape_str(want));
    }
    for (double v : masks[m].data()) {
      if (v != 0.0 && v != 1.0) throw DataError("example " + id + ": mask " + std::to_string(m) + " is not binary");
    }
  }
}

}  // namespace uasam
