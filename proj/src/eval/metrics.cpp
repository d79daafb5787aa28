#include "uasam/metrics.hpp"

#include <cinttypes>
#include <cstdio>
#include <exception>
#include <fstream>

#include "uasam/checkpoint.hpp"
#include "uasam/sampling.hpp"

namespace uasam {

std::string to_string(TieRule rule) { return rule == TieRule::kBackground ? "background" : "foreground"; }

TieRule parse_tie_rule(const std::string& name) {
  if (name == "background") return TieRule::kBackground;
  if (name == "foreground") return TieRule::kForeground;
  throw ConfigError("unknown tie rule '" + name + "' (expected background or foreground)");
}

double dice(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("dice: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  auto da = a.data(), db = b.data();
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    const bool x = da[i] != 0.0, y = db[i] != 0.0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

Tensor majority_vote(std::span<const Tensor> masks, TieRule tie) {
  if (masks.empty()) throw DataError("majority_vote: empty mask list");
  const Shape& shape = masks.front().shape();
  std::vector<std::size_t> count(masks.front().numel(), 0);
  for (const auto& m : masks) {
    if (m.shape() != shape) {
      throw ShapeError("majority_vote: shape mismatch " + shape_str(m.shape()) + " vs " + shape_str(shape));
    }
    auto d = m.data();
    for (std::size_t i = 0; i < d.size(); ++i) count[i] += d[i] != 0.0;
  }
  const std::size_t n = masks.size();
  std::vector<double> out(count.size());
  for (std::size_t i = 0; i < count.size(); ++i) {
    const bool tied = 2 * count[i] == n;
    out[i] = (2 * count[i] > n || (tied && tie == TieRule::kForeground)) ? 1.0 : 0.0;
  }
  return Tensor(shape, std::move(out));
}

double diversity(std::span<const Tensor> samples) {
  if (samples.size() < 2) return 0.0;
  double total = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      total += 1.0 - dice(samples[i], samples[j]);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

Tensor binarize_logits(const Tensor& logits) {
  std::vector<double> out(logits.numel());
  auto d = logits.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = d[i] > 0.0 ? 1.0 : 0.0;
  return Tensor(logits.shape(), std::move(out));
}

SampleSet predict_samples(const UaSamModel& model, const AnnotatedExample& example, const PromptPoint& prompt,
                          std::size_t k, Rng& rng, TieRule tie) {
  if (k == 0) throw ConfigError("predict_samples: K must be at least 1");
  NoGradGuard no_grad;
  const std::size_t s = example.size();
  Tensor image = ops::reshape(example.image, {1, 1, s, s});
  Tensor prompt_emb = model.sam().encode_prompt(prompt);
  SampleSet set;
  if (!model.stochastic()) {
    Tensor one = binarize_logits(ops::reshape(model.logits(image, prompt_emb), {s, s}));
    set.samples.assign(k, one);
  } else {
    LatentGaussian prior = model.latent()->prior(image);
    LatentGaussian tiled{ops::tile(prior.mu, {k, 1}), ops::tile(prior.log_sigma, {k, 1})};
    Tensor z = sample(tiled, rng);
    Tensor logits = model.logits(ops::tile(image, {k, 1, 1, 1}), prompt_emb, &z);
    for (std::size_t i = 0; i < k; ++i) {
      set.samples.push_back(binarize_logits(ops::reshape(ops::slice(logits, 0, i, i + 1), {s, s})));
    }
  }
  set.fused = majority_vote(set.samples, tie);
  return set;
}

EvalReport evaluate(const UaSamModel& model, const Dataset& data, const EvalOptions& options) {
  if (data.empty()) throw DataError("evaluate: empty dataset");
  if (options.k == 0) throw ConfigError("evaluate: K must be at least 1");
  EvalReport report;
  report.k = options.k;
  report.per_example.resize(data.size());
  const auto n = static_cast<std::ptrdiff_t>(data.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const auto& ex = data[static_cast<std::size_t>(i)];
      Rng rng = Rng::derive(options.seed, static_cast<std::uint64_t>(i));
      const PromptPoint prompt = sample_prompt_point(ex, rng).point;
      SampleSet set = predict_samples(model, ex, prompt, options.k, rng, options.tie);
      Tensor truth = majority_vote(ex.masks, options.tie);
      report.per_example[static_cast<std::size_t>(i)] = {ex.id, dice(set.fused, truth), diversity(set.samples)};
    } catch (...) {
#pragma omp critical(uasam_eval_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  double dsum = 0, vsum = 0;
  for (const auto& e : report.per_example) {
    dsum += e.dice;
    vsum += e.diversity;
  }
  report.mean_dice = dsum / static_cast<double>(data.size());
  report.diversity = vsum / static_cast<double>(data.size());

  std::uint64_t h = params_checksum(model.store(), "");
  h ^= (options.k * 0x9e3779b97f4a7c15ULL) ^ (options.seed + 0x632be59bd9b4e019ULL);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  report.fingerprint = buf;
  return report;
}

std::string csv_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.8f", v);
  return buf;
}

void write_eval_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "example_id,dice,diversity\n";
  for (const auto& e : report.per_example) out << e.id << "," << csv_number(e.dice) << "," << csv_number(e.diversity) << "\n";
  if (!out) throw Error("write failed: " + path);
}

ParamCounts count_parameters(const ParamStore& store) {
  ParamCounts c;
  for (const auto& [name, t] : store) {
    const std::size_t n = t.numel();
    c.total += n;
    (store.is_frozen(name) ? c.frozen : c.trainable) += n;
    c.by_prefix[name.substr(0, name.find('.'))] += n;
  }
  return c;
}

}  // namespace uasam
