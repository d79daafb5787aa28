#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "test_util.hpp"
#include "uasam/data.hpp"
#include "uasam/errors.hpp"

namespace fs = std::filesystem;
using namespace uasam;
using uasam::testing::bit_equal;

namespace {

SynthConfig small(std::size_t n = 40) {
  SynthConfig c;
  c.num_examples = n;
  c.image_size = 32;
  c.seed = 17;
  return c;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("uasam_data_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<int> ints(const Tensor& t) {
  std::vector<int> v;
  for (double x : t.data()) v.push_back(static_cast<int>(x));
  return v;
}

// Independent flood fill: number of 4-connected foreground components.
int count_components(const Tensor& mask) {
  const std::size_t rows = mask.dim(0), cols = mask.dim(1);
  std::vector<int> label(rows * cols, 0);
  int n = 0;
  for (std::size_t start = 0; start < rows * cols; ++start) {
    if (mask.at(start) == 0.0 || label[start]) continue;
    ++n;
    std::vector<std::size_t> stack{start};
    label[start] = n;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const long r = static_cast<long>(i / cols), c = static_cast<long>(i % cols);
      const long nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& p : nb) {
        if (p[0] < 0 || p[1] < 0 || p[0] >= static_cast<long>(rows) || p[1] >= static_cast<long>(cols)) continue;
        const std::size_t j = static_cast<std::size_t>(p[0]) * cols + static_cast<std::size_t>(p[1]);
        if (mask.at(j) != 0.0 && !label[j]) {
          label[j] = n;
          stack.push_back(j);
        }
      }
    }
  }
  return n;
}

double mean_pairwise_dice(const Dataset& data) {
  double total = 0;
  std::size_t pairs = 0;
  for (const auto& ex : data) {
    for (std::size_t a = 0; a < ex.masks.size(); ++a) {
      for (std::size_t b = a + 1; b < ex.masks.size(); ++b) {
        total += oracle::dice(ints(ex.masks[a]), ints(ex.masks[b]));
        ++pairs;
      }
    }
  }
  return total / static_cast<double>(pairs);
}

}  // namespace

TEST(Synth, ShapesAndRanges) {
  auto data = generate(small(10));
  ASSERT_EQ(data.size(), 10u);
  for (const auto& ex : data) {
    ex.validate();
    EXPECT_EQ(ex.image.shape(), (Shape{1, 32, 32}));
    EXPECT_EQ(ex.masks.size(), 4u);
    for (double v : ex.image.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_EQ(data[3].id, "ex3");
}

TEST(Synth, Deterministic) {
  auto a = generate(small(12));
  auto b = generate(small(12));
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(bit_equal(a[i].image, b[i].image));
    for (std::size_t m = 0; m < 4; ++m) EXPECT_TRUE(bit_equal(a[i].masks[m], b[i].masks[m]));
  }
  SynthConfig other = small(12);
  other.seed = 18;
  EXPECT_FALSE(bit_equal(generate(other)[0].image, a[0].image));
}

TEST(Synth, ExampleDependsOnlyOnItsIndex) {
  auto few = generate(small(5));
  auto many = generate(small(20));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_TRUE(bit_equal(few[i].image, many[i].image));
}

TEST(Synth, NoJitterNoAmbiguityGivesIdenticalAnnotators) {
  SynthConfig c = small(30);
  c.boundary_jitter = 0;
  c.ambiguity_rate = 0;
  for (const auto& ex : generate(c)) {
    for (std::size_t m = 1; m < ex.masks.size(); ++m) EXPECT_TRUE(bit_equal(ex.masks[m], ex.masks[0])) << ex.id;
  }
}

TEST(Synth, FullAmbiguityAlwaysIncludesLobe) {
  SynthConfig c = small(30);
  c.ambiguity_rate = 1;
  for (const auto& d : generate_detailed(c)) {
    for (bool inc : d.lobe_included) EXPECT_TRUE(inc);
  }

  // Without jitter the lobe only ever adds pixels.
  SynthConfig with = small(30), without = small(30);
  with.boundary_jitter = without.boundary_jitter = 0;
  with.ambiguity_rate = 1;
  without.ambiguity_rate = 0;
  auto a = generate(with), b = generate(without);
  std::size_t grew = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double sa = 0, sb = 0;
    for (std::size_t p = 0; p < a[i].masks[0].numel(); ++p) {
      EXPECT_GE(a[i].masks[0].at(p), b[i].masks[0].at(p));
      sa += a[i].masks[0].at(p);
      sb += b[i].masks[0].at(p);
    }
    if (sa > sb) ++grew;
  }
  EXPECT_GT(grew, a.size() * 9 / 10);
}

TEST(Synth, LobeFrequencyMatchesRate) {
  SynthConfig c = small(250);
  c.ambiguity_rate = 0.5;
  std::size_t hits = 0, total = 0;
  for (const auto& d : generate_detailed(c)) {
    for (bool inc : d.lobe_included) {
      hits += inc;
      ++total;
    }
  }
  EXPECT_NEAR(static_cast<double>(hits) / total, 0.5, 0.05);
}

TEST(Synth, MasksAreSingleComponents) {
  for (const auto& ex : generate(small(60))) {
    for (const auto& m : ex.masks) EXPECT_LE(count_components(m), 1) << ex.id;
  }
}

TEST(Synth, MoreJitterLowersAgreement) {
  double prev = 2.0;
  for (double sigma : {0.5, 1.5, 3.0}) {
    SynthConfig c = small(60);
    c.boundary_jitter = sigma;
    c.ambiguity_rate = 0;
    const double d = mean_pairwise_dice(generate(c));
    EXPECT_LE(d, prev) << "sigma " << sigma;
    prev = d;
  }
}

TEST(Synth, ConfigValidation) {
  SynthConfig c = small();
  c.ambiguity_rate = 1.5;
  EXPECT_THROW(generate(c), ConfigError);
  c = small();
  c.num_examples = 0;
  EXPECT_THROW(generate(c), ConfigError);
  c = small();
  c.boundary_jitter = -1;
  EXPECT_THROW(generate(c), ConfigError);
}

TEST(KeepComponent, NearestComponentToSeed) {
  // Two blobs; the seed sits on background nearer the right one.
  std::vector<double> m = {1, 0, 0, 0, 1,
                           1, 0, 0, 0, 1,
                           0, 0, 0, 0, 0};
  auto out = keep_component(m, 3, 5, 2, 3);
  EXPECT_EQ(out, (std::vector<double>{0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0}));
  EXPECT_EQ(keep_component(std::vector<double>(15, 0.0), 3, 5, 1, 1), std::vector<double>(15, 0.0));
}

TEST(Split, SizesDisjointAndExhaustive) {
  auto data = generate(small(50));
  auto [train, test] = split(data, 0.8, 3);
  EXPECT_EQ(train.size(), 40u);
  EXPECT_EQ(test.size(), 10u);
  std::set<std::string> ids;
  for (const auto& e : train) ids.insert(e.id);
  for (const auto& e : test) EXPECT_FALSE(ids.count(e.id));
  for (const auto& e : test) ids.insert(e.id);
  EXPECT_EQ(ids.size(), 50u);

  auto again = split(data, 0.8, 3);
  for (std::size_t i = 0; i < train.size(); ++i) EXPECT_EQ(again.first[i].id, train[i].id);
}

TEST(Split, EdgeCases) {
  auto two = generate(small(2));
  auto [a, b] = split(two, 0.5, 1);
  EXPECT_EQ(a.size(), 1u);
  EXPECT_EQ(b.size(), 1u);
  EXPECT_THROW(split(generate(small(1)), 0.8, 1), DataError);
  EXPECT_THROW(split(two, 1.0, 1), ConfigError);
  EXPECT_THROW(split(two, 0.0, 1), ConfigError);
}

TEST(UnionMask, PixelwiseOr) {
  AnnotatedExample ex;
  ex.id = "u";
  ex.image = Tensor::zeros({1, 2, 2});
  ex.masks = {Tensor({2, 2}, {1, 0, 0, 0}), Tensor({2, 2}, {0, 0, 1, 0})};
  EXPECT_TRUE(bit_equal(union_mask(ex), Tensor({2, 2}, {1, 0, 1, 0})));
}

TEST(GridIo, RoundTrip) {
  auto dir = scratch("grid");
  Grid g{3, 2, {0.1, -2.5, 1e300, 0.0, 7.0, 3.25}};
  write_grid((dir / "g.grid").string(), g);
  Grid back = read_grid((dir / "g.grid").string());
  EXPECT_EQ(back.rows, 3u);
  EXPECT_EQ(back.cols, 2u);
  EXPECT_EQ(back.values, g.values);
}

TEST(GridIo, Errors) {
  auto dir = scratch("grid_err");
  EXPECT_THROW(read_grid((dir / "absent.grid").string()), MissingFileError);
  {
    std::ofstream out(dir / "short.grid", std::ios::binary);
    out << "abc";
  }
  EXPECT_THROW(read_grid((dir / "short.grid").string()), MalformedHeaderError);
  write_grid((dir / "g.grid").string(), Grid{2, 2, {1, 2, 3, 4}});
  fs::resize_file(dir / "g.grid", 8 + 3 * 8);
  EXPECT_THROW(read_grid((dir / "g.grid").string()), MalformedHeaderError);
}

TEST(Manifest, RoundTripIsBitIdentical) {
  auto dir = scratch("manifest");
  auto data = generate(small(6));
  const auto path = write_dataset(dir.string(), data);
  auto back = load_manifest(path);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back[i].id, data[i].id);
    EXPECT_TRUE(bit_equal(back[i].image, data[i].image));
    ASSERT_EQ(back[i].masks.size(), data[i].masks.size());
    for (std::size_t m = 0; m < data[i].masks.size(); ++m) EXPECT_TRUE(bit_equal(back[i].masks[m], data[i].masks[m]));
  }
}

TEST(Manifest, Errors) {
  auto dir = scratch("manifest_err");
  auto data = generate(small(2));
  const auto path = write_dataset(dir.string(), data);

  fs::remove(dir / "masks" / "ex1_2.grid");
  EXPECT_THROW(load_manifest(path), MissingFileError);

  write_grid((dir / "masks" / "ex1_2.grid").string(), Grid{16, 16, std::vector<double>(256, 0.0)});
  EXPECT_THROW(load_manifest(path), ShapeMismatchError);

  {
    std::ofstream out(dir / "masks" / "ex1_2.grid", std::ios::binary | std::ios::trunc);
    const std::int32_t bad[2] = {-1, 32};
    out.write(reinterpret_cast<const char*>(bad), 8);
  }
  EXPECT_THROW(load_manifest(path), MalformedHeaderError);

  {
    std::ofstream out(dir / "broken.json");
    out << "{\"examples\": [";
  }
  EXPECT_THROW(load_manifest((dir / "broken.json").string()), DataError);
  EXPECT_THROW(load_manifest((dir / "none.json").string()), MissingFileError);
}
