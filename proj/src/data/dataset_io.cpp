#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "uasam/data.hpp"
#include "uasam/errors.hpp"

namespace uasam {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "grid I/O assumes a little-endian host");

namespace {

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void write_grid(const std::string& path, const Grid& grid) {
  if (grid.values.size() != grid.rows * grid.cols) throw DataError("write_grid: value count does not match dims");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  const auto rows = static_cast<std::int32_t>(grid.rows), cols = static_cast<std::int32_t>(grid.cols);
  out.write(reinterpret_cast<const char*>(&rows), 4);
  out.write(reinterpret_cast<const char*>(&cols), 4);
  out.write(reinterpret_cast<const char*>(grid.values.data()),
            static_cast<std::streamsize>(grid.values.size() * sizeof(double)));
  if (!out) throw DataError("write failed: " + path);
}

Grid read_grid(const std::string& path) {
  auto bytes = slurp(path);
  if (bytes.size() < 8) throw MalformedHeaderError(path + ": file shorter than the 8-byte dims header");
  std::int32_t rows = 0, cols = 0;
  std::memcpy(&rows, bytes.data(), 4);
  std::memcpy(&cols, bytes.data() + 4, 4);
  if (rows <= 0 || cols <= 0) {
    throw MalformedHeaderError(path + ": bad dims " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  Grid g;
  g.rows = static_cast<std::size_t>(rows);
  g.cols = static_cast<std::size_t>(cols);
  const std::size_t want = 8 + g.rows * g.cols * sizeof(double);
  if (bytes.size() != want) {
    throw MalformedHeaderError(path + ": header says " + std::to_string(rows) + "x" + std::to_string(cols) +
                               " but payload is " + std::to_string(bytes.size() - 8) + " bytes");
  }
  g.values.resize(g.rows * g.cols);
  std::memcpy(g.values.data(), bytes.data() + 8, g.values.size() * sizeof(double));
  return g;
}

std::string write_dataset(const std::string& dir, const Dataset& data) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  nlohmann::json examples = nlohmann::json::array();
  for (const auto& ex : data) {
    ex.validate();
    const std::size_t s = ex.size();
    const std::string image_rel = "images/" + ex.id + ".grid";
    auto img = ex.image.data();
    write_grid((fs::path(dir) / image_rel).string(), {s, s, {img.begin(), img.end()}});
    nlohmann::json masks = nlohmann::json::array();
    for (std::size_t m = 0; m < ex.masks.size(); ++m) {
      const std::string rel = "masks/" + ex.id + "_" + std::to_string(m) + ".grid";
      auto md = ex.masks[m].data();
      write_grid((fs::path(dir) / rel).string(), {s, s, {md.begin(), md.end()}});
      masks.push_back(rel);
    }
    examples.push_back({{"id", ex.id}, {"image_path", image_rel}, {"mask_paths", masks}});
  }
  const auto manifest = (fs::path(dir) / "manifest.json").string();
  std::ofstream out(manifest);
  if (!out) throw DataError("cannot write " + manifest);
  out << nlohmann::json{{"examples", examples}}.dump(1) << "\n";
  return manifest;
}

Dataset load_manifest(const std::string& path) {
  auto bytes = slurp(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": not valid JSON: " + e.what());
  }
  if (!doc.is_object() || !doc.contains("examples") || !doc["examples"].is_array()) {
    throw DataError(path + ": expected an object with an \"examples\" array");
  }
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? p : (base / p).string(); };

  Dataset out;
  for (const auto& rec : doc["examples"]) {
    if (!rec.is_object() || !rec.contains("id") || !rec.contains("image_path") || !rec.contains("mask_paths") ||
        !rec["mask_paths"].is_array()) {
      throw DataError(path + ": each example needs id, image_path and mask_paths[]");
    }
    AnnotatedExample ex;
    ex.id = rec["id"].get<std::string>();
    Grid img = read_grid(resolve(rec["image_path"].get<std::string>()));
    ex.image = Tensor({1, img.rows, img.cols}, std::move(img.values));
    for (const auto& mp : rec["mask_paths"]) {
      const std::string mpath = resolve(mp.get<std::string>());
      Grid g = read_grid(mpath);
      if (g.rows != img.rows || g.cols != img.cols) {
        throw ShapeMismatchError("example " + ex.id + ": mask " + mpath + " is " + std::to_string(g.rows) + "x" +
                                 std::to_string(g.cols) + ", image is " + std::to_string(img.rows) + "x" +
                                 std::to_string(img.cols));
      }
      for (auto& v : g.values) v = v >= 0.5 ? 1.0 : 0.0;
      ex.masks.emplace_back(Shape{g.rows, g.cols}, std::move(g.values));
    }
    ex.validate();
    out.push_back(std::move(ex));
  }
  if (out.empty()) throw DataError(path + ": manifest lists no examples");
  return out;
}

}  // namespace uasam
