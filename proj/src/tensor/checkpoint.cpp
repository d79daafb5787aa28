#include "uasam/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace uasam {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::size_t kMagicLen = 6;

void write_doubles(std::ofstream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::ifstream& in, std::size_t count, const std::string& path) {
  std::vector<double> v(count);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double)) {
    throw CheckpointError("checkpoint " + path + ": truncated payload");
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store, const OptimizerState* optimizer,
                     const nlohmann::json& meta) {
  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["params"] = nlohmann::json::array();
  for (const auto& [name, t] : store) {
    header["params"].push_back({{"name", name}, {"shape", t.shape()}, {"frozen", store.is_frozen(name)}});
  }
  header["frozen_prefixes"] = store.frozen_prefixes();
  if (optimizer) {
    nlohmann::json opt;
    opt["learning_rate"] = optimizer->learning_rate;
    opt["step_count"] = optimizer->step_count;
    opt["decay_every"] = optimizer->decay_every;
    opt["decay_factor"] = optimizer->decay_factor;
    opt["beta1"] = optimizer->beta1;
    opt["beta2"] = optimizer->beta2;
    opt["epsilon"] = optimizer->epsilon;
    nlohmann::json moments = nlohmann::json::array();
    for (const auto& [name, m] : optimizer->first_moment) {
      moments.push_back({{"name", name}, {"size", m.size()}});
    }
    opt["moments"] = moments;
    header["optimizer"] = opt;
  }
  header["meta"] = meta;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
  out.write(kCheckpointMagic, kMagicLen);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : store) {
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (optimizer) {
    for (const auto& [name, m] : optimizer->first_moment) {
      write_doubles(out, m);
      auto it = optimizer->second_moment.find(name);
      if (it == optimizer->second_moment.end() || it->second.size() != m.size()) {
        throw CheckpointError("checkpoint: optimizer moments out of sync for " + name);
      }
      write_doubles(out, it->second);
    }
  }
  if (!out) throw CheckpointError("checkpoint: write failed for " + path);
}

CheckpointContents load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path);
  char magic[kMagicLen];
  in.read(magic, kMagicLen);
  if (in.gcount() != static_cast<std::streamsize>(kMagicLen) || std::memcmp(magic, kCheckpointMagic, kMagicLen) != 0) {
    throw CheckpointError("checkpoint " + path + ": bad magic, expected version tag UASAM1");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (in.gcount() != sizeof(len) || len > (1ULL << 32)) throw CheckpointError("checkpoint " + path + ": bad header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::uint64_t>(in.gcount()) != len) throw CheckpointError("checkpoint " + path + ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint " + path + ": malformed header: " + e.what());
  }
  if (header.value("version", -1) != kCheckpointVersion) {
    throw CheckpointError("checkpoint " + path + ": unsupported version " + header.value("version", nlohmann::json()).dump());
  }

  CheckpointContents c;
  try {
    for (const auto& p : header.at("params")) {
      StoredArray a;
      a.name = p.at("name").get<std::string>();
      a.shape = p.at("shape").get<Shape>();
      a.frozen = p.at("frozen").get<bool>();
      c.params.push_back(std::move(a));
    }
    c.frozen_prefixes = header.at("frozen_prefixes").get<std::vector<std::string>>();
    c.meta = header.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint " + path + ": malformed header: " + e.what());
  }
  for (auto& a : c.params) a.data = read_doubles(in, numel(a.shape), path);

  if (header.contains("optimizer")) {
    const auto& o = header["optimizer"];
    OptimizerState s;
    s.learning_rate = o.at("learning_rate").get<double>();
    s.step_count = o.at("step_count").get<std::uint64_t>();
    s.decay_every = o.at("decay_every").get<std::uint64_t>();
    s.decay_factor = o.at("decay_factor").get<double>();
    s.beta1 = o.at("beta1").get<double>();
    s.beta2 = o.at("beta2").get<double>();
    s.epsilon = o.at("epsilon").get<double>();
    for (const auto& m : o.at("moments")) {
      const auto name = m.at("name").get<std::string>();
      const auto size = m.at("size").get<std::size_t>();
      s.first_moment[name] = read_doubles(in, size, path);
      s.second_moment[name] = read_doubles(in, size, path);
    }
    c.optimizer = std::move(s);
  }
  in.peek();
  if (!in.eof()) throw CheckpointError("checkpoint " + path + ": trailing bytes after payload");
  return c;
}

namespace {

std::size_t copy_params(ParamStore& store, const CheckpointContents& contents, const std::string& prefix) {
  std::map<std::string, const StoredArray*> by_name;
  for (const auto& a : contents.params) by_name[a.name] = &a;
  std::size_t copied = 0;
  for (const auto& name : store.names()) {
    if (!prefix.empty() && !has_path_prefix(name, prefix)) continue;
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint: missing parameter " + name);
    Tensor& t = store.get_mutable(name);
    if (it->second->shape != t.shape()) {
      throw CheckpointError("checkpoint: shape mismatch for " + name + ": stored " + shape_str(it->second->shape) +
                            ", model " + shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    std::copy(it->second->data.begin(), it->second->data.end(), dst.begin());
    ++copied;
  }
  return copied;
}

}  // namespace

void restore_params(ParamStore& store, const CheckpointContents& contents) {
  copy_params(store, contents, "");
  for (const auto& p : contents.frozen_prefixes) store.freeze_prefix(p);
}

std::size_t restore_prefix(ParamStore& store, const CheckpointContents& contents, const std::string& prefix) {
  return copy_params(store, contents, prefix);
}

std::uint64_t params_checksum(const ParamStore& store, const std::string& prefix) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, t] : store) {
    if (!has_path_prefix(name, prefix)) continue;
    for (char ch : name) {
      h ^= static_cast<unsigned char>(ch);
      h *= 1099511628211ULL;
    }
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data().data());
    for (std::size_t i = 0; i < t.numel() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace uasam
