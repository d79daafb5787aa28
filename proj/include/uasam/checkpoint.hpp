#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "uasam/optimizer.hpp"
#include "uasam/param_store.hpp"

namespace uasam {

// On-disk layout:
//   6 bytes   "UASAM1"
//   8 bytes   header length N, little-endian uint64
//   N bytes   JSON header: parameter names/shapes/frozen flags, frozen
//             prefixes, optional optimizer state, free-form metadata
//   payload   little-endian float64 arrays: every parameter in header order,
//             then (first, second) moment pairs in header order

inline constexpr char kCheckpointMagic[] = "UASAM1";
inline constexpr int kCheckpointVersion = 1;

struct StoredArray {
  std::string name;
  Shape shape;
  bool frozen = false;
  std::vector<double> data;
};

struct CheckpointContents {
  std::vector<StoredArray> params;
  std::vector<std::string> frozen_prefixes;
  std::optional<OptimizerState> optimizer;
  nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const std::string& path, const ParamStore& store, const OptimizerState* optimizer,
                     const nlohmann::json& meta);

/// Throws CheckpointError on bad magic, version or truncated payload.
CheckpointContents load_checkpoint(const std::string& path);

/// Copies stored values into the same-named tensors of `store` and applies
/// the stored frozen prefixes. Every store parameter must be present with a
/// matching shape.
void restore_params(ParamStore& store, const CheckpointContents& contents);

/// Copies only the parameters under `prefix`; frozen prefixes are not applied.
/// Every store parameter under the prefix must be present. Returns the count.
std::size_t restore_prefix(ParamStore& store, const CheckpointContents& contents, const std::string& prefix);

/// FNV-1a over the raw bytes of the parameters whose names start with `prefix`.
std::uint64_t params_checksum(const ParamStore& store, const std::string& prefix);

}  // namespace uasam
