#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "uasam/tensor.hpp"

namespace uasam {

/// Named parameters plus the set of frozen path prefixes.
///
/// Parameters are registered once under a unique dotted path. Modules keep
/// handles to the same tensors, so updates made through the store (optimizer,
/// checkpoint restore) are visible to them immediately. Frozen tensors have
/// requires_grad cleared, so backward never produces gradients for them.
class ParamStore {
 public:
  /// Registers `value` under `name` (requires_grad is switched on unless the
  /// name is already covered by a frozen prefix). Returns the stored handle.
  Tensor add(const std::string& name, Tensor value);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get_mutable(const std::string& name);

  void freeze_prefix(const std::string& prefix);
  bool is_frozen(const std::string& name) const;
  const std::set<std::string>& frozen_prefixes() const { return frozen_; }

  /// All names in lexicographic order.
  std::vector<std::string> names() const;
  std::vector<std::string> trainable_names() const;
  bool has_prefix(const std::string& prefix) const;

  /// Zero-fills gradients of every trainable parameter.
  void zero_grad();

  std::size_t size() const { return params_.size(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor> params_;
  std::set<std::string> frozen_;
};

/// True when `name` starts with `prefix`.
bool has_path_prefix(const std::string& name, const std::string& prefix);

}  // namespace uasam
