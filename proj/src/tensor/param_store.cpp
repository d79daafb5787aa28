#include "uasam/param_store.hpp"

#include <algorithm>

namespace uasam {

bool has_path_prefix(const std::string& name, const std::string& prefix) {
  return name.size() >= prefix.size() && name.compare(0, prefix.size(), prefix) == 0;
}

Tensor ParamStore::add(const std::string& name, Tensor value) {
  if (name.empty()) throw Error("param store: empty parameter name");
  if (!value.defined()) throw Error("param store: undefined tensor for " + name);
  if (params_.count(name)) throw Error("param store: duplicate parameter " + name);
  value.set_requires_grad(!is_frozen(name));
  params_.emplace(name, value);
  return value;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("param store: unknown parameter " + name);
  return it->second;
}

Tensor& ParamStore::get_mutable(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("param store: unknown parameter " + name);
  return it->second;
}

void ParamStore::freeze_prefix(const std::string& prefix) {
  frozen_.insert(prefix);
  for (auto& [name, t] : params_) {
    if (has_path_prefix(name, prefix)) {
      t.set_requires_grad(false);
      t.clear_grad();
    }
  }
}

bool ParamStore::is_frozen(const std::string& name) const {
  return std::any_of(frozen_.begin(), frozen_.end(), [&](const std::string& p) { return has_path_prefix(name, p); });
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& kv : params_) out.push_back(kv.first);
  return out;
}

std::vector<std::string> ParamStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& kv : params_) {
    if (!is_frozen(kv.first)) out.push_back(kv.first);
  }
  return out;
}

bool ParamStore::has_prefix(const std::string& prefix) const {
  return std::any_of(params_.begin(), params_.end(),
                     [&](const auto& kv) { return has_path_prefix(kv.first, prefix); });
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : params_) {
    if (!is_frozen(name)) t.zero_grad();
  }
}

}  // namespace uasam
