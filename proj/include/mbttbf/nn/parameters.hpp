#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mbttbf/nn/tensor.hpp"
#include "mbttbf/synthetic.hpp"

namespace mbttbf::nn {

template <typename T>
struct Parameter {
  std::string name;
  std::vector<int> shape;
  Buffer<T> value;
  Buffer<T> grad;
  bool frozen = false;

  std::size_t size() const { return value.size(); }
};

/// Named parameters in creation order. Addresses are stable for the lifetime
/// of the store, so graph nodes may hold raw pointers to them.
template <typename T>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore& other) { *this = other; }
  ParameterStore& operator=(const ParameterStore& other) {
    if (this == &other) return *this;
    params_.clear();
    index_.clear();
    for (const auto& p : other.params_) {
      params_.push_back(std::make_unique<Parameter<T>>(*p));
      index_[p->name] = params_.size() - 1;
    }
    return *this;
  }
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Parameter<T>& add(const std::string& name, std::vector<int> shape) {
    if (index_.count(name)) throw ConfigError("duplicate parameter " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    p->shape = std::move(shape);
    p->value.assign(n, T{});
    p->grad.assign(n, T{});
    params_.push_back(std::move(p));
    index_[name] = params_.size() - 1;
    return *params_.back();
  }

  Parameter<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no parameter " + name);
    return *params_[it->second];
  }
  const Parameter<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no parameter " + name);
    return *params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t count() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) std::fill(p->grad.begin(), p->grad.end(), T{});
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& p : params_) out.push_back(p->name);
    return out;
  }

  template <typename U>
  void copy_values_from(const ParameterStore<U>& other) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& src = other.get(params_[i]->name);
      if (src.size() != params_[i]->size()) throw ConfigError("shape mismatch for " + params_[i]->name);
      for (std::size_t k = 0; k < src.size(); ++k) params_[i]->value[k] = static_cast<T>(src.value[k]);
    }
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace mbttbf::nn
