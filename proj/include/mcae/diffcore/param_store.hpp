#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mcae/diffcore/tape.hpp"

namespace mcae::diffcore {

// Owns a model's named parameters and non-learnable buffers (e.g. batch-norm
// running statistics) in registration order. Addresses are stable.
template <typename T>
class ParamStore {
 public:
  struct Buffer {
    std::string name;
    Tensor<T> value;
  };

  Parameter<T>& add(const std::string& name, Tensor<T> value) {
    if (find(name) || find_buffer(name)) throw ConfigError("duplicate parameter name " + name);
    params_.push_back(std::make_unique<Parameter<T>>(name, std::move(value)));
    return *params_.back();
  }

  Tensor<T>& add_buffer(const std::string& name, Tensor<T> value) {
    if (find(name) || find_buffer(name)) throw ConfigError("duplicate buffer name " + name);
    buffers_.push_back(std::make_unique<Buffer>(Buffer{name, std::move(value)}));
    return buffers_.back()->value;
  }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }
  Buffer* find_buffer(const std::string& name) {
    for (auto& b : buffers_)
      if (b->name == name) return b.get();
    return nullptr;
  }

  Parameter<T>& get(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw ConfigError("no parameter named " + name);
  }

  std::vector<Parameter<T>*> params() const {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }
  std::vector<Buffer*> buffers() const {
    std::vector<Buffer*> out;
    for (auto& b : buffers_) out.push_back(b.get());
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::vector<std::unique_ptr<Buffer>> buffers_;
};

}  // namespace mcae::diffcore
