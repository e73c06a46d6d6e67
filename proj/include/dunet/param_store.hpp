#pragma once

#include <map>
#include <string>

#include "dunet/serialize.hpp"
#include "dunet/tensor.hpp"

namespace dunet {

template <typename T>
struct Param {
  Var<T> var;
  bool trainable = true;
};

// Named parameter registry. Iteration is name-ordered, so anything derived
// from it (Adam walk order, serialization) is deterministic.
template <typename T>
class ParamStore {
 public:
  Var<T> add(const std::string& name, Shape shape, std::vector<T> data,
             bool trainable) {
    require(!entries_.count(name), "duplicate parameter: " + name);
    Param<T> p;
    p.var = Var<T>::leaf(std::move(shape), std::move(data), trainable);
    p.trainable = trainable;
    auto [it, ok] = entries_.emplace(name, std::move(p));
    return it->second.var;
  }

  Var<T> add_zeros(const std::string& name, const Shape& shape,
                   bool trainable) {
    return add(name, shape, std::vector<T>(numel(shape), T(0)), trainable);
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  Var<T> get(const std::string& name) const {
    auto it = entries_.find(name);
    require(it != entries_.end(), "unknown parameter: " + name);
    return it->second.var;
  }

  bool trainable(const std::string& name) const {
    auto it = entries_.find(name);
    require(it != entries_.end(), "unknown parameter: " + name);
    return it->second.trainable;
  }

  const std::map<std::string, Param<T>>& entries() const { return entries_; }
  std::map<std::string, Param<T>>& entries() { return entries_; }

  void zero_grads() {
    for (auto& [name, p] : entries_)
      if (p.trainable) {
        p.var.node()->ensure_grad();
        p.var.node()->zero_grad();
      }
  }

  int64_t count(const std::string& prefix, bool trainable_only) const {
    int64_t n = 0;
    for (const auto& [name, p] : entries_)
      if (name.rfind(prefix, 0) == 0 && (!trainable_only || p.trainable))
        n += p.var.size();
    return n;
  }

  Container to_container() const {
    Container c;
    for (const auto& [name, p] : entries_)
      c.emplace(name, ContainerEntry::from(p.var.shape(), p.var.data(),
                                           p.trainable));
    return c;
  }

  // Loads values into existing entries; shapes must match.
  void load_values(const Container& c) {
    for (auto& [name, p] : entries_) {
      auto it = c.find(name);
      require(it != c.end(), "checkpoint missing parameter: " + name);
      require(it->second.dims == p.var.shape(),
              "checkpoint shape mismatch for " + name + ": " +
                  shape_str(it->second.dims) + " vs " +
                  shape_str(p.var.shape()));
      p.var.data() = it->second.template as<T>();
    }
  }

 private:
  std::map<std::string, Param<T>> entries_;
};

}  // namespace dunet
