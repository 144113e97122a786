#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fedgimp/tensor.hpp"

namespace fedgimp {

// Ordered collection of named parameter arrays. Names are slash-separated
// ("mapper/fc1/weight"); insertion order is the canonical order used for
// serialisation and aggregation.
class ParamSet {
 public:
  void add(std::string name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t value_count() const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  std::vector<std::string> names() const;

  // Entries whose name starts with `prefix`, prefix kept.
  ParamSet subset(const std::string& prefix) const;
  // Adds every entry of `other` (names must not collide).
  void merge(const ParamSet& other);

  friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

// Same names, same order, same shapes.
bool same_structure(const ParamSet& a, const ParamSet& b);
double max_abs_diff(const ParamSet& a, const ParamSet& b);

using GradientMap = std::map<std::string, Tensor>;

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
};

// Adam with per-parameter step counters, so parameters that only start
// receiving gradients later (progressive growing) get a proper bias
// correction from their first update.
class Adam {
 public:
  struct Slot {
    Tensor m;
    Tensor v;
    long steps = 0;
  };

  Adam() = default;
  explicit Adam(AdamConfig config) : config_(config) {}

  // Updates every parameter that has an entry in `grads`.
  void step(ParamSet& params, const GradientMap& grads);

  const AdamConfig& config() const { return config_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }
  std::map<std::string, Slot>& slots() { return slots_; }

 private:
  AdamConfig config_;
  std::map<std::string, Slot> slots_;
};

}  // namespace fedgimp
