#include "fedgimp/params.hpp"

#include <algorithm>
#include <cmath>

#include "fedgimp/error.hpp"

namespace fedgimp {

void ParamSet::add(std::string name, Tensor value) {
  if (contains(name)) throw Error(ErrorCode::kInvalidArgument, "duplicate parameter " + name);
  index_[name] = entries_.size();
  entries_.emplace_back(std::move(name), std::move(value));
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::kNotFound, "parameter " + name);
  return entries_[it->second].second;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::kNotFound, "parameter " + name);
  return entries_[it->second].second;
}

std::size_t ParamSet::value_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

ParamSet ParamSet::subset(const std::string& prefix) const {
  ParamSet out;
  for (const auto& [name, t] : entries_) {
    if (name.rfind(prefix, 0) == 0) out.add(name, t);
  }
  return out;
}

void ParamSet::merge(const ParamSet& other) {
  for (const auto& [name, t] : other.entries_) add(name, t);
}

bool same_structure(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.entries()[i].first != b.entries()[i].first) return false;
    if (a.entries()[i].second.shape() != b.entries()[i].second.shape()) return false;
  }
  return true;
}

double max_abs_diff(const ParamSet& a, const ParamSet& b) {
  if (!same_structure(a, b)) throw Error(ErrorCode::kIncompatibleModels, "parameter sets differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, max_abs_diff(a.entries()[i].second, b.entries()[i].second));
  }
  return m;
}

void Adam::step(ParamSet& params, const GradientMap& grads) {
  for (auto& [name, param] : params.entries()) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    const Tensor& grad = g->second;
    if (!grad.same_shape(param)) throw Error(ErrorCode::kShapeError, "gradient shape for " + name);
    Slot& slot = slots_[name];
    if (slot.m.empty() && !param.empty()) {
      slot.m = Tensor(param.shape());
      slot.v = Tensor(param.shape());
    }
    ++slot.steps;
    const double c1 = 1.0 - std::pow(config_.beta1, double(slot.steps));
    const double c2 = 1.0 - std::pow(config_.beta2, double(slot.steps));
    for (std::size_t i = 0; i < param.size(); ++i) {
      slot.m[i] = config_.beta1 * slot.m[i] + (1.0 - config_.beta1) * grad[i];
      slot.v[i] = config_.beta2 * slot.v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
      const double mhat = slot.m[i] / c1;
      const double vhat = slot.v[i] / c2;
      param[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

}  // namespace fedgimp
