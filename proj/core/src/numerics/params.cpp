#include "ugg/numerics/params.hpp"

#include <cmath>

#include "ugg/errors.hpp"

namespace ugg {

void ParamSet::add(std::string name, Matrix value) {
  if (index_.count(name) != 0) throw ContractViolation("ParamSet: duplicate parameter " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
}

Matrix& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("ParamSet: unknown parameter " + name);
  return entries_[it->second].second;
}

const Matrix& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("ParamSet: unknown parameter " + name);
  return entries_[it->second].second;
}

std::size_t ParamSet::total_entries() const {
  std::size_t n = 0;
  for (const auto& [name, m] : entries_) n += m.size();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& [name, m] : entries_) out.add(name, Matrix(m.rows(), m.cols()));
  return out;
}

Var Binding::operator[](const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var v = tape_.leaf(params_.at(name));
  bound_.emplace(name, v);
  return v;
}

ParamSet Binding::gradients() const {
  ParamSet out = params_.zeros_like();
  for (const auto& [name, v] : bound_) {
    const Matrix& g = v.grad();
    if (!g.empty()) out.at(name) = g;
  }
  return out;
}

Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix w(fan_in, fan_out);
  for (double& v : w.values()) v = (2.0 * rng.uniform() - 1.0) * limit;
  return w;
}

}  // namespace ugg
