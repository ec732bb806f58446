#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ugg/numerics/autodiff.hpp"
#include "ugg/numerics/matrix.hpp"
#include "ugg/numerics/rng.hpp"

namespace ugg {

// Named parameter matrices in insertion order.
class ParamSet {
 public:
  void add(std::string name, Matrix value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t total_entries() const;
  const std::vector<std::pair<std::string, Matrix>>& entries() const noexcept { return entries_; }
  std::vector<std::pair<std::string, Matrix>>& entries() noexcept { return entries_; }

  // Same names and shapes, all zeros.
  ParamSet zeros_like() const;

  friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<std::pair<std::string, Matrix>> entries_;
  std::map<std::string, std::size_t> index_;
};

// Lazily materializes parameters as tape leaves; one leaf per name.
class Binding {
 public:
  Binding(Tape& tape, const ParamSet& params) : tape_(tape), params_(params) {}

  Var operator[](const std::string& name);
  Tape& tape() noexcept { return tape_; }

  // Gradients of every bound parameter; unbound parameters get zeros.
  ParamSet gradients() const;

 private:
  Tape& tape_;
  const ParamSet& params_;
  std::map<std::string, Var> bound_;
};

// Glorot/Xavier uniform initialization for a fan_in x fan_out weight.
Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, RngStream& rng);

}  // namespace ugg
