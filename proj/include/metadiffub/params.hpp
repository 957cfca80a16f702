#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "metadiffub/ndarray.hpp"
#include "metadiffub/tape.hpp"

namespace metadiffub {

/// Ordered collection of named arrays: model weights, their gradients, or
/// optimizer moments. Value semantics; a copy is an independent snapshot.
class ParamSet {
 public:
  void add(std::string name, NDArray value);

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  const NDArray& operator[](std::size_t i) const { return entries_[i].second; }
  NDArray& operator[](std::size_t i) { return entries_[i].second; }
  const NDArray& get(const std::string& name) const;
  NDArray& get(const std::string& name);
  bool contains(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;

  std::size_t element_count() const;
  bool all_finite() const;

  // Same names and shapes, all zeros.
  ParamSet zeros_like() const;
  bool compatible(const ParamSet& other) const;

  // this += factor * other
  void axpy(double factor, const ParamSet& other);
  void scale(double factor);

  // FNV-1a over names, shapes and raw value bits.
  std::uint64_t checksum() const;

  bool operator==(const ParamSet& other) const = default;

 private:
  std::vector<std::pair<std::string, NDArray>> entries_;
};

/// Leaves on `tape` for every parameter, in ParamSet order.
std::vector<Var> bind_params(Tape& tape, const ParamSet& params);

/// Collects gradients for `leaves` into a ParamSet shaped like `params`.
ParamSet collect_gradients(const Gradients& grads, const std::vector<Var>& leaves,
                           const ParamSet& params);

struct AdamState {
  ParamSet first_moment;
  ParamSet second_moment;
  std::uint64_t steps = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
};

AdamState make_adam_state(const ParamSet& params);

/// Gradient-descent step; returns the updated snapshot and advances `state`.
ParamSet adam_step(const ParamSet& params, const ParamSet& grads, AdamState& state,
                   const AdamConfig& config);

double global_norm(const ParamSet& grads);

}  // namespace metadiffub
