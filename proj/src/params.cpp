#include "metadiffub/params.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "metadiffub/errors.hpp"

namespace metadiffub {

void ParamSet::add(std::string name, NDArray value) {
  if (contains(name)) throw ContractError("duplicate parameter name: " + name);
  entries_.emplace_back(std::move(name), std::move(value));
}

std::size_t ParamSet::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first == name) return i;
  }
  throw IndexError("no parameter named " + name);
}

bool ParamSet::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == name; });
}

const NDArray& ParamSet::get(const std::string& name) const {
  return entries_[index_of(name)].second;
}

NDArray& ParamSet::get(const std::string& name) { return entries_[index_of(name)].second; }

std::size_t ParamSet::element_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

bool ParamSet::all_finite() const {
  return std::all_of(entries_.begin(), entries_.end(),
                     [](const auto& e) { return e.second.all_finite(); });
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& e : entries_) out.add(e.first, NDArray(e.second.shape()));
  return out;
}

bool ParamSet::compatible(const ParamSet& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (name(i) != other.name(i) || !(*this)[i].same_shape(other[i])) return false;
  }
  return true;
}

void ParamSet::axpy(double factor, const ParamSet& other) {
  if (!compatible(other)) throw ShapeError("axpy on incompatible parameter sets");
  for (std::size_t i = 0; i < size(); ++i) {
    auto dst = (*this)[i].data();
    auto src = other[i].data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += factor * src[j];
  }
}

void ParamSet::scale(double factor) {
  for (auto& e : entries_) {
    for (auto& x : e.second.data()) x *= factor;
  }
}

std::uint64_t ParamSet::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xFF;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, value] : entries_) {
    for (char c : name) feed(static_cast<unsigned char>(c));
    for (auto d : value.shape()) feed(d);
    for (double x : value.data()) feed(std::bit_cast<std::uint64_t>(x));
  }
  return h;
}

std::vector<Var> bind_params(Tape& tape, const ParamSet& params) {
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) leaves.push_back(tape.leaf(params[i]));
  return leaves;
}

ParamSet collect_gradients(const Gradients& grads, const std::vector<Var>& leaves,
                           const ParamSet& params) {
  if (leaves.size() != params.size()) throw ContractError("leaf count does not match parameters");
  ParamSet out;
  for (std::size_t i = 0; i < params.size(); ++i) out.add(params.name(i), grads.of(leaves[i]));
  return out;
}

AdamState make_adam_state(const ParamSet& params) {
  return AdamState{params.zeros_like(), params.zeros_like(), 0};
}

double global_norm(const ParamSet& grads) {
  double total = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    for (double g : grads[i].data()) total += g * g;
  }
  return std::sqrt(total);
}

ParamSet adam_step(const ParamSet& params, const ParamSet& grads, AdamState& state,
                   const AdamConfig& config) {
  if (!params.compatible(grads)) throw ShapeError("gradient shapes do not match parameters");
  if (!params.compatible(state.first_moment)) throw ShapeError("optimizer state mismatch");
  double clip = 1.0;
  if (config.clip_norm > 0.0) {
    const double norm = global_norm(grads);
    if (norm > config.clip_norm) clip = config.clip_norm / norm;
  }
  ++state.steps;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.steps));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.steps));
  ParamSet out = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = out[i].data();
    auto g = grads[i].data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j] * clip;
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
      p[j] -= config.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config.eps);
    }
  }
  return out;
}

}  // namespace metadiffub
