#pragma once

// Parameter registry: every learnable tensor and statistics buffer is
// collected with a stable name, a component tag (backbone / ed1 / ed2 /
// lf1 / lf2) and a kind. Checkpointing, parameter counting and the
// inference export all walk this manifest.

#include "plseg/rng.hpp"
#include "plseg/tensor.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace plseg {

enum class ParamKind { kParam, kBuffer };

template <class T>
struct ParamEntry {
  std::string name;
  std::string component;
  ParamKind kind;
  Var<T> var;
};

template <class T>
using ParamSet = std::vector<ParamEntry<T>>;

// Init draws come from a stream keyed by (seed, parameter name), so the
// same seed yields identical backbone weights no matter which heads are
// attached.
inline uint64_t param_stream_seed(uint64_t seed, const std::string& name) {
  return mix_seed(seed, fnv1a64(name));
}

template <class T>
Var<T> make_param_normal(const std::string& name, uint64_t seed, Shape shape,
                         double stddev) {
  Var<T> v = Var<T>::leaf(std::move(shape), true);
  Rng rng(param_stream_seed(seed, name));
  for (auto& x : v.val()) x = T(rng.normal(0.0, stddev));
  return v;
}

template <class T>
Var<T> make_param_const(Shape shape, T value, bool requires_grad = true) {
  Var<T> v = Var<T>::leaf(std::move(shape), requires_grad);
  std::fill(v.val().begin(), v.val().end(), value);
  return v;
}

template <class T>
double he_std(int64_t fan_in) {
  return std::sqrt(2.0 / double(fan_in));
}

}  // namespace plseg
