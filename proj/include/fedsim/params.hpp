#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fedsim {

// Flat named f64 vector; the exchange format between models, the federation
// server, optimizers and checkpoints. Order is fixed by the producing model,
// which keeps every reduction deterministic.
struct NamedVector {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<double> values;
};

using ParamVec = std::vector<NamedVector>;

const NamedVector* find_param(const ParamVec& v, const std::string& name);

// Element count across all entries.
int64_t param_numel(const ParamVec& v);

// Concatenates values in order; the inverse splits a flat buffer back.
std::vector<double> flatten(const ParamVec& v);
void unflatten(const std::vector<double>& flat, ParamVec& into);

}  // namespace fedsim
