#include "fedsim/params.hpp"

#include "fedsim/error.hpp"

namespace fedsim {

const NamedVector* find_param(const ParamVec& v, const std::string& name) {
  for (const auto& p : v) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

int64_t param_numel(const ParamVec& v) {
  int64_t n = 0;
  for (const auto& p : v) n += static_cast<int64_t>(p.values.size());
  return n;
}

std::vector<double> flatten(const ParamVec& v) {
  std::vector<double> out;
  out.reserve(static_cast<size_t>(param_numel(v)));
  for (const auto& p : v) out.insert(out.end(), p.values.begin(), p.values.end());
  return out;
}

void unflatten(const std::vector<double>& flat, ParamVec& into) {
  if (static_cast<int64_t>(flat.size()) != param_numel(into)) {
    throw ShapeError("unflatten: size mismatch");
  }
  size_t off = 0;
  for (auto& p : into) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
              flat.begin() + static_cast<std::ptrdiff_t>(off + p.values.size()),
              p.values.begin());
    off += p.values.size();
  }
}

}  // namespace fedsim
