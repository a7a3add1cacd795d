#include "fedsim/shape.hpp"

#include "fedsim/error.hpp"

namespace fedsim {

Shape::Shape(std::initializer_list<int64_t> dims) : dims_(dims) { validate(); }

Shape::Shape(std::vector<int64_t> dims) : dims_(std::move(dims)) { validate(); }

void Shape::validate() const {
  if (dims_.size() > 4) {
    throw ShapeError("shape rank " + std::to_string(dims_.size()) +
                     " exceeds the supported maximum of 4");
  }
  for (int64_t d : dims_) {
    if (d < 1) {
      throw ShapeError("shape extent must be >= 1, got " + str());
    }
  }
}

int64_t Shape::numel() const {
  int64_t n = 1;
  for (int64_t d : dims_) n *= d;
  return n;
}

std::string Shape::str() const {
  std::string s = "[";
  for (size_t i = 0; i < dims_.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims_[i]);
  }
  return s + "]";
}

}  // namespace fedsim
