#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace fedsim {

// Dense row-major extents, rank 1..4. Rank-4 tensors follow the
// (batch, channel, height, width) convention throughout the engine.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int64_t> dims);
  explicit Shape(std::vector<int64_t> dims);

  int rank() const { return static_cast<int>(dims_.size()); }
  int64_t dim(int i) const { return dims_[static_cast<size_t>(i)]; }
  int64_t numel() const;
  const std::vector<int64_t>& dims() const { return dims_; }
  bool operator==(const Shape&) const = default;

  std::string str() const;  // "[2,3,4]"

 private:
  std::vector<int64_t> dims_;
  void validate() const;
};

}  // namespace fedsim
