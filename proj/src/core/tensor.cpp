#include "core/tensor.hpp"

#include <fmt/format.h>

#include "core/error.hpp"

namespace bmil {

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += ",";
    s += fmt::format("{}", shape_[i]);
  }
  return s + "]";
}

void Tensor::check_consistent() const {
  require(static_cast<long>(data_.size()) == count(shape_),
          "tensor shape {} expects {} elements, got {}", shape_str(), count(shape_),
          data_.size());
}

}  // namespace bmil
