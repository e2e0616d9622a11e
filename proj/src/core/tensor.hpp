#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdlib>
#include <new>
#include <string>
#include <vector>

#include "core/rng.hpp"

namespace bmil {

// 64-byte-aligned storage so Eigen's vectorized kernels take the same code
// path for every allocation; heap-address-dependent peeling would otherwise
// produce last-ulp differences between reruns and break bitwise determinism.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    const std::size_t bytes = (n * sizeof(T) + kAlign - 1) / kAlign * kAlign;
    void* p = std::aligned_alloc(kAlign, bytes);
    if (!p) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) { std::free(p); }
  bool operator==(const AlignedAllocator&) const { return true; }
  bool operator!=(const AlignedAllocator&) const { return false; }
};

// Dense row-major tensor of doubles, rank 0..3. Rank 0 is a scalar with one
// element. All layers of the stack share this one value type.
class Tensor {
 public:
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<Mat>;
  using ConstMatMap = Eigen::Map<const Mat>;
  using VecMap = Eigen::Map<Eigen::VectorXd>;
  using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

  using Storage = std::vector<double, AlignedAllocator<double>>;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(count(shape_)), 0.0);
  }
  Tensor(std::vector<int> shape, std::vector<double> data) : shape_(std::move(shape)) {
    data_.assign(data.begin(), data.end());
    check_consistent();
  }

  static Tensor scalar(double v) {
    Tensor t{std::vector<int>{}};
    t.data_[0] = v;
    return t;
  }
  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    t.data_.assign(t.data_.size(), v);
    return t;
  }

  int numel() const { return static_cast<int>(data_.size()); }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool is_scalar() const { return data_.size() == 1; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](int i) const { return data_[static_cast<std::size_t>(i)]; }

  // 2-D accessor (row, col).
  double& at(int r, int c) { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }
  double at(int r, int c) const { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }

  double value() const { return data_[0]; }  // rank-0 / single-element read

  void fill(double v) { data_.assign(data_.size(), v); }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  // Eigen views. mat() requires rank 2; rows()/cols() follow the shape.
  MatMap mat() { return MatMap(data_.data(), shape_[0], shape_[1]); }
  ConstMatMap mat() const { return ConstMatMap(data_.data(), shape_[0], shape_[1]); }
  VecMap flat() { return VecMap(data_.data(), static_cast<Eigen::Index>(data_.size())); }
  ConstVecMap flat() const {
    return ConstVecMap(data_.data(), static_cast<Eigen::Index>(data_.size()));
  }

  std::string shape_str() const;

  static Tensor uniform(Rng& rng, std::vector<int> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (int i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
  }
  static Tensor normal(Rng& rng, std::vector<int> shape, double stddev) {
    Tensor t(std::move(shape));
    for (int i = 0; i < t.numel(); ++i) t[i] = stddev * rng.normal();
    return t;
  }

 private:
  static long count(const std::vector<int>& shape) {
    long n = 1;
    for (int d : shape) n *= d;
    return n;
  }
  void check_consistent() const;

  std::vector<int> shape_;
  Storage data_ = Storage(1, 0.0);  // default-constructed tensor is a scalar 0
};

}  // namespace bmil
