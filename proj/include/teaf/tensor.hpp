#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace teaf {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

/* Dense row-major tensor. In-memory arithmetic is always double; dtype
 * selects the storage width used by the binary container format. */
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, DType dtype = DType::F64)
      : shape_(std::move(shape)), dtype_(dtype) {
    std::int64_t n = 1;
    for (int d : shape_) {
      if (d <= 0) throw std::invalid_argument("Tensor: dims must be positive, got " + shape_str_of(shape_));
      n *= d;
    }
    data_.assign(static_cast<std::size_t>(n), 0.0);
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) {
    Tensor t({1});
    t.data_[0] = v;
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<double> vals) {
    Tensor t(std::move(shape));
    if (static_cast<std::int64_t>(vals.size()) != t.size())
      throw std::invalid_argument("Tensor::from: value count does not match shape");
    t.data_ = std::move(vals);
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  const std::vector<int>& shape() const { return shape_; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  DType dtype() const { return dtype_; }
  void set_dtype(DType d) { dtype_ = d; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  double& at(int i) { return data_[static_cast<std::size_t>(i)]; }
  double at(int i) const { return data_[static_cast<std::size_t>(i)]; }

  double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
  double at(int i, int j) const { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }

  double& at(int i, int j, int k) {
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  double at(int i, int j, int k) const {
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(std::vector<int> new_shape) const {
    Tensor t(std::move(new_shape), dtype_);
    if (t.size() != size())
      throw std::invalid_argument("Tensor::reshaped: element count mismatch (" + shape_str() +
                                  " -> " + t.shape_str() + ")");
    t.data_ = data_;
    return t;
  }

  bool all_finite() const;

  std::string shape_str() const { return shape_str_of(shape_); }

 private:
  static std::string shape_str_of(const std::vector<int>& s);

  std::vector<int> shape_;
  std::vector<double> data_;
  DType dtype_ = DType::F64;
};

/* Throws std::runtime_error naming `what` if t contains NaN or Inf. Every
 * primitive calls this on its output so non-finite values never propagate
 * silently. */
void ensure_finite(const Tensor& t, const char* what);

}  // namespace teaf
