#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace pascl {

// Dense row-major array of doubles. Rank 1 tensors behave as a single row
// for row-wise operations; a scalar is the rank 1 tensor of extent 1.
class TensorBuf {
 public:
  TensorBuf() : TensorBuf(std::vector<std::size_t>{1}) {}
  explicit TensorBuf(std::vector<std::size_t> dims, double fill = 0.0);
  TensorBuf(std::vector<std::size_t> dims, std::vector<double> data);

  static TensorBuf scalar(double v) { return TensorBuf({1}, {v}); }
  static TensorBuf vector(std::vector<double> v);
  static TensorBuf matrix(std::size_t rows, std::size_t cols,
                          std::vector<double> data);

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const noexcept { return rank() == 2 ? dims_[0] : 1; }
  std::size_t cols() const noexcept { return dims_.back(); }
  bool is_scalar() const noexcept { return data_.size() == 1; }
  bool same_shape(const TensorBuf& other) const noexcept {
    return dims_ == other.dims_;
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
  }
  std::span<double> row(std::size_t r) {
    return std::span<double>(data_).subspan(r * cols(), cols());
  }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }

  // Gradient buffer; present only after a backward pass touched this tensor.
  std::optional<std::vector<double>>& grad() noexcept { return grad_; }
  const std::optional<std::vector<double>>& grad() const noexcept {
    return grad_;
  }

  bool all_finite() const noexcept;

  friend bool operator==(const TensorBuf& a, const TensorBuf& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  std::vector<std::size_t> dims_;
  std::vector<double> data_;
  std::optional<std::vector<double>> grad_;
};

// Rows `indices` of a rank 2 tensor (rank 1 tensors are one row).
TensorBuf select_rows(const TensorBuf& t, std::span<const std::size_t> indices);

}  // namespace pascl
