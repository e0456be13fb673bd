#include "pascl/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "pascl/errors.hpp"

namespace pascl {
namespace {

std::size_t extent_product(const std::vector<std::size_t>& dims) {
  if (dims.empty() || dims.size() > 2) {
    throw InputError("tensor rank must be 1 or 2");
  }
  for (std::size_t d : dims) {
    if (d == 0) throw InputError("tensor extents must be positive");
  }
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         std::multiplies<>());
}

}  // namespace

TensorBuf::TensorBuf(std::vector<std::size_t> dims, double fill)
    : dims_(std::move(dims)), data_(extent_product(dims_), fill) {}

TensorBuf::TensorBuf(std::vector<std::size_t> dims, std::vector<double> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  if (data_.size() != extent_product(dims_)) {
    throw InputError("tensor data length does not match its dims");
  }
}

TensorBuf TensorBuf::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return TensorBuf({n}, std::move(v));
}

TensorBuf TensorBuf::matrix(std::size_t rows, std::size_t cols,
                            std::vector<double> data) {
  return TensorBuf({rows, cols}, std::move(data));
}

bool TensorBuf::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

TensorBuf select_rows(const TensorBuf& t, std::span<const std::size_t> indices) {
  if (indices.empty()) throw InputError("select_rows: empty index list");
  const std::size_t cols = t.cols();
  std::vector<double> out;
  out.reserve(indices.size() * cols);
  for (std::size_t r : indices) {
    if (r >= t.rows()) throw InputError("select_rows: row index out of range");
    auto src = t.row(r);
    out.insert(out.end(), src.begin(), src.end());
  }
  return TensorBuf::matrix(indices.size(), cols, std::move(out));
}

}  // namespace pascl
