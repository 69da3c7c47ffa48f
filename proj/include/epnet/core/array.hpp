// Dense row-major array of doubles, rank 1..4.
#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace epnet {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

class Array {
 public:
  Array() : shape_{0}, data_{} {}

  explicit Array(Shape shape) : shape_(std::move(shape)) {
    check_rank();
    data_.assign(shape_numel(shape_), 0.0);
  }

  Array(Shape shape, double fill) : Array(std::move(shape)) {
    std::fill(data_.begin(), data_.end(), fill);
  }

  // Rejects NaN/Inf and length mismatch.
  Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_rank();
    if (data_.size() != shape_numel(shape_)) {
      throw std::invalid_argument("Array: data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
    }
    for (double v : data_) {
      if (!std::isfinite(v)) throw std::invalid_argument("Array: non-finite value");
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  // Pointer to row i of a rank-2 array (or pixel (i) of a flattened map).
  double* row(std::size_t i) { return data_.data() + i * (shape_.size() > 1 ? shape_.back() : 1); }
  const double* row(std::size_t i) const {
    return data_.data() + i * (shape_.size() > 1 ? shape_.back() : 1);
  }

  Array& fill(double v) {
    std::fill(data_.begin(), data_.end(), v);
    return *this;
  }

  Array& operator+=(const Array& o) {
    require_same_shape(o, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Array& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  Array reshaped(Shape s) const {
    if (shape_numel(s) != data_.size()) {
      throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(s));
    }
    Array out;
    out.shape_ = std::move(s);
    out.check_rank();
    out.data_ = data_;
    return out;
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void require_same_shape(const Array& o, const char* what) const {
    if (o.shape_ != shape_) {
      throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(shape_) +
                                  " vs " + shape_str(o.shape_));
    }
  }

 private:
  void check_rank() const {
    if (shape_.empty() || shape_.size() > 4) {
      throw std::invalid_argument("Array: rank must be 1..4, got " + std::to_string(shape_.size()));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

inline double dot(const Array& a, const Array& b) {
  a.require_same_shape(b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double max_abs_diff(const Array& a, const Array& b) {
  a.require_same_shape(b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Column-wise concatenation of two N x A and N x B arrays.
inline Array concat_cols(const Array& a, const Array& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
    throw std::invalid_argument("concat_cols: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), da = a.dim(1), db = b.dim(1);
  Array out({n, da + db});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * da, da, out.data() + i * (da + db));
    std::copy_n(b.data() + i * db, db, out.data() + i * (da + db) + da);
  }
  return out;
}

// Inverse of concat_cols: returns the first `da` and remaining columns.
inline std::pair<Array, Array> split_cols(const Array& x, std::size_t da) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (da > d) throw std::invalid_argument("split_cols: split past end");
  Array a({n, da}), b({n, d - da});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(x.data() + i * d, da, a.data() + i * da);
    std::copy_n(x.data() + i * d + da, d - da, b.data() + i * (d - da));
  }
  return {std::move(a), std::move(b)};
}

// Channel concatenation of two H x W x A and H x W x B maps.
inline Array concat_channels(const Array& a, const Array& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1)) {
    throw std::invalid_argument("concat_channels: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  const std::size_t hw = a.dim(0) * a.dim(1);
  Array flat = concat_cols(a.reshaped({hw, a.dim(2)}), b.reshaped({hw, b.dim(2)}));
  return flat.reshaped({a.dim(0), a.dim(1), a.dim(2) + b.dim(2)});
}

inline std::pair<Array, Array> split_channels(const Array& x, std::size_t da) {
  const std::size_t h = x.dim(0), w = x.dim(1);
  auto [a, b] = split_cols(x.reshaped({h * w, x.dim(2)}), da);
  return {a.reshaped({h, w, da}), b.reshaped({h, w, x.dim(2) - da})};
}

}  // namespace epnet
