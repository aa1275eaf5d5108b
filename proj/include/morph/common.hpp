#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace morph {

// Error taxonomy shared by the library and the CLI exit-code mapping.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class MissingArtifactError : public std::runtime_error {
public:
  explicit MissingArtifactError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericalError : public std::runtime_error {
public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

class InvalidInputError : public std::invalid_argument {
public:
  explicit InvalidInputError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Dense row-major matrix. All activation/parameter storage in the project
// uses this; kernels operate on the raw data pointer with lda == cols.
template <class T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, T(0)) {}

  void resize(int r, int c) {
    rows = r;
    cols = c;
    v.assign(static_cast<size_t>(r) * c, T(0));
  }
  void zero() { std::fill(v.begin(), v.end(), T(0)); }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  T* row(int i) { return v.data() + static_cast<size_t>(i) * cols; }
  const T* row(int i) const { return v.data() + static_cast<size_t>(i) * cols; }
  T& at(int i, int j) { return v[static_cast<size_t>(i) * cols + j]; }
  const T& at(int i, int j) const { return v[static_cast<size_t>(i) * cols + j]; }
  size_t size() const { return v.size(); }

  bool operator==(const Mat& o) const { return rows == o.rows && cols == o.cols && v == o.v; }
};

// A point cloud is an N x 3 matrix; row order is significant (index-wise
// correspondence is used by the residual links in the generator).
template <class T>
using Cloud = Mat<T>;

using CloudF = Cloud<float>;

template <class T>
Cloud<T> cloud_cast(const CloudF& c) {
  Cloud<T> out(c.rows, 3);
  for (size_t i = 0; i < c.v.size(); ++i) out.v[i] = static_cast<T>(c.v[i]);
  return out;
}

template <class T>
bool all_finite(const T* p, size_t n) {
  for (size_t i = 0; i < n; ++i)
    if (!std::isfinite(static_cast<double>(p[i]))) return false;
  return true;
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidInputError(msg);
}

}  // namespace morph
