#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace traj {

// Dense row-major matrix of doubles. Scalars are 1x1, row vectors 1xN.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> d;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), d(static_cast<size_t>(r) * c, 0.0) {
    if (r < 0 || c < 0) throw std::invalid_argument("negative matrix dims");
  }
  Mat(int r, int c, std::vector<double> values) : rows(r), cols(c), d(std::move(values)) {
    if (d.size() != static_cast<size_t>(r) * c) {
      throw std::invalid_argument("matrix data length does not match dims");
    }
  }

  static Mat scalar(double v) {
    Mat m(1, 1);
    m.d[0] = v;
    return m;
  }

  int size() const { return rows * cols; }
  double& at(int r, int c) { return d[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return d[static_cast<size_t>(r) * cols + c]; }
  double* row(int r) { return d.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const { return d.data() + static_cast<size_t>(r) * cols; }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  void fill(double v) { std::fill(d.begin(), d.end(), v); }

  bool all_finite() const {
    for (double v : d) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

inline std::string shape_str(const Mat& m) {
  return "(" + std::to_string(m.rows) + "x" + std::to_string(m.cols) + ")";
}

inline void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch, expected " + shape_str(a) +
                                ", actual " + shape_str(b));
  }
}

}  // namespace traj
