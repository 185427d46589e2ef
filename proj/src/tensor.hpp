#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "errors.hpp"
#include "rng.hpp"

namespace argus {

// All activations and parameters are dense row-major 2D matrices. Sequences
// are rows x feature dims; scalars are 1x1. Training runs float, the double
// instantiation exists for gradient checking.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatF = Mat<float>;
using MatD = Mat<double>;

template <typename T>
Mat<T> zeros(Eigen::Index r, Eigen::Index c) {
  return Mat<T>::Zero(r, c);
}

// Gaussian init scaled by 1/sqrt(fan_in); fan_in = rows for weight matrices
// applied as x * W.
template <typename T>
Mat<T> randn_scaled(Eigen::Index r, Eigen::Index c, Rng& rng, double scale) {
  Mat<T> m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j)
      m(i, j) = static_cast<T>(normal<double>(rng) * scale);
  return m;
}

template <typename T>
bool all_finite(const Mat<T>& m) {
  return m.allFinite();
}

inline void check_shape(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace argus
