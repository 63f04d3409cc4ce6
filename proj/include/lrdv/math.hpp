// Small linear-algebra helpers shared across the library.
#pragma once

#include <Eigen/Dense>

namespace lrdv {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Skew-symmetric cross-product matrix: skew(w) * v == w.cross(v).
inline Mat3 skew(const Vec3& w) {
  Mat3 m;
  m << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
       -w.y(), w.x(), 0.0;
  return m;
}

/// Inverse of skew(); the argument is symmetrized first.
inline Vec3 vee(const Mat3& m) {
  Mat3 s = 0.5 * (m - m.transpose());
  return Vec3(s(2, 1), s(0, 2), s(1, 0));
}

}  // namespace lrdv
