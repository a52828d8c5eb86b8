#include "motiondiff/rotation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>

#include "motiondiff/errors.hpp"

namespace motiondiff {

namespace {

constexpr double kSmallAngle = 1e-8;

Eigen::Vector3d unit(Axis a) { return Eigen::Vector3d::Unit(static_cast<int>(a)); }

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d k;
  k << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return k;
}

}  // namespace

RotationOrder parse_rotation_order(const std::string& letters) {
  if (letters.size() != 3) throw ConfigError("rotation order must have three axes: " + letters);
  RotationOrder order{};
  bool seen[3] = {false, false, false};
  for (int i = 0; i < 3; ++i) {
    const char c = char(std::toupper(static_cast<unsigned char>(letters[std::size_t(i)])));
    if (c < 'X' || c > 'Z') throw ConfigError("bad rotation axis in " + letters);
    const int idx = c - 'X';
    if (seen[idx]) throw ConfigError("rotation order repeats an axis: " + letters);
    seen[idx] = true;
    order[std::size_t(i)] = static_cast<Axis>(idx);
  }
  return order;
}

std::string to_string(RotationOrder order) {
  std::string s;
  for (Axis a : order) s.push_back(char('X' + static_cast<int>(a)));
  return s;
}

Eigen::Matrix3d euler_to_matrix(const Eigen::Vector3d& degrees, RotationOrder order) {
  const double k = std::numbers::pi / 180.0;
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  for (int i = 0; i < 3; ++i) r = r * Eigen::AngleAxisd(degrees(i) * k, unit(order[std::size_t(i)])).toRotationMatrix();
  return r;
}

Eigen::Vector3d matrix_to_euler(const Eigen::Matrix3d& r, RotationOrder order) {
  const int i = static_cast<int>(order[0]), j = static_cast<int>(order[1]), k = static_cast<int>(order[2]);
  const double s = ((j - i + 3) % 3 == 1) ? 1.0 : -1.0;  // +1 for cyclic orders
  const double sin2 = std::clamp(s * r(i, k), -1.0, 1.0);
  double a1 = 0.0, a3 = 0.0;
  const double a2 = std::asin(sin2);
  if (std::abs(sin2) < 1.0 - 1e-12) {
    a1 = std::atan2(-s * r(j, k), r(k, k));
    a3 = std::atan2(-s * r(i, j), r(i, i));
  } else {
    // gimbal lock: put the whole remaining rotation on the first axis
    const Eigen::Matrix3d m = r * Eigen::AngleAxisd(a2, Eigen::Vector3d::Unit(j)).toRotationMatrix().transpose();
    const int jn = (i + 1) % 3, kn = (i + 2) % 3;
    a1 = std::atan2(m(kn, jn), m(jn, jn));
  }
  return Eigen::Vector3d(a1, a2, a3) * (180.0 / std::numbers::pi);
}

Eigen::Matrix3d expmap_to_matrix(const Eigen::Vector3d& r) {
  const double theta = r.norm();
  const Eigen::Matrix3d k = skew(r);
  if (theta < kSmallAngle) return Eigen::Matrix3d::Identity() + k + 0.5 * k * k;
  return Eigen::Matrix3d::Identity() + (std::sin(theta) / theta) * k + ((1.0 - std::cos(theta)) / (theta * theta)) * k * k;
}

Eigen::Vector3d canonicalize_expmap(const Eigen::Vector3d& r) {
  const double pi = std::numbers::pi;
  double theta = r.norm();
  if (theta == 0.0) return r;
  Eigen::Vector3d axis = r / theta;
  theta = std::remainder(theta, 2.0 * pi);  // (-pi, pi]
  if (theta < 0) {
    theta = -theta;
    axis = -axis;
  }
  Eigen::Vector3d out = axis * theta;
  if (std::abs(theta - pi) < 1e-12) {
    for (int i = 0; i < 3; ++i) {
      if (std::abs(out(i)) > 1e-12) {
        if (out(i) < 0) out = -out;
        break;
      }
    }
  }
  return out;
}

Eigen::Vector3d matrix_to_expmap(const Eigen::Matrix3d& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  if (q.w() < 0) q.coeffs() = -q.coeffs();
  const Eigen::Vector3d v = q.vec();
  const double s = v.norm();
  if (s < kSmallAngle) return (2.0 / q.w()) * v;
  return canonicalize_expmap((2.0 * std::atan2(s, q.w()) / s) * v);
}

Eigen::Vector3d euler_to_expmap(const Eigen::Vector3d& degrees, RotationOrder order) {
  return matrix_to_expmap(euler_to_matrix(degrees, order));
}

Eigen::Vector3d expmap_to_euler(const Eigen::Vector3d& r, RotationOrder order) {
  return matrix_to_euler(expmap_to_matrix(r), order);
}

double yaw_of(const Eigen::Matrix3d& r) {
  const Eigen::Vector3d f = r * Eigen::Vector3d::UnitZ();
  return std::atan2(f.x(), f.z());
}

Eigen::Matrix3d yaw_matrix(double yaw) { return Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()).toRotationMatrix(); }

}  // namespace motiondiff
