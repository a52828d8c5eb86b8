#pragma once

#include <array>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace motiondiff {

enum class Axis { X = 0, Y = 1, Z = 2 };

// Intrinsic rotation order as written in BVH CHANNELS lines, e.g. Z, X, Y means
// R = Rz(a0) * Rx(a1) * Ry(a2) with angles listed in the same order.
using RotationOrder = std::array<Axis, 3>;

RotationOrder parse_rotation_order(const std::string& letters);  // "ZXY"
std::string to_string(RotationOrder order);

Eigen::Matrix3d euler_to_matrix(const Eigen::Vector3d& degrees, RotationOrder order);
// Angles in degrees, in the order given by `order`.
Eigen::Vector3d matrix_to_euler(const Eigen::Matrix3d& r, RotationOrder order);

// Rodrigues. Below |r| = 1e-8 the second-order Taylor expansion is used.
Eigen::Matrix3d expmap_to_matrix(const Eigen::Vector3d& r);
// Log map with |r| <= pi; at exactly pi the first nonzero component is made positive.
Eigen::Vector3d matrix_to_expmap(const Eigen::Matrix3d& r);
Eigen::Vector3d canonicalize_expmap(const Eigen::Vector3d& r);

Eigen::Vector3d euler_to_expmap(const Eigen::Vector3d& degrees, RotationOrder order);
Eigen::Vector3d expmap_to_euler(const Eigen::Vector3d& r, RotationOrder order);

// Heading about +Y: angle of the rotated +Z axis in the ground plane, atan2(f.x, f.z).
double yaw_of(const Eigen::Matrix3d& r);
Eigen::Matrix3d yaw_matrix(double yaw);

}  // namespace motiondiff
