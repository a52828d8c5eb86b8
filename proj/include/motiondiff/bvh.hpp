#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "motiondiff/rotation.hpp"

namespace motiondiff {

enum class Channel { Xposition, Yposition, Zposition, Xrotation, Yrotation, Zrotation };

const char* channel_name(Channel c);
std::optional<Channel> parse_channel(std::string_view label);
inline bool is_rotation(Channel c) { return c >= Channel::Xrotation; }

struct Joint {
  std::string name;
  int parent = -1;
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();
  std::vector<Channel> channels;
  std::optional<Eigen::Vector3d> end_site;  // leaf "End Site" offset
};

struct Skeleton {
  std::vector<Joint> joints;  // parents precede children, joints[0] is the root

  int channel_count() const;
  int channel_offset(int joint) const;  // first column of this joint in MotionChannels
  int find(std::string_view name) const;  // -1 if absent
  // Column of a given channel of a joint, -1 if the joint does not have it.
  int channel_column(int joint, Channel c) const;
  // Three rotation channels of a joint in declared order, if it has all three.
  std::optional<RotationOrder> rotation_order(int joint) const;
  void validate() const;
};

struct MotionChannels {
  double frame_time = 1.0 / 30.0;
  Eigen::MatrixXd values;  // F x K

  Eigen::Index frames() const { return values.rows(); }
  double frame_rate() const { return 1.0 / frame_time; }
  void validate(const Skeleton& skeleton) const;
};

struct BvhDocument {
  Skeleton skeleton;
  MotionChannels motion;
};

// Every MOTION row must be terminated by a line break, so a file cut short
// inside its last row is rejected rather than read as a shorter number.
BvhDocument parse_bvh(std::string_view text);
BvhDocument load_bvh(const std::string& path);

std::string serialize_bvh(const Skeleton& skeleton, const MotionChannels& motion);

// Exp-map interpolation for joints with three rotation channels, plain linear
// interpolation for everything else.
MotionChannels resample_motion(const Skeleton& skeleton, const MotionChannels& motion, double target_rate);

}  // namespace motiondiff
