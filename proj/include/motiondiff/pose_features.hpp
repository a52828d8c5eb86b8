#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "motiondiff/bvh.hpp"
#include "motiondiff/diffusion.hpp"

namespace motiondiff {

enum class RootMode {
  None,           // root translation held at the rest pose
  Position,       // absolute x, y, z
  HeightAndPath,  // height plus heading-relative (yaw delta, forward, sideways) per frame
};

RootMode parse_root_mode(const std::string& s);
std::string to_string(RootMode mode);

struct PoseLayoutConfig {
  std::vector<std::string> joints;  // empty: every joint with three rotation channels
  RootMode root = RootMode::HeightAndPath;
};

struct FeatureLayout {
  std::vector<int> joints;  // skeleton indices, in feature order
  RootMode root = RootMode::HeightAndPath;

  int root_width() const;
  int width() const { return 3 * int(joints.size()) + root_width(); }
};

FeatureLayout resolve_layout(const Skeleton& skeleton, const PoseLayoutConfig& config);

// Per-feature z-score statistics. Features with std below 1e-8 keep std = 1.
struct NormalizationStats {
  RowVector mean;
  RowVector std;

  static NormalizationStats fit(std::span<const Matrix> sequences);
  Matrix normalize(const Matrix& x) const;
  Matrix denormalize(const Matrix& x) const;
  nlohmann::json to_json() const;
  static NormalizationStats from_json(const nlohmann::json& j);
};

// Un-normalized features: per joint the exp map of its rotation relative to the
// T-pose (in HeightAndPath mode the root's heading is removed), then root channels.
Matrix raw_pose_features(const Skeleton& skeleton, const MotionChannels& motion, const FeatureLayout& layout);

PoseSequence make_pose_features(const Skeleton& skeleton, const MotionChannels& motion, const FeatureLayout& layout,
                                const NormalizationStats& stats);

struct RootStart {
  double x = 0.0;
  double z = 0.0;
  double yaw = 0.0;
};

// Inverse of raw_pose_features. Channels the layout does not drive are copied
// from `rest` (one row of K channel values), e.g. a fixed hand pose. In
// HeightAndPath mode the path is integrated from `start`.
MotionChannels motion_from_features(const Skeleton& skeleton, const FeatureLayout& layout, const Matrix& raw,
                                    double frame_rate, const RowVector& rest, RootStart start = {});

struct RootTrajectory {
  Eigen::VectorXd x;
  Eigen::VectorXd z;
  Eigen::VectorXd yaw;  // heading about +Y, radians
};

// Columns: yaw delta (radians), forward and sideways displacement (units/frame),
// both expressed in the heading frame of the earlier frame. Y is up, forward is
// (sin yaw, 0, cos yaw), sideways is (cos yaw, 0, -sin yaw). The last frame
// repeats the one before.
Matrix make_path_control(const RootTrajectory& trajectory);
RootTrajectory integrate_path_control(const Matrix& control, double x0 = 0.0, double z0 = 0.0, double yaw0 = 0.0);
RootTrajectory root_trajectory(const Skeleton& skeleton, const MotionChannels& motion);

struct WindowedItems {
  std::vector<TrainingItem> items;
  std::optional<std::string> warning;
};

// floor((length - window)/hop) + 1 windows; a sequence shorter than the window
// yields nothing and a warning.
WindowedItems window_dataset(const PoseSequence& pose, const ConditioningSequence& cond, int window, int hop);

}  // namespace motiondiff
