#include "motiondiff/pose_features.hpp"

#include <cmath>
#include <numbers>

#include "motiondiff/errors.hpp"

namespace motiondiff {

namespace {

struct RootColumns {
  int x = -1, y = -1, z = -1;
};

RootColumns root_columns(const Skeleton& skel) {
  return {skel.channel_column(0, Channel::Xposition), skel.channel_column(0, Channel::Yposition),
          skel.channel_column(0, Channel::Zposition)};
}

std::array<int, 3> rotation_columns(const Skeleton& skel, int joint, RotationOrder order) {
  std::array<int, 3> cols{};
  for (int a = 0; a < 3; ++a) {
    const auto c = static_cast<Channel>(static_cast<int>(Channel::Xrotation) + static_cast<int>(order[std::size_t(a)]));
    cols[std::size_t(a)] = skel.channel_column(joint, c);
  }
  return cols;
}

Eigen::Matrix3d joint_matrix(const Skeleton& skel, const MotionChannels& m, Eigen::Index f, int joint) {
  auto order = skel.rotation_order(joint);
  if (!order) return Eigen::Matrix3d::Identity();
  const auto cols = rotation_columns(skel, joint, *order);
  return euler_to_matrix(Eigen::Vector3d(m.values(f, cols[0]), m.values(f, cols[1]), m.values(f, cols[2])), *order);
}

}  // namespace

RootMode parse_root_mode(const std::string& s) {
  if (s == "none") return RootMode::None;
  if (s == "position") return RootMode::Position;
  if (s == "height_path") return RootMode::HeightAndPath;
  throw ConfigError("unknown root mode '" + s + "' (none, position, height_path)");
}

std::string to_string(RootMode mode) {
  switch (mode) {
    case RootMode::None: return "none";
    case RootMode::Position: return "position";
    case RootMode::HeightAndPath: return "height_path";
  }
  return "none";
}

int FeatureLayout::root_width() const {
  switch (root) {
    case RootMode::None: return 0;
    case RootMode::Position: return 3;
    case RootMode::HeightAndPath: return 4;
  }
  return 0;
}

FeatureLayout resolve_layout(const Skeleton& skeleton, const PoseLayoutConfig& config) {
  FeatureLayout layout;
  layout.root = config.root;
  if (config.joints.empty()) {
    for (int j = 0; j < int(skeleton.joints.size()); ++j)
      if (skeleton.rotation_order(j)) layout.joints.push_back(j);
  } else {
    for (const auto& name : config.joints) {
      const int j = skeleton.find(name);
      if (j < 0) throw ConfigError("layout joint '" + name + "' is not in the skeleton");
      if (!skeleton.rotation_order(j)) throw ConfigError("layout joint '" + name + "' lacks three rotation channels");
      for (int seen : layout.joints)
        if (seen == j) throw ConfigError("layout lists joint '" + name + "' twice");
      layout.joints.push_back(j);
    }
  }
  if (layout.root != RootMode::None) {
    const RootColumns rc = root_columns(skeleton);
    if (rc.x < 0 || rc.y < 0 || rc.z < 0) throw ConfigError("root mode " + to_string(layout.root) + " needs root position channels");
  }
  if (layout.width() == 0) throw ConfigError("pose layout has no features");
  return layout;
}

NormalizationStats NormalizationStats::fit(std::span<const Matrix> sequences) {
  if (sequences.empty()) throw ContractViolation("no sequences to fit normalization on");
  const Eigen::Index d = sequences.front().cols();
  RowVector sum = RowVector::Zero(d);
  double count = 0;
  for (const auto& s : sequences) {
    if (s.cols() != d) throw ContractViolation("feature width differs between sequences");
    sum += s.colwise().sum();
    count += double(s.rows());
  }
  if (count == 0) throw ContractViolation("no frames to fit normalization on");
  NormalizationStats st;
  st.mean = sum / count;
  RowVector sq = RowVector::Zero(d);
  for (const auto& s : sequences) sq += (s.rowwise() - st.mean).array().square().colwise().sum().matrix();
  st.std = (sq / count).array().sqrt().matrix();
  for (Eigen::Index i = 0; i < d; ++i)
    if (!(st.std(i) >= 1e-8)) st.std(i) = 1.0;
  return st;
}

Matrix NormalizationStats::normalize(const Matrix& x) const {
  if (x.cols() != mean.size()) throw ContractViolation("normalization width mismatch");
  return (x.rowwise() - mean).array().rowwise() / std.array();
}

Matrix NormalizationStats::denormalize(const Matrix& x) const {
  if (x.cols() != mean.size()) throw ContractViolation("normalization width mismatch");
  return (x.array().rowwise() * std.array()).matrix().rowwise() + mean;
}

nlohmann::json NormalizationStats::to_json() const {
  return {{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
          {"std", std::vector<double>(std.data(), std.data() + std.size())}};
}

NormalizationStats NormalizationStats::from_json(const nlohmann::json& j) {
  const auto m = j.at("mean").get<std::vector<double>>();
  const auto s = j.at("std").get<std::vector<double>>();
  if (m.size() != s.size()) throw DataError("normalization mean/std widths differ");
  NormalizationStats st;
  st.mean = Eigen::Map<const RowVector>(m.data(), Eigen::Index(m.size()));
  st.std = Eigen::Map<const RowVector>(s.data(), Eigen::Index(s.size()));
  return st;
}

Matrix raw_pose_features(const Skeleton& skeleton, const MotionChannels& motion, const FeatureLayout& layout) {
  motion.validate(skeleton);
  const Eigen::Index frames = motion.frames();
  Matrix out(frames, layout.width());
  for (Eigen::Index f = 0; f < frames; ++f) {
    for (std::size_t k = 0; k < layout.joints.size(); ++k) {
      const int j = layout.joints[k];
      Eigen::Matrix3d r = joint_matrix(skeleton, motion, f, j);
      if (j == 0 && layout.root == RootMode::HeightAndPath) r = yaw_matrix(yaw_of(r)).transpose() * r;
      out.block<1, 3>(f, 3 * Eigen::Index(k)) = matrix_to_expmap(r).transpose();
    }
  }
  const Eigen::Index c0 = 3 * Eigen::Index(layout.joints.size());
  const RootColumns rc = root_columns(skeleton);
  if (layout.root == RootMode::Position) {
    out.col(c0) = motion.values.col(rc.x);
    out.col(c0 + 1) = motion.values.col(rc.y);
    out.col(c0 + 2) = motion.values.col(rc.z);
  } else if (layout.root == RootMode::HeightAndPath) {
    out.col(c0) = motion.values.col(rc.y);
    out.middleCols(c0 + 1, 3) = make_path_control(root_trajectory(skeleton, motion));
  }
  return out;
}

PoseSequence make_pose_features(const Skeleton& skeleton, const MotionChannels& motion, const FeatureLayout& layout,
                                const NormalizationStats& stats) {
  return {stats.normalize(raw_pose_features(skeleton, motion, layout)), motion.frame_rate()};
}

MotionChannels motion_from_features(const Skeleton& skeleton, const FeatureLayout& layout, const Matrix& raw,
                                    double frame_rate, const RowVector& rest, RootStart start) {
  if (raw.cols() != layout.width()) throw ContractViolation("feature width does not match the layout");
  if (rest.size() != skeleton.channel_count()) throw ContractViolation("rest pose width does not match the skeleton");
  if (raw.rows() < 1) throw ContractViolation("no frames to convert");
  MotionChannels m;
  m.frame_time = 1.0 / frame_rate;
  m.values = rest.replicate(raw.rows(), 1);
  const Eigen::Index c0 = 3 * Eigen::Index(layout.joints.size());
  const RootColumns rc = root_columns(skeleton);

  RootTrajectory path;
  if (layout.root == RootMode::HeightAndPath) path = integrate_path_control(raw.middleCols(c0 + 1, 3), start.x, start.z, start.yaw);

  for (Eigen::Index f = 0; f < raw.rows(); ++f) {
    for (std::size_t k = 0; k < layout.joints.size(); ++k) {
      const int j = layout.joints[k];
      const RotationOrder order = *skeleton.rotation_order(j);
      Eigen::Matrix3d r = expmap_to_matrix(raw.block<1, 3>(f, 3 * Eigen::Index(k)).transpose());
      if (j == 0 && layout.root == RootMode::HeightAndPath) r = yaw_matrix(path.yaw(f)) * r;
      const Eigen::Vector3d deg = matrix_to_euler(r, order);
      const auto cols = rotation_columns(skeleton, j, order);
      for (int a = 0; a < 3; ++a) m.values(f, cols[std::size_t(a)]) = deg(a);
    }
  }
  if (layout.root == RootMode::Position) {
    m.values.col(rc.x) = raw.col(c0);
    m.values.col(rc.y) = raw.col(c0 + 1);
    m.values.col(rc.z) = raw.col(c0 + 2);
  } else if (layout.root == RootMode::HeightAndPath) {
    m.values.col(rc.y) = raw.col(c0);
    m.values.col(rc.x) = path.x;
    m.values.col(rc.z) = path.z;
  }
  return m;
}

Matrix make_path_control(const RootTrajectory& tr) {
  const Eigen::Index n = tr.x.size();
  if (tr.z.size() != n || tr.yaw.size() != n) throw ContractViolation("trajectory components differ in length");
  if (n < 2) throw DataError("path control needs at least two frames");
  Matrix out(n, 3);
  for (Eigen::Index t = 0; t + 1 < n; ++t) {
    const double psi = tr.yaw(t);
    const double dx = tr.x(t + 1) - tr.x(t);
    const double dz = tr.z(t + 1) - tr.z(t);
    out(t, 0) = std::remainder(tr.yaw(t + 1) - psi, 2.0 * std::numbers::pi);
    out(t, 1) = dx * std::sin(psi) + dz * std::cos(psi);
    out(t, 2) = dx * std::cos(psi) - dz * std::sin(psi);
  }
  out.row(n - 1) = out.row(n - 2);
  return out;
}

RootTrajectory integrate_path_control(const Matrix& control, double x0, double z0, double yaw0) {
  if (control.cols() != 3) throw ContractViolation("path control has three columns");
  const Eigen::Index n = control.rows();
  RootTrajectory tr{Eigen::VectorXd(n), Eigen::VectorXd(n), Eigen::VectorXd(n)};
  if (n == 0) return tr;
  tr.x(0) = x0;
  tr.z(0) = z0;
  tr.yaw(0) = yaw0;
  for (Eigen::Index t = 0; t + 1 < n; ++t) {
    const double psi = tr.yaw(t);
    tr.x(t + 1) = tr.x(t) + control(t, 1) * std::sin(psi) + control(t, 2) * std::cos(psi);
    tr.z(t + 1) = tr.z(t) + control(t, 1) * std::cos(psi) - control(t, 2) * std::sin(psi);
    tr.yaw(t + 1) = psi + control(t, 0);
  }
  return tr;
}

RootTrajectory root_trajectory(const Skeleton& skeleton, const MotionChannels& motion) {
  const RootColumns rc = root_columns(skeleton);
  if (rc.x < 0 || rc.z < 0) throw ConfigError("root has no horizontal position channels");
  const Eigen::Index n = motion.frames();
  RootTrajectory tr{motion.values.col(rc.x), motion.values.col(rc.z), Eigen::VectorXd(n)};
  for (Eigen::Index f = 0; f < n; ++f) tr.yaw(f) = yaw_of(joint_matrix(skeleton, motion, f, 0));
  return tr;
}

WindowedItems window_dataset(const PoseSequence& pose, const ConditioningSequence& cond, int window, int hop) {
  if (window < 1 || hop < 1) throw ContractViolation("window and hop must be positive");
  const Eigen::Index length = pose.frames.rows();
  if (cond.length() != length)
    throw ContractViolation("pose has " + std::to_string(length) + " frames, conditioning has " + std::to_string(cond.length()));
  WindowedItems out;
  if (window > length) {
    out.warning = "sequence of " + std::to_string(length) + " frames is shorter than the window of " + std::to_string(window);
    return out;
  }
  for (Eigen::Index start = 0; start + window <= length; start += hop)
    out.items.push_back({pose.frames.middleRows(start, window), cond.frames.middleRows(start, window)});
  return out;
}

}  // namespace motiondiff
