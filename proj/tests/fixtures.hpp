#pragma once

// Synthetic takes on disk: a three-joint BVH whose spine sways with the loudness
// envelope of a matching WAV. Style "calm" follows the envelope, "wild" opposes it.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>

#include "motiondiff/audio.hpp"
#include "motiondiff/bvh.hpp"

namespace motiondiff::testing {

inline Skeleton fixture_skeleton() {
  const auto rot = std::vector<Channel>{Channel::Zrotation, Channel::Xrotation, Channel::Yrotation};
  Skeleton s;
  s.joints.push_back({"Hips", -1, {0, 90, 0},
                      {Channel::Xposition, Channel::Yposition, Channel::Zposition, Channel::Zrotation,
                       Channel::Xrotation, Channel::Yrotation},
                      std::nullopt});
  s.joints.push_back({"Spine", 0, {0, 10, 0}, rot, std::nullopt});
  s.joints.push_back({"Head", 1, {0, 15, 0}, rot, Eigen::Vector3d(0, 8, 0)});
  return s;
}

inline double envelope(double t, double phase) { return 0.5 + 0.5 * std::sin(2 * std::numbers::pi * 0.7 * t + phase); }

inline void write_take(const std::filesystem::path& dir, const std::string& stem, bool wild, double phase,
                       double seconds, double fps = 60.0) {
  const double sign = wild ? -1.0 : 1.0;
  MotionChannels m;
  m.frame_time = 1.0 / fps;
  const auto frames = Eigen::Index(seconds * fps);
  m.values = Eigen::MatrixXd::Zero(frames, 12);
  for (Eigen::Index f = 0; f < frames; ++f) {
    const double t = double(f) / fps;
    const double e = envelope(t, phase) - 0.5;
    m.values(f, 0) = 0.3 * t;
    m.values(f, 1) = 90 + 2 * e;
    m.values(f, 2) = 5.0 * t;
    m.values(f, 5) = 10 * std::sin(0.2 * t);
    m.values(f, 6) = sign * 30 * e;
    m.values(f, 7) = 5 * e;
    m.values(f, 9) = -sign * 10 * e;
  }
  std::ofstream(dir / (stem + ".bvh")) << serialize_bvh(fixture_skeleton(), m);

  Waveform w;
  w.sample_rate = 16000;
  for (long i = 0; i < long(seconds * w.sample_rate); ++i) {
    const double t = double(i) / w.sample_rate;
    w.samples.push_back(0.8 * envelope(t, phase) * std::sin(2 * std::numbers::pi * 220 * t));
  }
  std::ofstream(dir / (stem + ".wav"), std::ios::binary) << encode_wav(w);
}

}  // namespace motiondiff::testing
