#include "motiondiff/bvh.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "motiondiff/errors.hpp"

namespace motiondiff {

namespace {

constexpr const char* kChannelNames[] = {"Xposition", "Yposition", "Zposition", "Xrotation", "Yrotation", "Zrotation"};

struct Token {
  std::string_view text;
  std::size_t line = 0;
  std::size_t column = 0;
};

class Lexer {
 public:
  explicit Lexer(std::string_view text) : text_(text) {}

  bool at_end() {
    skip_space();
    return pos_ >= text_.size();
  }

  Token next(const char* expected_what) {
    skip_space();
    if (pos_ >= text_.size()) throw ParseError(std::string("unexpected end of file, expected ") + expected_what, line_, col_);
    Token t{{}, line_, col_};
    const std::size_t start = pos_;
    if (text_[pos_] == '{' || text_[pos_] == '}') {
      advance();
    } else {
      while (pos_ < text_.size() && !is_space(text_[pos_]) && text_[pos_] != '{' && text_[pos_] != '}') advance();
    }
    t.text = text_.substr(start, pos_ - start);
    return t;
  }

  void expect(std::string_view word) {
    Token t = next(std::string(word).c_str());
    if (t.text != word) throw ParseError("expected '" + std::string(word) + "', found '" + std::string(t.text) + "'", t.line, t.column);
  }

  // Position bookkeeping for the MOTION table.
  std::size_t line() const { return line_; }
  bool newline_follows() const {
    for (std::size_t p = pos_; p < text_.size(); ++p) {
      if (text_[p] == '\n' || text_[p] == '\r') return true;
      if (!is_space(text_[p])) return false;
    }
    return false;
  }

 private:
  static bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void skip_space() {
    while (pos_ < text_.size() && is_space(text_[pos_])) advance();
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t col_ = 1;
};

double to_double(const Token& t) {
  double v = 0.0;
  const char* first = t.text.data();
  const char* last = first + t.text.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw ParseError("expected a number, found '" + std::string(t.text) + "'", t.line, t.column);
  if (!std::isfinite(v)) throw ParseError("non-finite value '" + std::string(t.text) + "'", t.line, t.column);
  return v;
}

long to_int(const Token& t) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
  if (ec != std::errc() || ptr != t.text.data() + t.text.size())
    throw ParseError("expected an integer, found '" + std::string(t.text) + "'", t.line, t.column);
  return v;
}

Eigen::Vector3d read_offset(Lexer& lex) {
  lex.expect("OFFSET");
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) v(i) = to_double(lex.next("offset value"));
  return v;
}

void read_joint_body(Lexer& lex, Skeleton& skel, int self) {
  lex.expect("{");
  skel.joints[std::size_t(self)].offset = read_offset(lex);
  Token t = lex.next("CHANNELS");
  if (t.text == "CHANNELS") {
    Token nt = lex.next("channel count");
    const long n = to_int(nt);
    if (n < 0 || n > 6) throw ParseError("channel count must be 0..6", nt.line, nt.column);
    auto& chans = skel.joints[std::size_t(self)].channels;
    for (long i = 0; i < n; ++i) {
      Token c = lex.next("channel label");
      auto ch = parse_channel(c.text);
      if (!ch) throw ParseError("unknown channel '" + std::string(c.text) + "'", c.line, c.column);
      for (Channel seen : chans)
        if (seen == *ch) throw ParseError("duplicate channel '" + std::string(c.text) + "'", c.line, c.column);
      chans.push_back(*ch);
    }
    t = lex.next("JOINT, End Site or '}'");
  }
  while (t.text != "}") {
    if (t.text == "JOINT") {
      Token name = lex.next("joint name");
      if (skel.find(name.text) >= 0) throw ParseError("duplicate joint name '" + std::string(name.text) + "'", name.line, name.column);
      Joint j;
      j.name = std::string(name.text);
      j.parent = self;
      skel.joints.push_back(std::move(j));
      read_joint_body(lex, skel, int(skel.joints.size()) - 1);
    } else if (t.text == "End") {
      lex.expect("Site");
      if (skel.joints[std::size_t(self)].end_site) throw ParseError("second End Site in one joint", t.line, t.column);
      lex.expect("{");
      skel.joints[std::size_t(self)].end_site = read_offset(lex);
      lex.expect("}");
    } else {
      throw ParseError("expected JOINT, End Site or '}', found '" + std::string(t.text) + "'", t.line, t.column);
    }
    t = lex.next("'}'");
  }
}

void append_fixed(std::string& out, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  out += buf;
}

void write_joint(std::string& out, const Skeleton& skel, int j, int depth) {
  const Joint& joint = skel.joints[std::size_t(j)];
  const std::string ind(std::size_t(depth), '\t');
  out += ind + (j == 0 ? "ROOT " : "JOINT ") + joint.name + "\n" + ind + "{\n";
  out += ind + "\tOFFSET ";
  for (int i = 0; i < 3; ++i) {
    if (i) out += ' ';
    append_fixed(out, joint.offset(i));
  }
  out += "\n" + ind + "\tCHANNELS " + std::to_string(joint.channels.size());
  for (Channel c : joint.channels) out += std::string(" ") + channel_name(c);
  out += "\n";
  for (std::size_t k = 0; k < skel.joints.size(); ++k)
    if (skel.joints[k].parent == j) write_joint(out, skel, int(k), depth + 1);
  if (joint.end_site) {
    out += ind + "\tEnd Site\n" + ind + "\t{\n" + ind + "\t\tOFFSET ";
    for (int i = 0; i < 3; ++i) {
      if (i) out += ' ';
      append_fixed(out, (*joint.end_site)(i));
    }
    out += "\n" + ind + "\t}\n";
  }
  out += ind + "}\n";
}

}  // namespace

const char* channel_name(Channel c) { return kChannelNames[static_cast<int>(c)]; }

std::optional<Channel> parse_channel(std::string_view label) {
  for (int i = 0; i < 6; ++i)
    if (label == kChannelNames[i]) return static_cast<Channel>(i);
  return std::nullopt;
}

int Skeleton::channel_count() const {
  int n = 0;
  for (const auto& j : joints) n += int(j.channels.size());
  return n;
}

int Skeleton::channel_offset(int joint) const {
  int n = 0;
  for (int i = 0; i < joint; ++i) n += int(joints[std::size_t(i)].channels.size());
  return n;
}

int Skeleton::find(std::string_view name) const {
  for (std::size_t i = 0; i < joints.size(); ++i)
    if (joints[i].name == name) return int(i);
  return -1;
}

int Skeleton::channel_column(int joint, Channel c) const {
  const auto& chans = joints[std::size_t(joint)].channels;
  for (std::size_t i = 0; i < chans.size(); ++i)
    if (chans[i] == c) return channel_offset(joint) + int(i);
  return -1;
}

std::optional<RotationOrder> Skeleton::rotation_order(int joint) const {
  RotationOrder order{};
  int n = 0;
  for (Channel c : joints[std::size_t(joint)].channels) {
    if (!is_rotation(c)) continue;
    if (n == 3) return std::nullopt;
    order[std::size_t(n++)] = static_cast<Axis>(static_cast<int>(c) - static_cast<int>(Channel::Xrotation));
  }
  if (n != 3) return std::nullopt;
  return order;
}

void Skeleton::validate() const {
  if (joints.empty()) throw ContractViolation("skeleton has no joints");
  for (std::size_t i = 0; i < joints.size(); ++i) {
    const int p = joints[i].parent;
    if (i == 0 && p != -1) throw ContractViolation("first joint must be the root");
    if (i > 0 && (p < 0 || p >= int(i))) throw ContractViolation("joint '" + joints[i].name + "' has an invalid parent");
    if (joints[i].name.empty() || joints[i].name.find_first_of(" \t\r\n{}") != std::string::npos)
      throw ContractViolation("joint name is empty or has whitespace: '" + joints[i].name + "'");
    if (!joints[i].offset.allFinite() || (joints[i].end_site && !joints[i].end_site->allFinite()))
      throw ContractViolation("non-finite offset in joint '" + joints[i].name + "'");
  }
}

void MotionChannels::validate(const Skeleton& skeleton) const {
  if (values.rows() < 1) throw ContractViolation("motion has no frames");
  if (values.cols() != skeleton.channel_count())
    throw ContractViolation("motion has " + std::to_string(values.cols()) + " channels, skeleton declares " +
                            std::to_string(skeleton.channel_count()));
  if (!values.allFinite()) throw ContractViolation("motion has non-finite values");
  if (!(frame_time > 0.0) || !std::isfinite(frame_time)) throw ContractViolation("frame time must be positive");
}

BvhDocument parse_bvh(std::string_view text) {
  Lexer lex(text);
  BvhDocument doc;
  lex.expect("HIERARCHY");
  lex.expect("ROOT");
  Token name = lex.next("root name");
  doc.skeleton.joints.push_back(Joint{std::string(name.text), -1, {}, {}, {}});
  read_joint_body(lex, doc.skeleton, 0);

  Token t = lex.next("MOTION");
  if (t.text == "ROOT") throw ParseError("more than one ROOT", t.line, t.column);
  if (t.text != "MOTION") throw ParseError("expected 'MOTION', found '" + std::string(t.text) + "'", t.line, t.column);
  lex.expect("Frames:");
  Token ft = lex.next("frame count");
  const long frames = to_int(ft);
  if (frames < 1) throw ParseError("frame count must be at least 1", ft.line, ft.column);
  lex.expect("Frame");
  lex.expect("Time:");
  Token dt = lex.next("frame time");
  doc.motion.frame_time = to_double(dt);
  if (!(doc.motion.frame_time > 0.0)) throw ParseError("frame time must be positive", dt.line, dt.column);

  const int k = doc.skeleton.channel_count();
  doc.motion.values.resize(frames, k);
  for (long f = 0; f < frames; ++f) {
    std::size_t row_line = 0;
    for (int c = 0; c < k; ++c) {
      Token v = lex.next("motion value");
      if (c == 0) row_line = v.line;
      if (v.line != row_line)
        throw ParseError("frame " + std::to_string(f + 1) + " has " + std::to_string(c) + " values, expected " + std::to_string(k),
                         row_line);
      doc.motion.values(f, c) = to_double(v);
    }
    if (!lex.newline_follows()) {
      if (lex.at_end()) throw ParseError("file ends inside frame " + std::to_string(f + 1), lex.line());
      throw ParseError("frame " + std::to_string(f + 1) + " has more than " + std::to_string(k) + " values", lex.line());
    }
  }
  if (!lex.at_end()) {
    Token extra = lex.next("end of file");
    throw ParseError("more motion rows than the declared " + std::to_string(frames) + " frames", extra.line, extra.column);
  }
  return doc;
}

BvhDocument load_bvh(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_bvh(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what(), e.line(), e.column());
  }
}

std::string serialize_bvh(const Skeleton& skeleton, const MotionChannels& motion) {
  skeleton.validate();
  motion.validate(skeleton);
  std::string out = "HIERARCHY\n";
  write_joint(out, skeleton, 0, 0);
  out += "MOTION\nFrames: " + std::to_string(motion.frames()) + "\nFrame Time: ";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, motion.frame_time);
  out.append(buf, res.ptr);
  out += "\n";
  for (Eigen::Index f = 0; f < motion.frames(); ++f) {
    for (Eigen::Index c = 0; c < motion.values.cols(); ++c) {
      if (c) out += ' ';
      append_fixed(out, motion.values(f, c));
    }
    out += "\n";
  }
  return out;
}

MotionChannels resample_motion(const Skeleton& skeleton, const MotionChannels& motion, double target_rate) {
  if (motion.values.rows() < 1) throw DataError("cannot resample empty motion");
  if (!(target_rate > 0.0)) throw ContractViolation("target rate must be positive");
  motion.validate(skeleton);
  const double target_dt = 1.0 / target_rate;
  if (std::abs(target_dt - motion.frame_time) <= 1e-12 * motion.frame_time) return motion;

  const Eigen::Index f_in = motion.frames();
  const double duration = double(f_in - 1) * motion.frame_time;
  const Eigen::Index f_out = Eigen::Index(std::floor(duration * target_rate + 1e-9)) + 1;

  // Rotations of three-channel joints become exp-map triples before interpolation.
  struct Group {
    std::array<int, 3> cols;
    RotationOrder order;
  };
  std::vector<Group> groups;
  std::vector<bool> grouped(std::size_t(motion.values.cols()), false);
  for (int j = 0; j < int(skeleton.joints.size()); ++j) {
    auto order = skeleton.rotation_order(j);
    if (!order) continue;
    Group g{{}, *order};
    for (int a = 0; a < 3; ++a) {
      const Channel c = static_cast<Channel>(static_cast<int>(Channel::Xrotation) + static_cast<int>((*order)[std::size_t(a)]));
      g.cols[std::size_t(a)] = skeleton.channel_column(j, c);
      grouped[std::size_t(g.cols[std::size_t(a)])] = true;
    }
    groups.push_back(g);
  }
  Eigen::MatrixXd work = motion.values;
  for (const Group& g : groups) {
    for (Eigen::Index f = 0; f < f_in; ++f) {
      Eigen::Vector3d deg(motion.values(f, g.cols[0]), motion.values(f, g.cols[1]), motion.values(f, g.cols[2]));
      const Eigen::Vector3d r = euler_to_expmap(deg, g.order);
      for (int a = 0; a < 3; ++a) work(f, g.cols[std::size_t(a)]) = r(a);
    }
  }

  MotionChannels out;
  out.frame_time = target_dt;
  out.values.resize(f_out, motion.values.cols());
  for (Eigen::Index k = 0; k < f_out; ++k) {
    const double u = double(k) * target_dt / motion.frame_time;
    Eigen::Index i0 = std::min<Eigen::Index>(Eigen::Index(std::floor(u)), f_in - 1);
    const Eigen::Index i1 = std::min<Eigen::Index>(i0 + 1, f_in - 1);
    const double w = std::clamp(u - double(i0), 0.0, 1.0);
    out.values.row(k) = (1.0 - w) * work.row(i0) + w * work.row(i1);
  }
  for (const Group& g : groups) {
    for (Eigen::Index f = 0; f < f_out; ++f) {
      Eigen::Vector3d r(out.values(f, g.cols[0]), out.values(f, g.cols[1]), out.values(f, g.cols[2]));
      const Eigen::Vector3d deg = expmap_to_euler(r, g.order);
      for (int a = 0; a < 3; ++a) out.values(f, g.cols[std::size_t(a)]) = deg(a);
    }
  }
  return out;
}

}  // namespace motiondiff
