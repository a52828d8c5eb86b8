#include "motiondiff/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "motiondiff/errors.hpp"

namespace motiondiff {

namespace {

const std::set<std::string> kKnownKeys = {
    // prepare
    "frame_rate", "window", "hop", "conditioning", "mfcc_coeffs", "joints", "root_mode",
    // model
    "blocks", "layers_per_block", "dilation_cycle", "heads", "attention_width", "feedforward_width",
    "step_embed_dim", "max_relative_distance", "schedule_steps", "beta_start", "beta_end",
    // training
    "preset", "lr_max", "warmup_steps", "decay_factor", "decay_interval", "style_dropout", "batch_size",
    "total_steps", "seed", "checkpoint_every",
    // sampling
    "checkpoint", "unconditional_checkpoint", "input", "style", "styles", "gamma", "temperature", "frames",
    "variance"};

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  return e;
}

std::string shortest(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string record_name(const char* kind, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s/%05zu", kind, i);
  return buf;
}

bool same_skeleton(const Skeleton& a, const Skeleton& b) {
  if (a.joints.size() != b.joints.size()) return false;
  for (std::size_t i = 0; i < a.joints.size(); ++i)
    if (a.joints[i].name != b.joints[i].name || a.joints[i].parent != b.joints[i].parent ||
        a.joints[i].channels != b.joints[i].channels)
      return false;
  return true;
}

struct PreparedTake {
  std::string name;
  std::string style;
  Matrix pose_raw;
  Matrix cond_raw;
  FileReport report;
};

// Audio-side features for one take, aligned to `frames` frames.
Matrix conditioning_features(ConditioningKind kind, const fs::path& bvh_or_input, const Skeleton* skel,
                             const MotionChannels* motion, long frames, double rate, int mfcc_coeffs,
                             std::vector<std::string>& columns) {
  AnalysisConfig cfg;
  cfg.frame_rate = rate;
  FeatureMatrix fm;
  switch (kind) {
    case ConditioningKind::Mfcc: {
      fs::path wav = bvh_or_input;
      if (lower_ext(wav) != ".wav") wav.replace_extension(".wav");
      fm = align(mfcc(load_wav(wav.string()), mfcc_coeffs, cfg), rate, frames);
      break;
    }
    case ConditioningKind::Dance: {
      fs::path wav = bvh_or_input, beats = bvh_or_input;
      if (lower_ext(wav) != ".wav") wav.replace_extension(".wav");
      beats.replace_extension(".csv");
      fm = dance_features(load_wav(wav.string()), load_precomputed(beats.string()), frames, cfg);
      break;
    }
    case ConditioningKind::Path: {
      if (skel && motion) {
        fm.frames = make_path_control(root_trajectory(*skel, *motion));
        fm.frame_rate = rate;
        fm = align(fm, rate, frames);
      } else {
        fm = align(load_precomputed(bvh_or_input.string()), rate, frames);
        if (fm.frames.cols() != 3) throw DataError("path control file needs three columns");
      }
      fm.columns = {"yaw_delta", "forward", "sideways"};
      break;
    }
  }
  columns = fm.columns;
  return fm.frames;
}

class TwoModelEpsilon : public EpsilonModel {
 public:
  TwoModelEpsilon(const EpsilonModel& conditional, const EpsilonModel& unconditional, Eigen::Index style_width)
      : cond_(conditional), uncond_(unconditional), style_width_(style_width) {}
  Eigen::Index output_dim() const override { return cond_.output_dim(); }
  Matrix predict(const Matrix& x_n, const Matrix& cond, int n) const override {
    if (style_width_ > 0 && cond.rightCols(style_width_).isZero(0.0)) return uncond_.predict(x_n, cond, n);
    return cond_.predict(x_n, cond, n);
  }

 private:
  const EpsilonModel& cond_;
  const EpsilonModel& uncond_;
  Eigen::Index style_width_;
};

}  // namespace

// ---- settings ---------------------------------------------------------------

Settings Settings::parse(std::string_view text) {
  Settings s;
  std::size_t line_no = 0, start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = text.substr(start, end - start);
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string t = trim(line);
    if (!t.empty()) {
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw ParseError("expected 'key = value'", line_no);
      const std::string key = trim(std::string_view(t).substr(0, eq));
      if (key.empty()) throw ParseError("empty key", line_no);
      s.values_[key] = trim(std::string_view(t).substr(eq + 1));
    }
    start = end + 1;
  }
  return s;
}

Settings Settings::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line(), e.column());
  }
}

void Settings::set(const std::string& key, const std::string& value) { values_[key] = value; }

std::string Settings::text(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Settings::number(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  double v = 0;
  const std::string& s = it->second;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
    throw ConfigError("setting '" + key + "' is not a number: '" + s + "'");
  return v;
}

long Settings::integer(const std::string& key, long fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  long v = 0;
  const std::string& s = it->second;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("setting '" + key + "' is not an integer: '" + s + "'");
  return v;
}

bool Settings::flag(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
  if (it->second == "false" || it->second == "0" || it->second == "no") return false;
  throw ConfigError("setting '" + key + "' is not a boolean: '" + it->second + "'");
}

std::vector<std::string> Settings::list(const std::string& key) const {
  std::vector<std::string> out;
  const std::string s = text(key);
  std::size_t start = 0;
  while (start < s.size()) {
    std::size_t end = s.find(',', start);
    if (end == std::string::npos) end = s.size();
    const std::string item = trim(std::string_view(s).substr(start, end - start));
    if (!item.empty()) out.push_back(item);
    start = end + 1;
  }
  return out;
}

std::vector<double> Settings::numbers(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : list(key)) {
    double v = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || p != item.data() + item.size()) throw ConfigError("setting '" + key + "' has a non-number: '" + item + "'");
    out.push_back(v);
  }
  return out;
}

std::string Settings::canonical() const {
  std::string s;
  for (const auto& [k, v] : values_) s += k + "=" + v + "\n";
  return s;
}

std::string Settings::digest() const { return fnv1a_hex(canonical()); }

void Settings::require_known() const {
  for (const auto& [k, v] : values_)
    if (!kKnownKeys.count(k)) throw ConfigError("unknown setting '" + k + "'");
}

DenoiserConfig model_config_from(const Settings& s, int input_dim, int cond_dim) {
  DenoiserConfig c;
  c.n_blocks = int(s.integer("blocks", c.n_blocks));
  c.layers_per_block = int(s.integer("layers_per_block", c.layers_per_block));
  c.dilation_cycle = int(s.integer("dilation_cycle", c.dilation_cycle));
  c.n_heads = int(s.integer("heads", c.n_heads));
  c.attention_width = int(s.integer("attention_width", c.attention_width));
  c.feedforward_width = int(s.integer("feedforward_width", c.feedforward_width));
  c.step_embed_dim = int(s.integer("step_embed_dim", c.step_embed_dim));
  c.max_relative_distance = int(s.integer("max_relative_distance", c.max_relative_distance));
  c.input_dim = input_dim;
  c.cond_dim = cond_dim;
  c.validate();
  return c;
}

TrainConfig train_config_from(const Settings& s) {
  TrainConfig c = s.has("preset") ? preset_train_config(s.text("preset")) : TrainConfig{};
  c.lr_max = s.number("lr_max", c.lr_max);
  c.warmup_steps = s.integer("warmup_steps", c.warmup_steps);
  c.decay_factor = s.number("decay_factor", c.decay_factor);
  c.decay_interval = s.integer("decay_interval", c.decay_interval);
  c.style_dropout = s.number("style_dropout", c.style_dropout);
  c.batch_size = int(s.integer("batch_size", c.batch_size));
  c.total_steps = s.integer("total_steps", c.total_steps);
  c.seed = std::uint64_t(s.integer("seed", long(c.seed)));
  c.checkpoint_every = s.integer("checkpoint_every", c.checkpoint_every);
  c.validate();
  return c;
}

ConditioningKind parse_conditioning(const std::string& s) {
  if (s == "mfcc") return ConditioningKind::Mfcc;
  if (s == "dance") return ConditioningKind::Dance;
  if (s == "path") return ConditioningKind::Path;
  throw ConfigError("unknown conditioning '" + s + "' (mfcc, dance, path)");
}

std::string to_string(ConditioningKind k) {
  switch (k) {
    case ConditioningKind::Mfcc: return "mfcc";
    case ConditioningKind::Dance: return "dance";
    case ConditioningKind::Path: return "path";
  }
  return "mfcc";
}

std::string style_label(const fs::path& file) {
  const std::string stem = file.stem().string();
  return stem.substr(0, stem.find('_'));
}

// ---- prepare ----------------------------------------------------------------

PrepareResult cmd_prepare(const fs::path& data_dir, const fs::path& out_dir, const Settings& settings) {
  const std::string started = utc_timestamp();
  settings.require_known();
  if (!fs::is_directory(data_dir)) throw DataError("not a directory: " + data_dir.string());
  const double rate = settings.number("frame_rate", 30.0);
  const long window = settings.integer("window", 120), hop = settings.integer("hop", 30);
  const ConditioningKind kind = parse_conditioning(settings.text("conditioning", "mfcc"));
  const int n_mfcc = int(settings.integer("mfcc_coeffs", 20));
  const PoseLayoutConfig layout_cfg{settings.list("joints"), parse_root_mode(settings.text("root_mode", "height_path"))};
  if (!(rate > 0) || window < 1 || hop < 1) throw ConfigError("frame_rate, window and hop must be positive");

  std::vector<fs::path> bvhs;
  for (const auto& entry : fs::directory_iterator(data_dir))
    if (entry.is_regular_file() && lower_ext(entry.path()) == ".bvh") bvhs.push_back(entry.path());
  std::sort(bvhs.begin(), bvhs.end());

  PrepareResult result;
  std::vector<PreparedTake> takes;
  std::optional<Skeleton> skeleton;
  std::optional<FeatureLayout> layout;
  RowVector rest;
  std::vector<std::string> audio_columns;
  std::vector<std::string> inputs;

  for (const auto& bvh : bvhs) {
    const std::string name = bvh.filename().string();
    if (kind != ConditioningKind::Path) {
      fs::path wav = bvh;
      wav.replace_extension(".wav");
      if (!fs::exists(wav)) {
        result.skipped.push_back(name + ": no matching .wav");
        continue;
      }
      fs::path beats = bvh;
      beats.replace_extension(".csv");
      if (kind == ConditioningKind::Dance && !fs::exists(beats)) {
        result.skipped.push_back(name + ": no matching beat .csv");
        continue;
      }
    }
    try {
      const BvhDocument doc = load_bvh(bvh.string());
      if (skeleton && !same_skeleton(*skeleton, doc.skeleton)) {
        result.skipped.push_back(name + ": skeleton differs from the first take");
        continue;
      }
      const MotionChannels motion = resample_motion(doc.skeleton, doc.motion, rate);
      if (!skeleton) {
        skeleton = doc.skeleton;
        layout = resolve_layout(doc.skeleton, layout_cfg);
        rest = motion.values.row(0);
      }
      PreparedTake take;
      take.name = bvh.stem().string();
      take.style = style_label(bvh);
      take.pose_raw = raw_pose_features(doc.skeleton, motion, *layout);
      std::vector<std::string> cols;
      take.cond_raw = conditioning_features(kind, bvh, &doc.skeleton, &motion, long(motion.frames()), rate, n_mfcc, cols);
      if (audio_columns.empty()) audio_columns = cols;
      const long frames = long(motion.frames());
      take.report = {name, take.style, frames, doc.motion.frame_rate(), 0, 0, ""};
      if (frames < window) {
        take.report.note = "shorter than one window";
      } else {
        take.report.windows = (frames - window) / hop + 1;
        take.report.dropped_tail = frames - ((take.report.windows - 1) * hop + window);
      }
      inputs.push_back(bvh.string());
      takes.push_back(std::move(take));
    } catch (const ParseError& e) {
      result.skipped.push_back(name + ": " + e.what());
    } catch (const DataError& e) {
      result.skipped.push_back(name + ": " + e.what());
    }
  }
  if (takes.empty()) throw DataError("no training pairs in " + data_dir.string());

  std::vector<Matrix> pose_raws, cond_raws;
  std::set<std::string> style_set;
  for (const auto& t : takes) {
    pose_raws.push_back(t.pose_raw);
    cond_raws.push_back(t.cond_raw);
    style_set.insert(t.style);
  }
  const std::vector<std::string> styles(style_set.begin(), style_set.end());
  const NormalizationStats pose_stats = NormalizationStats::fit(pose_raws);
  const NormalizationStats cond_stats = NormalizationStats::fit(cond_raws);

  std::vector<std::string> joint_names;
  for (int j : layout->joints) joint_names.push_back(skeleton->joints[std::size_t(j)].name);
  MotionChannels rest_motion;
  rest_motion.frame_time = 1.0 / rate;
  rest_motion.values = rest;

  TensorFile store;
  nlohmann::json items = nlohmann::json::array();
  for (std::size_t i = 0; i < takes.size(); ++i) {
    items.push_back({{"name", takes[i].name}, {"style", takes[i].style}, {"frames", takes[i].pose_raw.rows()}});
    store.records.push_back({record_name("pose", i), pose_stats.normalize(takes[i].pose_raw), DType::Float64});
    store.records.push_back({record_name("cond", i), cond_stats.normalize(takes[i].cond_raw), DType::Float64});
  }
  store.header = {{"format", "motiondiff-features"},
                  {"version", 1},
                  {"frame_rate", rate},
                  {"window", window},
                  {"hop", hop},
                  {"conditioning", to_string(kind)},
                  {"mfcc_coeffs", n_mfcc},
                  {"audio_columns", audio_columns},
                  {"layout", {{"joints", joint_names}, {"root_mode", to_string(layout->root)}}},
                  {"normalization", pose_stats.to_json()},
                  {"cond_normalization", cond_stats.to_json()},
                  {"styles", styles},
                  {"skeleton_bvh", serialize_bvh(*skeleton, rest_motion)},
                  {"items", items}};
  fs::create_directories(out_dir);
  result.store = out_dir / "features.mdt";
  write_file_atomic(result.store, encode_tensor_file(store));
  for (const auto& t : takes) result.files.push_back(t.report);

  RunManifest m;
  m.command = "prepare";
  m.config_digest = settings.digest();
  m.inputs = inputs;
  m.outputs = {result.store.string()};
  m.started = started;
  nlohmann::json files = nlohmann::json::array();
  for (const auto& f : result.files)
    files.push_back({{"file", f.file}, {"style", f.style}, {"frames", f.frames}, {"source_rate", f.source_rate},
                     {"windows", f.windows}, {"dropped_tail", f.dropped_tail}, {"note", f.note}});
  m.extra = {{"files", files}, {"skipped", result.skipped}, {"settings", settings.values()}};
  write_manifest(out_dir, m);
  return result;
}

FeatureStore load_feature_store(const fs::path& path) {
  const TensorFile file = decode_tensor_file(read_binary_file(path));
  if (file.header.value("format", "") != "motiondiff-features") throw DataError(path.string() + " is not a feature store");
  FeatureStore store;
  store.header = file.header;
  const auto styles = file.header.at("styles").get<std::vector<std::string>>();
  const auto& items = file.header.at("items");
  const double rate = file.header.at("frame_rate").get<double>();
  for (std::size_t i = 0; i < items.size(); ++i) {
    const TensorRecord* pose = file.find(record_name("pose", i));
    const TensorRecord* cond = file.find(record_name("cond", i));
    if (!pose || !cond) throw DataError("feature store is missing item " + std::to_string(i));
    const std::string style = items[i].at("style").get<std::string>();
    const auto it = std::find(styles.begin(), styles.end(), style);
    if (it == styles.end()) throw DataError("item style '" + style + "' is not in the label list");
    const Eigen::Index a = cond->value.cols(), s = Eigen::Index(styles.size());
    Matrix frames = Matrix::Zero(cond->value.rows(), a + s);
    frames.leftCols(a) = cond->value;
    frames.col(a + (it - styles.begin())).setOnes();
    store.poses.push_back({pose->value, rate});
    store.conds.push_back({frames, a, s});
  }
  return store;
}

Dataset windowed_dataset(const FeatureStore& store, int window, int hop) {
  Dataset data;
  if (!store.conds.empty()) {
    data.audio_width = store.conds.front().audio_width;
    data.style_width = store.conds.front().style_width;
  }
  for (std::size_t i = 0; i < store.poses.size(); ++i) {
    WindowedItems w = window_dataset(store.poses[i], store.conds[i], window, hop);
    if (w.warning) std::cerr << "warning: item " << i << ": " << *w.warning << "\n";
    for (auto& item : w.items) data.items.push_back(std::move(item));
  }
  if (data.items.empty()) throw DataError("no training windows of " + std::to_string(window) + " frames");
  return data;
}

// ---- train ------------------------------------------------------------------

TrainResult cmd_train(const fs::path& store_path, const fs::path& out_dir, const Settings& settings,
                      const std::optional<fs::path>& resume) {
  const std::string started = utc_timestamp();
  settings.require_known();
  const FeatureStore store = load_feature_store(store_path);
  const int window = int(settings.integer("window", store.header.at("window").get<long>()));
  const int hop = int(settings.integer("hop", store.header.at("hop").get<long>()));
  Dataset data = windowed_dataset(store, window, hop);

  nlohmann::json meta = store.header;
  meta.erase("items");
  meta["window"] = window;
  meta["hop"] = hop;

  std::optional<Trainer> trainer;
  if (resume) {
    Checkpoint ck = load_checkpoint(*resume);
    if (ck.model.input_dim != store.poses.front().frames.cols() ||
        ck.model.cond_dim != data.audio_width + data.style_width)
      throw ConfigError("checkpoint dimensions do not match the feature store");
    if (settings.has("total_steps")) ck.train.total_steps = settings.integer("total_steps", ck.train.total_steps);
    trainer.emplace(std::move(data), std::move(ck));
  } else {
    const DenoiserConfig model =
        model_config_from(settings, int(store.poses.front().frames.cols()), int(data.audio_width + data.style_width));
    const TrainConfig train = train_config_from(settings);
    trainer.emplace(std::move(data), train, model, int(settings.integer("schedule_steps", 100)),
                    settings.number("beta_start", 1e-4), settings.number("beta_end", 5e-2), meta);
  }

  fs::create_directories(out_dir);
  TrainResult result;
  result.checkpoint = out_dir / "checkpoint.mdc";
  const auto sink = [&](const Checkpoint& ck) { save_checkpoint(result.checkpoint, ck); };
  result.log = train(*trainer, sink);
  write_file_atomic(out_dir / "loss.csv", loss_log_csv(result.log));

  RunManifest m;
  m.command = "train";
  m.config_digest = trainer->state().config_digest();
  m.seed = trainer->state().train.seed;
  m.inputs = {store_path.string()};
  if (resume) m.inputs.push_back(resume->string());
  m.outputs = {result.checkpoint.string(), (out_dir / "loss.csv").string()};
  m.started = started;
  m.extra = {{"settings_digest", settings.digest()}, {"steps", trainer->steps_done()}, {"settings", settings.values()}};
  write_manifest(out_dir, m);
  return result;
}

// ---- sample -----------------------------------------------------------------

SampleRequest sample_request_from(const Settings& s) {
  SampleRequest r;
  if (!s.has("checkpoint")) throw ConfigError("sampling needs a checkpoint");
  r.checkpoint = s.text("checkpoint");
  if (s.has("unconditional_checkpoint")) r.unconditional_checkpoint = s.text("unconditional_checkpoint");
  if (s.has("input")) r.input = s.text("input");
  if (s.has("style")) r.style = s.text("style");
  r.styles = s.list("styles");
  r.gammas = s.numbers("gamma");
  if (s.has("temperature")) r.temperature = s.number("temperature", 1.0);
  if (s.has("frames")) r.frames = s.integer("frames", 0);
  r.seed = std::uint64_t(s.integer("seed", 0));
  const std::string v = s.text("variance", "posterior");
  if (v == "posterior") {
    r.variance = ReverseVariance::Posterior;
  } else if (v == "beta") {
    r.variance = ReverseVariance::Beta;
  } else {
    throw ConfigError("variance must be 'posterior' or 'beta'");
  }
  return r;
}

std::vector<fs::path> cmd_sample(const SampleRequest& req, const fs::path& out_dir) {
  const std::string started = utc_timestamp();
  const Checkpoint ck = load_checkpoint(req.checkpoint);
  const nlohmann::json& meta = ck.metadata;
  if (!meta.contains("styles") || !meta.contains("skeleton_bvh"))
    throw DataError("checkpoint carries no feature metadata; train it from a prepared feature store");
  const auto labels = meta.at("styles").get<std::vector<std::string>>();
  const Eigen::Index style_width = Eigen::Index(labels.size());
  const Eigen::Index audio_width = ck.model.cond_dim - style_width;
  const double rate = meta.at("frame_rate").get<double>();
  const ConditioningKind kind = parse_conditioning(meta.at("conditioning").get<std::string>());
  const BvhDocument tmpl = parse_bvh(meta.at("skeleton_bvh").get<std::string>());
  const FeatureLayout layout = resolve_layout(
      tmpl.skeleton, {meta.at("layout").at("joints").get<std::vector<std::string>>(),
                      parse_root_mode(meta.at("layout").at("root_mode").get<std::string>())});
  const NormalizationStats pose_stats = NormalizationStats::from_json(meta.at("normalization"));
  const NormalizationStats cond_stats = NormalizationStats::from_json(meta.at("cond_normalization"));

  auto style_vector = [&](const std::string& name) {
    auto it = std::find(labels.begin(), labels.end(), name);
    long index = -1;
    if (it != labels.end()) {
      index = long(it - labels.begin());
    } else {
      auto [p, ec] = std::from_chars(name.data(), name.data() + name.size(), index);
      if (ec != std::errc() || p != name.data() + name.size() || index < 0 || index >= long(labels.size())) index = -1;
    }
    if (index < 0) {
      std::string all;
      for (const auto& l : labels) all += (all.empty() ? "" : ", ") + l;
      throw ConfigError("unknown style '" + name + "' (available: " + all + ")");
    }
    RowVector v = RowVector::Zero(style_width);
    v(index) = 1.0;
    return v;
  };

  // Conditioning features.
  Matrix audio_raw;
  Eigen::Index frames = 0;
  std::optional<BvhDocument> path_source;
  if (req.input) {
    const fs::path in = *req.input;
    std::vector<std::string> cols;
    if (kind == ConditioningKind::Path && lower_ext(in) == ".bvh") {
      path_source = load_bvh(in.string());
      const MotionChannels m = resample_motion(path_source->skeleton, path_source->motion, rate);
      frames = req.frames ? *req.frames : m.frames();
      audio_raw = conditioning_features(kind, in, &path_source->skeleton, &m, long(frames), rate, 0, cols);
    } else {
      long natural = 0;
      if (kind == ConditioningKind::Path) {
        const FeatureMatrix pc = load_precomputed(in.string());
        natural = long(std::floor(double(pc.length()) / pc.frame_rate * rate + 1e-9));
      } else {
        const Waveform w = load_wav(in.string());
        natural = long(std::floor(w.duration() * rate + 1e-9));
      }
      frames = req.frames ? *req.frames : natural;
      audio_raw = conditioning_features(kind, in, nullptr, nullptr, long(frames), rate,
                                        meta.value("mfcc_coeffs", 20), cols);
    }
    if (audio_raw.cols() != audio_width) throw DataError("input features do not match the checkpoint's audio width");
  } else {
    if (!req.frames) throw ConfigError("without an input file --frames is required");
    frames = *req.frames;
  }
  if (frames < 1) throw ConfigError("frame count must be positive");
  ConditioningSequence cond{Matrix::Zero(frames, audio_width + style_width), audio_width, style_width};
  if (audio_raw.size()) cond.frames.leftCols(audio_width) = cond_stats.normalize(audio_raw);

  // Guidance requests, one per output file.
  std::vector<std::pair<std::string, GuidanceSpec>> runs;
  auto gamma_name = [](double g) { return "sample_gamma_" + shortest(g) + ".bvh"; };
  if (!req.styles.empty()) {
    if (req.style) throw ConfigError("give either --style or --styles");
    if (req.styles.size() != 2) throw ConfigError("--styles takes two labels");
    if (req.gammas.empty()) throw ConfigError("--styles needs --gamma");
    const RowVector a = style_vector(req.styles[0]), b = style_vector(req.styles[1]);
    for (double g : req.gammas) {
      GuidanceSpec spec = GuidanceSpec::interpolated(a, b, g);
      if (req.temperature) {
        spec = GuidanceSpec::interpolated(spec.styles, temperature_scale(spec.weights, *req.temperature));
        spec.temperature_scaled = true;
      }
      runs.emplace_back(gamma_name(g), spec);
    }
  } else {
    if (req.temperature) throw ConfigError("--temperature applies to --styles interpolation");
    if (req.style) {
      const RowVector s = style_vector(*req.style);
      if (req.gammas.empty()) {
        runs.emplace_back("sample.bvh", GuidanceSpec::conditional(s));
      } else {
        for (double g : req.gammas) runs.emplace_back(gamma_name(g), GuidanceSpec::guided(s, g));
      }
    } else {
      if (!req.gammas.empty()) throw ConfigError("--gamma needs --style or --styles");
      runs.emplace_back("sample.bvh", GuidanceSpec::unconditional());
    }
  }

  const Denoiser model(ck.model, ck.params);
  std::optional<Checkpoint> uncond_ck;
  std::optional<Denoiser> uncond_model;
  std::optional<TwoModelEpsilon> pair;
  const EpsilonModel* eps = &model;
  if (req.unconditional_checkpoint) {
    uncond_ck = load_checkpoint(*req.unconditional_checkpoint);
    if (uncond_ck->model.input_dim != ck.model.input_dim || uncond_ck->model.cond_dim != ck.model.cond_dim)
      throw ConfigError("unconditional checkpoint dimensions differ from the conditional one");
    uncond_model.emplace(uncond_ck->model, uncond_ck->params);
    pair.emplace(model, *uncond_model, style_width);
    eps = &*pair;
  }

  const NoiseSchedule sched = ck.schedule();
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  const RowVector rest = tmpl.motion.values.row(0);
  for (const auto& [file, spec] : runs) {
    const Matrix x = sample(*eps, cond, frames, sched, spec, req.seed, req.variance);
    Matrix raw = pose_stats.denormalize(x);
    if (kind == ConditioningKind::Path && layout.root == RootMode::HeightAndPath && audio_raw.size())
      raw.rightCols(3) = audio_raw;
    const MotionChannels motion = motion_from_features(tmpl.skeleton, layout, raw, rate, rest);
    const fs::path out = out_dir / file;
    write_file_atomic(out, serialize_bvh(tmpl.skeleton, motion));
    written.push_back(out);
  }

  RunManifest m;
  m.command = "sample";
  m.config_digest = ck.config_digest();
  m.seed = req.seed;
  m.inputs = {req.checkpoint.string()};
  if (req.unconditional_checkpoint) m.inputs.push_back(req.unconditional_checkpoint->string());
  if (req.input) m.inputs.push_back(req.input->string());
  for (const auto& p : written) m.outputs.push_back(p.string());
  m.started = started;
  m.extra = {{"frames", frames}, {"gammas", req.gammas}, {"styles", req.styles}};
  if (req.style) m.extra["style"] = *req.style;
  if (req.temperature) m.extra["temperature"] = *req.temperature;
  write_manifest(out_dir, m);
  return written;
}

// ---- manifest ---------------------------------------------------------------

nlohmann::json RunManifest::to_json() const {
  return {{"command", command}, {"config_digest", config_digest}, {"seed", seed},   {"inputs", inputs},
          {"outputs", outputs}, {"tool_version", kToolVersion},  {"started", started}, {"finished", finished},
          {"details", extra}};
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const fs::path& out_dir, const RunManifest& m) {
  RunManifest done = m;
  if (done.finished.empty()) done.finished = utc_timestamp();
  fs::create_directories(out_dir);
  write_file_atomic(out_dir / "manifest.json", done.to_json().dump(2) + "\n");
}

}  // namespace motiondiff
