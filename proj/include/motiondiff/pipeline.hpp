#pragma once

// Library side of the command-line tool: config files, feature stores and the
// prepare / train / sample / verify commands.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "motiondiff/audio.hpp"
#include "motiondiff/pose_features.hpp"
#include "motiondiff/training.hpp"
#include "motiondiff/verify.hpp"

namespace motiondiff {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "0.1.0";

// "key = value" lines, '#' starts a comment. Later settings override earlier ones.
class Settings {
 public:
  static Settings parse(std::string_view text);
  static Settings load(const fs::path& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string text(const std::string& key, const std::string& fallback = "") const;
  double number(const std::string& key, double fallback) const;
  long integer(const std::string& key, long fallback) const;
  bool flag(const std::string& key, bool fallback) const;
  std::vector<std::string> list(const std::string& key) const;  // comma separated
  std::vector<double> numbers(const std::string& key) const;

  // Sorted "key=value" lines; the digest hashes exactly this text.
  std::string canonical() const;
  std::string digest() const;
  const std::map<std::string, std::string>& values() const { return values_; }
  void require_known() const;  // ConfigError on an unknown key

 private:
  std::map<std::string, std::string> values_;
};

DenoiserConfig model_config_from(const Settings& s, int input_dim, int cond_dim);
TrainConfig train_config_from(const Settings& s);

enum class ConditioningKind { Mfcc, Dance, Path };
ConditioningKind parse_conditioning(const std::string& s);
std::string to_string(ConditioningKind k);

// Style label of a take: file stem up to the first underscore.
std::string style_label(const fs::path& file);

struct FileReport {
  std::string file;
  std::string style;
  long frames = 0;
  double source_rate = 0.0;
  long windows = 0;
  long dropped_tail = 0;
  std::string note;
};

struct PrepareResult {
  fs::path store;
  std::vector<FileReport> files;
  std::vector<std::string> skipped;
};

// Pairs every BVH in `data_dir` with its WAV (plus a beats CSV for dance
// conditioning), extracts aligned features and writes <out_dir>/features.mdt.
PrepareResult cmd_prepare(const fs::path& data_dir, const fs::path& out_dir, const Settings& settings);

struct FeatureStore {
  nlohmann::json header;
  std::vector<PoseSequence> poses;           // normalized
  std::vector<ConditioningSequence> conds;   // normalized audio, style span is one-hot
};

FeatureStore load_feature_store(const fs::path& path);
// Windows of every sequence, cond = [audio | one-hot style].
Dataset windowed_dataset(const FeatureStore& store, int window, int hop);

struct TrainResult {
  fs::path checkpoint;
  std::vector<LossRecord> log;
};

// Writes <out_dir>/checkpoint.mdc at the configured cadence and loss.csv at the end.
// With `resume` the run continues from that checkpoint.
TrainResult cmd_train(const fs::path& store, const fs::path& out_dir, const Settings& settings,
                      const std::optional<fs::path>& resume = std::nullopt);

struct SampleRequest {
  fs::path checkpoint;
  std::optional<fs::path> unconditional_checkpoint;
  std::optional<fs::path> input;  // WAV, or BVH / path CSV for path conditioning
  std::optional<std::string> style;
  std::vector<std::string> styles;
  std::vector<double> gammas;
  std::optional<double> temperature;
  std::optional<long> frames;
  std::uint64_t seed = 0;
  ReverseVariance variance = ReverseVariance::Posterior;
};

SampleRequest sample_request_from(const Settings& s);

// One BVH per gamma (or a single sample.bvh without a gamma).
std::vector<fs::path> cmd_sample(const SampleRequest& request, const fs::path& out_dir);

struct RunManifest {
  std::string command;
  std::string config_digest;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string started;
  std::string finished;
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
};

std::string utc_timestamp();
void write_manifest(const fs::path& out_dir, const RunManifest& m);

}  // namespace motiondiff
