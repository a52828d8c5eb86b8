#include <iostream>

#include <CLI11.hpp>

#include "motiondiff/errors.hpp"
#include "motiondiff/pipeline.hpp"

using namespace motiondiff;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kVerify = 3 };

struct Options {
  std::string config;
  std::string out;
  std::optional<long> seed;
  // prepare / train
  std::string data_dir;
  std::string features;
  // sample
  std::string input;
  std::string checkpoint;
  std::string style;
  std::string styles;
  std::string gamma;
  std::optional<double> temperature;
  std::optional<long> frames;
  // verify
  std::string suite = "all";
};

Settings merged_settings(const Options& o) {
  Settings s = o.config.empty() ? Settings{} : Settings::load(o.config);
  if (o.seed) s.set("seed", std::to_string(*o.seed));
  if (!o.checkpoint.empty()) s.set("checkpoint", o.checkpoint);
  if (!o.input.empty()) s.set("input", o.input);
  if (!o.style.empty()) s.set("style", o.style);
  if (!o.styles.empty()) s.set("styles", o.styles);
  if (!o.gamma.empty()) s.set("gamma", o.gamma);
  if (o.temperature) {
    std::ostringstream t;
    t.precision(17);
    t << *o.temperature;
    s.set("temperature", t.str());
  }
  if (o.frames) s.set("frames", std::to_string(*o.frames));
  s.require_known();
  return s;
}

int run_verify(const Options& o) {
  const auto results = cmd_verify(o.suite);
  const std::string report = verify_report(results);
  std::cout << report;
  bool ok = true;
  for (const auto& r : results) ok = ok && r.pass;
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    write_file_atomic(fs::path(o.out) / "verify.txt", report);
    RunManifest m;
    m.command = "verify";
    m.started = utc_timestamp();
    m.outputs = {(fs::path(o.out) / "verify.txt").string()};
    m.extra = {{"suite", o.suite}, {"pass", ok}};
    write_manifest(o.out, m);
  }
  return ok ? kOk : kVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio-driven motion synthesis with denoising diffusion"};
  app.require_subcommand(1);
  Options o;

  auto* prepare = app.add_subcommand("prepare", "Extract aligned pose and audio features from a take directory");
  prepare->add_option("data_dir", o.data_dir, "Directory of .bvh takes with matching .wav (and beat .csv)")->required();
  prepare->add_option("--config", o.config, "Key-value settings file");
  prepare->add_option("--out", o.out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train a denoiser on a prepared feature store");
  train->add_option("features", o.features, "features.mdt written by prepare")->required();
  train->add_option("--config", o.config, "Key-value settings file");
  train->add_option("--seed", o.seed, "Training seed");
  train->add_option("--checkpoint", o.checkpoint, "Resume from this checkpoint");
  train->add_option("--out", o.out, "Output directory")->required();

  auto* sample = app.add_subcommand("sample", "Synthesize motion as BVH");
  sample->add_option("input", o.input, "WAV file, or BVH / path CSV for path-conditioned models");
  sample->add_option("--config", o.config, "Key-value settings file");
  sample->add_option("--checkpoint", o.checkpoint, "Trained checkpoint");
  sample->add_option("--style", o.style, "Style label or index");
  sample->add_option("--styles", o.styles, "Two comma-separated styles to interpolate");
  sample->add_option("--gamma", o.gamma, "Guidance or interpolation weight; a comma list writes one file each");
  sample->add_option("--temperature", o.temperature, "Divide interpolation weights by this value");
  sample->add_option("--frames", o.frames, "Output length in frames");
  sample->add_option("--seed", o.seed, "Sampling seed");
  sample->add_option("--out", o.out, "Output directory")->required();

  auto* verify = app.add_subcommand("verify", "Run the built-in verification suites");
  verify->add_option("--suite", o.suite, "gauss, schedule, guidance, lr, dropout, roundtrip, gradient, equivariance or all");
  verify->add_option("--out", o.out, "Optional directory for the report and manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*prepare) {
      const PrepareResult r = cmd_prepare(o.data_dir, o.out, merged_settings(o));
      for (const auto& f : r.files)
        std::cout << f.file << ": style=" << f.style << " frames=" << f.frames << " source_rate=" << f.source_rate
                  << " windows=" << f.windows << " dropped_tail=" << f.dropped_tail << (f.note.empty() ? "" : " (" + f.note + ")")
                  << "\n";
      for (const auto& s : r.skipped) std::cerr << "skipped " << s << "\n";
      std::cout << "wrote " << r.store.string() << "\n";
    } else if (*train) {
      const Settings s = merged_settings(o);
      std::optional<fs::path> resume;
      if (!o.checkpoint.empty()) resume = o.checkpoint;
      const TrainResult r = cmd_train(o.features, o.out, s, resume);
      if (!r.log.empty())
        std::cout << "step " << r.log.back().step << " loss " << r.log.back().loss << "\n";
      std::cout << "wrote " << r.checkpoint.string() << "\n";
    } else if (*sample) {
      for (const auto& p : cmd_sample(sample_request_from(merged_settings(o)), o.out)) std::cout << "wrote " << p.string() << "\n";
    } else if (*verify) {
      return run_verify(o);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const TrainingFault& e) {
    std::cerr << "error: training stopped: " << e.what() << "\n";
    return kData;
  } catch (const EvaluationFault& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed metadata: " << e.what() << "\n";
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
