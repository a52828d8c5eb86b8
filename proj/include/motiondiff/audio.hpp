#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace motiondiff {

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  double sample_rate = 16000.0;

  double duration() const { return double(samples.size()) / sample_rate; }
  void validate() const;
};

// 16-bit PCM WAV. Multi-channel files are averaged down to mono.
Waveform parse_wav(std::string_view bytes);
Waveform load_wav(const std::string& path);
std::string encode_wav(const Waveform& w);

struct FeatureMatrix {
  Eigen::MatrixXd frames;  // T x A
  double frame_rate = 30.0;
  std::vector<std::string> columns;

  Eigen::Index length() const { return frames.rows(); }
};

struct AnalysisConfig {
  double frame_rate = 30.0;
  double window_seconds = 2048.0 / 44100.0;
  int n_mels = 26;
  double pre_emphasis = 0.97;
  double log_floor = 1e-10;
  double chroma_min_hz = 27.5;
};

// Analysis framing shared by every feature: hop = sample_rate / frame_rate, a
// periodic Hann window of round(window_seconds * sample_rate) samples centred on
// t * hop (zero padded past the ends), FFT size the next power of two.
struct Framing {
  int window = 0;
  int fft_size = 0;
  double hop = 0.0;
  Eigen::Index frames = 0;
};
Framing framing(const Waveform& w, const AnalysisConfig& cfg);

// Magnitude spectra, T x (fft_size/2 + 1).
Eigen::MatrixXd magnitude_spectrogram(const Waveform& w, const AnalysisConfig& cfg, bool pre_emphasis);

// HTK mel scale triangles over FFT bins, n_mels x (fft_size/2 + 1).
Eigen::MatrixXd mel_filterbank(int n_mels, int fft_size, double sample_rate);

// Coefficient 0 is kept.
FeatureMatrix mfcc(const Waveform& w, int n_coeffs, const AnalysisConfig& cfg = {});
FeatureMatrix spectral_flux(const Waveform& w, const AnalysisConfig& cfg = {});
// 12 pitch classes (C = 0, A = 9) pooled in adjacent pairs: {C,C#}, {D,D#}, ... {A#,B}.
FeatureMatrix chroma(const Waveform& w, const AnalysisConfig& cfg = {});

// Column file: line 1 column names, line 2 "frame_rate,<Hz>", then one row per frame.
FeatureMatrix parse_precomputed(std::string_view text);
FeatureMatrix load_precomputed(const std::string& path);
std::string write_precomputed(const FeatureMatrix& m);

// Linear interpolation onto target_frames frames at target_rate, extending the
// edge values past the end. Durations differing by more than 0.5 s are an error.
FeatureMatrix align(const FeatureMatrix& features, double target_rate, Eigen::Index target_frames);

FeatureMatrix hcat(const std::vector<FeatureMatrix>& parts);

// MFCC(5), flux, chroma(6), beat, downbeat.
FeatureMatrix dance_features(const Waveform& w, const FeatureMatrix& beats, Eigen::Index target_frames,
                             const AnalysisConfig& cfg = {});

}  // namespace motiondiff
