#include "motiondiff/audio.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <numbers>
#include <sstream>

#include <fftw3.h>

#include "motiondiff/errors.hpp"

namespace motiondiff {

namespace {

std::uint32_t read_u32(std::string_view b, std::size_t at) {
  return std::uint32_t(std::uint8_t(b[at])) | std::uint32_t(std::uint8_t(b[at + 1])) << 8 |
         std::uint32_t(std::uint8_t(b[at + 2])) << 16 | std::uint32_t(std::uint8_t(b[at + 3])) << 24;
}

std::uint16_t read_u16(std::string_view b, std::size_t at) {
  return std::uint16_t(std::uint8_t(b[at]) | std::uint8_t(b[at + 1]) << 8);
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(char(v & 0xff));
  s.push_back(char(v >> 8));
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

class RealFft {
 public:
  explicit RealFft(int n)
      : n_(n),
        in_(static_cast<double*>(fftw_malloc(sizeof(double) * std::size_t(n)))),
        out_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * std::size_t(n / 2 + 1)))) {
    plan_ = fftw_plan_dft_r2c_1d(n, in_.get(), out_.get(), FFTW_ESTIMATE);
    if (!plan_) throw std::runtime_error("FFT plan creation failed");
  }
  ~RealFft() { fftw_destroy_plan(plan_); }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_.get(); }
  void magnitude(Eigen::Ref<Eigen::RowVectorXd> out) {
    fftw_execute(plan_);
    for (int k = 0; k <= n_ / 2; ++k) out(k) = std::hypot(out_.get()[k][0], out_.get()[k][1]);
  }

 private:
  int n_;
  std::unique_ptr<double, FftwFree> in_;
  std::unique_ptr<fftw_complex, FftwFree> out_;
  fftw_plan plan_;
};

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

FeatureMatrix named(Eigen::MatrixXd frames, double rate, const std::string& prefix) {
  FeatureMatrix m{std::move(frames), rate, {}};
  if (m.frames.cols() == 1) {
    m.columns = {prefix};
  } else {
    for (Eigen::Index c = 0; c < m.frames.cols(); ++c) m.columns.push_back(prefix + std::to_string(c));
  }
  return m;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t p = line.find(',', start);
    out.push_back(line.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool parse_number(std::string_view s, double& v) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return !s.empty() && ec == std::errc() && ptr == s.data() + s.size();
}

void append_shortest(std::string& out, double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, r.ptr);
}

}  // namespace

void Waveform::validate() const {
  if (samples.empty()) throw DataError("waveform is empty");
  if (!(sample_rate > 0.0)) throw DataError("waveform sample rate must be positive");
  for (double s : samples)
    if (!std::isfinite(s)) throw DataError("waveform has non-finite samples");
}

Waveform parse_wav(std::string_view b) {
  if (b.size() < 12 || b.substr(0, 4) != "RIFF" || b.substr(8, 4) != "WAVE") throw DataError("not a RIFF/WAVE file");
  std::size_t pos = 12;
  int channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (pos + 8 <= b.size()) {
    const std::string_view id = b.substr(pos, 4);
    const std::uint32_t size = read_u32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > b.size()) throw DataError("WAV chunk '" + std::string(id) + "' is truncated");
    if (id == "fmt ") {
      if (size < 16) throw DataError("WAV fmt chunk too short");
      const std::uint16_t format = read_u16(b, body);
      channels = read_u16(b, body + 2);
      rate = read_u32(b, body + 4);
      bits = read_u16(b, body + 14);
      if (format != 1 && format != 0xFFFE) throw DataError("only PCM WAV is supported");
      if (bits != 16) throw DataError("only 16-bit WAV is supported, file has " + std::to_string(bits) + " bits");
      if (channels < 1 || rate == 0) throw DataError("WAV header has no channels or zero rate");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw DataError("WAV data chunk precedes fmt chunk");
      const std::size_t frame_bytes = std::size_t(channels) * 2;
      const std::size_t n = size / frame_bytes;
      Waveform w;
      w.sample_rate = rate;
      w.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0;
        for (int c = 0; c < channels; ++c)
          acc += double(std::int16_t(read_u16(b, body + i * frame_bytes + std::size_t(c) * 2))) / 32768.0;
        w.samples[i] = acc / channels;
      }
      w.validate();
      return w;
    }
    pos = body + size + (size & 1u);
  }
  throw DataError("WAV file has no data chunk");
}

Waveform load_wav(const std::string& path) {
  try {
    return parse_wav(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::string encode_wav(const Waveform& w) {
  w.validate();
  const std::uint32_t rate = std::uint32_t(std::lround(w.sample_rate));
  const std::uint32_t data_bytes = std::uint32_t(w.samples.size() * 2);
  std::string s = "RIFF";
  put_u32(s, 36 + data_bytes);
  s += "WAVEfmt ";
  put_u32(s, 16);
  put_u16(s, 1);
  put_u16(s, 1);
  put_u32(s, rate);
  put_u32(s, rate * 2);
  put_u16(s, 2);
  put_u16(s, 16);
  s += "data";
  put_u32(s, data_bytes);
  for (double x : w.samples) {
    const long q = std::lround(std::clamp(x, -1.0, 1.0) * 32767.0);
    put_u16(s, std::uint16_t(std::int16_t(q)));
  }
  return s;
}

Framing framing(const Waveform& w, const AnalysisConfig& cfg) {
  w.validate();
  if (!(cfg.frame_rate > 0.0)) throw ConfigError("frame rate must be positive");
  Framing f;
  f.window = int(std::lround(cfg.window_seconds * w.sample_rate));
  if (f.window < 2) throw ConfigError("analysis window shorter than two samples");
  f.fft_size = 1;
  while (f.fft_size < f.window) f.fft_size *= 2;
  f.hop = w.sample_rate / cfg.frame_rate;
  if (w.samples.size() <= std::size_t(f.window))
    throw DataError("audio of " + std::to_string(w.samples.size()) + " samples is not longer than one analysis window (" +
                    std::to_string(f.window) + ")");
  f.frames = Eigen::Index(std::ceil(double(w.samples.size()) / f.hop - 1e-9));
  return f;
}

Eigen::MatrixXd magnitude_spectrogram(const Waveform& w, const AnalysisConfig& cfg, bool pre_emphasis) {
  const Framing fr = framing(w, cfg);
  std::vector<double> x = w.samples;
  if (pre_emphasis) {
    for (std::size_t i = x.size() - 1; i > 0; --i) x[i] -= cfg.pre_emphasis * x[i - 1];
  }
  std::vector<double> hann(std::size_t(fr.window));
  for (int n = 0; n < fr.window; ++n) hann[std::size_t(n)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / fr.window);

  RealFft fft(fr.fft_size);
  Eigen::MatrixXd out(fr.frames, fr.fft_size / 2 + 1);
  const long n_samples = long(x.size());
  for (Eigen::Index t = 0; t < fr.frames; ++t) {
    const long start = std::lround(double(t) * fr.hop) - fr.window / 2;
    double* in = fft.input();
    std::fill(in, in + fr.fft_size, 0.0);
    for (int n = 0; n < fr.window; ++n) {
      const long i = start + n;
      if (i >= 0 && i < n_samples) in[n] = x[std::size_t(i)] * hann[std::size_t(n)];
    }
    Eigen::RowVectorXd row(out.cols());
    fft.magnitude(row);
    out.row(t) = row;
  }
  return out;
}

Eigen::MatrixXd mel_filterbank(int n_mels, int fft_size, double sample_rate) {
  if (n_mels < 1) throw ConfigError("need at least one mel band");
  const int bins = fft_size / 2 + 1;
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(std::size_t(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i) edges[std::size_t(i)] = mel_to_hz(mel_hi * i / (n_mels + 1));
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mels, bins);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[std::size_t(m)], c = edges[std::size_t(m) + 1], hi = edges[std::size_t(m) + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = k * sample_rate / fft_size;
      const double wgt = std::min((f - lo) / (c - lo), (hi - f) / (hi - c));
      if (wgt > 0) fb(m, k) = wgt;
    }
  }
  return fb;
}

FeatureMatrix mfcc(const Waveform& w, int n_coeffs, const AnalysisConfig& cfg) {
  if (n_coeffs < 1 || n_coeffs > cfg.n_mels) throw ConfigError("n_coeffs must be in 1..n_mels");
  const Framing fr = framing(w, cfg);
  const Eigen::MatrixXd spec = magnitude_spectrogram(w, cfg, true);
  const Eigen::MatrixXd fb = mel_filterbank(cfg.n_mels, fr.fft_size, w.sample_rate);
  Eigen::MatrixXd logmel = (spec * fb.transpose()).array().max(cfg.log_floor).log().matrix();
  const int m = cfg.n_mels;
  Eigen::MatrixXd dct(m, n_coeffs);  // orthonormal DCT-II, column k is basis k
  for (int k = 0; k < n_coeffs; ++k)
    for (int i = 0; i < m; ++i)
      dct(i, k) = std::sqrt((k == 0 ? 1.0 : 2.0) / m) * std::cos(std::numbers::pi * k * (2 * i + 1) / (2.0 * m));
  return named(logmel * dct, cfg.frame_rate, "mfcc");
}

FeatureMatrix spectral_flux(const Waveform& w, const AnalysisConfig& cfg) {
  const Eigen::MatrixXd spec = magnitude_spectrogram(w, cfg, false);
  Eigen::MatrixXd flux = Eigen::MatrixXd::Zero(spec.rows(), 1);
  for (Eigen::Index t = 1; t < spec.rows(); ++t) flux(t, 0) = (spec.row(t) - spec.row(t - 1)).cwiseMax(0.0).sum();
  return named(flux, cfg.frame_rate, "flux");
}

FeatureMatrix chroma(const Waveform& w, const AnalysisConfig& cfg) {
  const Framing fr = framing(w, cfg);
  const Eigen::MatrixXd spec = magnitude_spectrogram(w, cfg, false);
  std::vector<int> band(std::size_t(spec.cols()), -1);
  for (Eigen::Index k = 1; k < spec.cols(); ++k) {
    const double f = double(k) * w.sample_rate / fr.fft_size;
    if (f < cfg.chroma_min_hz) continue;
    const long semis = std::lround(12.0 * std::log2(f / 440.0));
    const long pitch_class = ((semis + 9) % 12 + 12) % 12;
    band[std::size_t(k)] = int(pitch_class / 2);
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(spec.rows(), 6);
  for (Eigen::Index t = 0; t < spec.rows(); ++t) {
    for (Eigen::Index k = 0; k < spec.cols(); ++k)
      if (band[std::size_t(k)] >= 0) out(t, band[std::size_t(k)]) += spec(t, k) * spec(t, k);
    const double total = out.row(t).sum();
    if (total > 0.0) {
      out.row(t) /= total;
    } else {
      out.row(t).setConstant(1.0 / 6.0);
    }
  }
  return named(out, cfg.frame_rate, "chroma");
}

FeatureMatrix parse_precomputed(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t p = text.find('\n', start);
    if (p == std::string_view::npos) p = text.size();
    lines.push_back(text.substr(start, p - start));
    start = p + 1;
  }
  if (lines.empty() || trim(lines[0]).empty()) throw ParseError("missing column header", 1);
  FeatureMatrix m;
  for (auto name : split_commas(lines[0])) {
    name = trim(name);
    if (name.empty()) throw ParseError("empty column name", 1);
    m.columns.emplace_back(name);
  }
  if (lines.size() < 2) throw ParseError("missing frame_rate line", 2);
  const auto rate = split_commas(lines[1]);
  if (rate.size() != 2 || trim(rate[0]) != "frame_rate" || !parse_number(rate[1], m.frame_rate) || !(m.frame_rate > 0) ||
      !std::isfinite(m.frame_rate))
    throw ParseError("expected 'frame_rate,<Hz>'", 2);
  const std::size_t width = m.columns.size();
  std::vector<double> values;
  std::size_t rows = 0;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) {
      if (i + 1 == lines.size()) break;
      throw ParseError("blank line inside the table", i + 1);
    }
    const auto cells = split_commas(lines[i]);
    if (cells.size() != width)
      throw ParseError("row has " + std::to_string(cells.size()) + " values, header has " + std::to_string(width), i + 1);
    for (std::size_t c = 0; c < width; ++c) {
      double v = 0;
      if (!parse_number(cells[c], v)) throw ParseError("not a number: '" + std::string(trim(cells[c])) + "'", i + 1, c + 1);
      if (!std::isfinite(v)) throw ParseError("non-finite value '" + std::string(trim(cells[c])) + "'", i + 1, c + 1);
      values.push_back(v);
    }
    ++rows;
  }
  if (rows == 0) throw ParseError("no feature rows", lines.size() + 1);
  m.frames = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), Eigen::Index(rows), Eigen::Index(width));
  return m;
}

FeatureMatrix load_precomputed(const std::string& path) {
  try {
    return parse_precomputed(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what(), e.line(), e.column());
  }
}

std::string write_precomputed(const FeatureMatrix& m) {
  if (Eigen::Index(m.columns.size()) != m.frames.cols()) throw ContractViolation("column names do not match the width");
  std::string out;
  for (std::size_t c = 0; c < m.columns.size(); ++c) {
    if (c) out += ',';
    out += m.columns[c];
  }
  out += "\nframe_rate,";
  append_shortest(out, m.frame_rate);
  out += '\n';
  for (Eigen::Index t = 0; t < m.frames.rows(); ++t) {
    for (Eigen::Index c = 0; c < m.frames.cols(); ++c) {
      if (c) out += ',';
      append_shortest(out, m.frames(t, c));
    }
    out += '\n';
  }
  return out;
}

FeatureMatrix align(const FeatureMatrix& features, double target_rate, Eigen::Index target_frames) {
  const Eigen::Index n = features.frames.rows();
  if (n == 0) throw DataError("cannot align empty features");
  if (target_frames < 1 || !(target_rate > 0)) throw ContractViolation("alignment target must be positive");
  const double mismatch = std::abs(double(n) / features.frame_rate - double(target_frames) / target_rate);
  if (mismatch > 0.5)
    throw DataError("feature length differs from the motion by " + std::to_string(mismatch) + " s (limit 0.5 s)");
  FeatureMatrix out{Eigen::MatrixXd(target_frames, features.frames.cols()), target_rate, features.columns};
  const bool same_rate = features.frame_rate == target_rate;
  for (Eigen::Index k = 0; k < target_frames; ++k) {
    const double u = same_rate ? double(k) : double(k) * features.frame_rate / target_rate;
    if (u >= double(n - 1)) {
      out.frames.row(k) = features.frames.row(n - 1);
      continue;
    }
    const Eigen::Index i0 = Eigen::Index(std::floor(u));
    const double w = u - double(i0);
    if (w == 0.0) {
      out.frames.row(k) = features.frames.row(i0);
    } else {
      out.frames.row(k) = (1.0 - w) * features.frames.row(i0) + w * features.frames.row(i0 + 1);
    }
  }
  return out;
}

FeatureMatrix hcat(const std::vector<FeatureMatrix>& parts) {
  if (parts.empty()) throw ContractViolation("nothing to concatenate");
  FeatureMatrix out;
  out.frame_rate = parts.front().frame_rate;
  Eigen::Index width = 0;
  for (const auto& p : parts) {
    if (p.frames.rows() != parts.front().frames.rows() || p.frame_rate != out.frame_rate)
      throw ContractViolation("feature blocks differ in length or rate");
    width += p.frames.cols();
  }
  out.frames.resize(parts.front().frames.rows(), width);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.frames.middleCols(c, p.frames.cols()) = p.frames;
    c += p.frames.cols();
    out.columns.insert(out.columns.end(), p.columns.begin(), p.columns.end());
  }
  return out;
}

FeatureMatrix dance_features(const Waveform& w, const FeatureMatrix& beats, Eigen::Index target_frames,
                             const AnalysisConfig& cfg) {
  if (beats.frames.cols() != 2) throw DataError("beat file must have two columns (beat, downbeat)");
  const double rate = cfg.frame_rate;
  return hcat({align(mfcc(w, 5, cfg), rate, target_frames), align(spectral_flux(w, cfg), rate, target_frames),
               align(chroma(w, cfg), rate, target_frames), align(beats, rate, target_frames)});
}

}  // namespace motiondiff
