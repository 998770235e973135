#include "emgvoice/signals.hpp"

#include "emgvoice/dsp.hpp"
#include "emgvoice/error.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

namespace emgvoice {

using std::numbers::pi;

void FilterSpec::validate() const {
  const double nyquist = sample_rate / 2.0;
  if (!(sample_rate > 0)) throw config_error("filter sample rate must be positive");
  if (!(highpass_hz > 0 && highpass_hz < nyquist))
    throw config_error("high-pass cutoff must lie in (0, Nyquist)");
  if (highpass_order < 1) throw config_error("high-pass order must be at least 1");
  if (!(notch_hz > 0)) throw config_error("notch base frequency must be positive");
  if (!(notch_q > 0)) throw config_error("notch quality factor must be positive");
}

std::vector<double> FilterSpec::notch_frequencies() const {
  std::vector<double> out;
  for (double f = notch_hz; f < sample_rate / 2.0 - 1e-9; f += notch_hz) out.push_back(f);
  return out;
}

SosFilter butterworth_highpass(int order, double cutoff_hz, double sample_rate) {
  const double fs2 = 2.0 * sample_rate;
  const double warped = fs2 * std::tan(pi * cutoff_hz / sample_rate);
  auto bilinear = [fs2](std::complex<double> s) { return (fs2 + s) / (fs2 - s); };

  SosFilter sos;
  for (int k = 0; k < order / 2; ++k) {
    const std::complex<double> proto = std::polar(1.0, pi * (2.0 * k + order + 1) / (2.0 * order));
    const std::complex<double> z = bilinear(warped / proto);
    Biquad s;
    s.a1 = -2.0 * z.real();
    s.a2 = std::norm(z);
    const double g = (1.0 - s.a1 + s.a2) / 4.0;  // unit gain at Nyquist
    s.b0 = g;
    s.b1 = -2.0 * g;
    s.b2 = g;
    sos.push_back(s);
  }
  if (order % 2 == 1) {
    const double z = bilinear(std::complex<double>(-warped, 0.0)).real();
    Biquad s;
    s.a1 = -z;
    const double g = (1.0 + z) / 2.0;
    s.b0 = g;
    s.b1 = -g;
    sos.push_back(s);
  }
  return sos;
}

Biquad iir_notch(double freq_hz, double q, double sample_rate) {
  const double w0 = 2.0 * freq_hz / sample_rate;
  const double bw = w0 / q;
  const double beta = std::tan(bw * pi / 2.0);
  const double gain = 1.0 / (1.0 + beta);
  Biquad s;
  s.b0 = gain;
  s.b1 = -2.0 * gain * std::cos(pi * w0);
  s.b2 = gain;
  s.a1 = -2.0 * gain * std::cos(pi * w0);
  s.a2 = 2.0 * gain - 1.0;
  return s;
}

std::complex<double> frequency_response(const SosFilter& sos, double freq_hz, double sample_rate) {
  const std::complex<double> zi = std::polar(1.0, -2.0 * pi * freq_hz / sample_rate);
  std::complex<double> h = 1.0;
  for (const auto& s : sos)
    h *= (s.b0 + s.b1 * zi + s.b2 * zi * zi) / (1.0 + s.a1 * zi + s.a2 * zi * zi);
  return h;
}

namespace {

struct SectionState {
  double z1 = 0, z2 = 0;
};

// Transposed direct form II, in place.
void run(const SosFilter& sos, std::vector<SectionState>& state, Eigen::Ref<Eigen::VectorXd> x) {
  for (Eigen::Index n = 0; n < x.size(); ++n) {
    double v = x(n);
    for (std::size_t k = 0; k < sos.size(); ++k) {
      const auto& s = sos[k];
      auto& st = state[k];
      const double y = s.b0 * v + st.z1;
      st.z1 = s.b1 * v - s.a1 * y + st.z2;
      st.z2 = s.b2 * v - s.a2 * y;
      v = y;
    }
    x(n) = v;
  }
}

// Steady-state response of each section to a unit step at the cascade input.
std::vector<SectionState> step_state(const SosFilter& sos) {
  std::vector<SectionState> zi(sos.size());
  double scale = 1.0;
  for (std::size_t k = 0; k < sos.size(); ++k) {
    const auto& s = sos[k];
    const double g = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    zi[k].z2 = scale * (s.b2 - s.a2 * g);
    zi[k].z1 = scale * (g - s.b0);
    scale *= g;
  }
  return zi;
}

std::vector<SectionState> scaled(std::vector<SectionState> zi, double x0) {
  for (auto& s : zi) {
    s.z1 *= x0;
    s.z2 *= x0;
  }
  return zi;
}

Eigen::Index pad_length(const SosFilter& sos) {
  Eigen::Index taps = 2 * static_cast<Eigen::Index>(sos.size()) + 1;
  for (const auto& s : sos)
    if (s.b2 == 0.0 && s.a2 == 0.0) --taps;
  return 3 * taps;
}

}  // namespace

Eigen::VectorXd sos_filter(const SosFilter& sos, const Eigen::Ref<const Eigen::VectorXd>& x) {
  Eigen::VectorXd y = x;
  std::vector<SectionState> state(sos.size());
  run(sos, state, y);
  return y;
}

Eigen::VectorXd zero_phase_filter(const SosFilter& sos, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Eigen::Index n = x.size();
  const Eigen::Index pad = pad_length(sos);
  if (n <= pad)
    throw data_error("signal of " + std::to_string(n) + " samples too short for zero-phase filtering (need > " +
                     std::to_string(pad) + ")");

  Eigen::VectorXd ext(n + 2 * pad);
  for (Eigen::Index i = 0; i < pad; ++i) {
    ext(i) = 2.0 * x(0) - x(pad - i);
    ext(pad + n + i) = 2.0 * x(n - 1) - x(n - 2 - i);
  }
  ext.segment(pad, n) = x;

  const auto zi = step_state(sos);
  auto state = scaled(zi, ext(0));
  run(sos, state, ext);
  ext.reverseInPlace();
  state = scaled(zi, ext(0));
  run(sos, state, ext);
  ext.reverseInPlace();
  return ext.segment(pad, n);
}

Eigen::MatrixXd preprocess_emg(const Eigen::Ref<const Eigen::MatrixXd>& emg, const FilterSpec& spec) {
  spec.validate();
  if (emg.cols() == 0 || emg.rows() == 0) throw data_error("EMG recording is empty");
  if (!emg.allFinite()) throw numeric_error("EMG contains non-finite samples");

  const SosFilter highpass = butterworth_highpass(spec.highpass_order, spec.highpass_hz, spec.sample_rate);
  std::vector<SosFilter> notches;
  for (double f : spec.notch_frequencies()) notches.push_back({iir_notch(f, spec.notch_q, spec.sample_rate)});

  Eigen::MatrixXd out(emg.rows(), emg.cols());
  for (Eigen::Index c = 0; c < emg.cols(); ++c) {
    Eigen::VectorXd ch = zero_phase_filter(highpass, emg.col(c));
    for (const auto& notch : notches) ch = zero_phase_filter(notch, ch);
    out.col(c) = ch;
  }
  return out;
}

double peak_rms(const Eigen::Ref<const Eigen::VectorXd>& x, int window) {
  const Eigen::Index n = x.size();
  if (n == 0) return 0.0;
  const Eigen::Index w = std::min<Eigen::Index>(window, n);
  double acc = x.head(w).squaredNorm();
  double best = acc;
  for (Eigen::Index i = w; i < n; ++i) {
    acc += x(i) * x(i) - x(i - w) * x(i - w);
    best = std::max(best, acc);
  }
  return std::sqrt(std::max(best, 0.0) / static_cast<double>(w));
}

Eigen::VectorXd spectral_gate(const Eigen::Ref<const Eigen::VectorXd>& audio,
                              const std::optional<Eigen::VectorXd>& noise_profile,
                              const GateConfig& cfg) {
  const dsp::StftConfig stft_cfg{cfg.win, cfg.hop, cfg.n_fft};
  static constexpr double kFloorDb = -100.0;
  auto to_db = [](const dsp::ComplexMatrix& spec) {
    Eigen::MatrixXd db(spec.rows(), spec.cols());
    for (Eigen::Index i = 0; i < spec.rows(); ++i)
      for (Eigen::Index j = 0; j < spec.cols(); ++j)
        db(i, j) = std::max(kFloorDb, 20.0 * std::log10(std::abs(spec(i, j)) + 1e-300));
    return db;
  };

  Eigen::VectorXd noise;
  if (noise_profile) {
    noise = *noise_profile;
  } else {
    const auto w = std::min<Eigen::Index>(static_cast<Eigen::Index>(cfg.profile_seconds * cfg.sample_rate),
                                          audio.size());
    Eigen::Index best_start = 0;
    double acc = audio.head(w).squaredNorm(), best = acc;
    for (Eigen::Index i = w; i < audio.size(); ++i) {
      acc += audio(i) * audio(i) - audio(i - w) * audio(i - w);
      if (acc < best - 1e-12) {
        best = acc;
        best_start = i - w + 1;
      }
    }
    noise = audio.segment(best_start, w);
  }
  if (noise.size() < cfg.win) {
    Eigen::VectorXd padded = Eigen::VectorXd::Zero(cfg.win);
    padded.head(noise.size()) = noise;
    noise = padded;
  }

  const Eigen::MatrixXd noise_db = to_db(dsp::stft(noise, stft_cfg));
  const Eigen::RowVectorXd mean = noise_db.colwise().mean();
  const Eigen::RowVectorXd var =
      (noise_db.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(noise_db.rows());
  const Eigen::RowVectorXd threshold = mean.array() + cfg.n_std * var.array().sqrt();

  // Pad so every input sample is covered by full frames.
  const Eigen::Index n = audio.size();
  const Eigen::Index padded_len = n + 2 * cfg.win + cfg.hop;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(padded_len);
  x.segment(cfg.win, n) = audio;

  dsp::ComplexMatrix spec = dsp::stft(x, stft_cfg);
  const Eigen::MatrixXd db = to_db(spec);
  Eigen::MatrixXd mask(db.rows(), db.cols());
  for (Eigen::Index i = 0; i < db.rows(); ++i)
    for (Eigen::Index j = 0; j < db.cols(); ++j) mask(i, j) = db(i, j) > threshold(j) ? 1.0 : 0.0;

  Eigen::MatrixXd smooth(mask.rows(), mask.cols());
  for (Eigen::Index i = 0; i < mask.rows(); ++i) {
    for (Eigen::Index j = 0; j < mask.cols(); ++j) {
      double sum = 0;
      int count = 0;
      for (Eigen::Index di = -1; di <= 1; ++di)
        for (Eigen::Index dj = -1; dj <= 1; ++dj) {
          const Eigen::Index ii = i + di, jj = j + dj;
          if (ii < 0 || jj < 0 || ii >= mask.rows() || jj >= mask.cols()) continue;
          sum += mask(ii, jj);
          ++count;
        }
      smooth(i, j) = sum / count;
    }
  }
  spec = spec.cwiseProduct(smooth.cast<std::complex<double>>());
  return dsp::istft(spec, stft_cfg, padded_len).segment(cfg.win, n);
}

AudioResult preprocess_audio(const Eigen::Ref<const Eigen::VectorXd>& audio,
                             const std::optional<Eigen::VectorXd>& noise_profile,
                             const GateConfig& cfg) {
  if (audio.size() == 0) throw data_error("audio is empty");
  if (!audio.allFinite()) throw numeric_error("audio contains non-finite samples");
  AudioResult result;
  if (audio.cwiseAbs().maxCoeff() == 0.0) {
    result.samples = audio;
    result.warning = true;
    return result;
  }
  Eigen::VectorXd gated = spectral_gate(audio, noise_profile, cfg);
  const double peak = peak_rms(gated, static_cast<int>(cfg.rms_window_seconds * cfg.sample_rate));
  if (peak <= 0.0) {
    result.samples = audio;
    result.warning = true;
    return result;
  }
  result.samples = gated * (cfg.target_peak_rms / peak);
  return result;
}

Eigen::VectorXd triangular_kernel() {
  constexpr int kBox = 7;
  Eigen::VectorXd k = Eigen::VectorXd::Zero(2 * kBox - 1);
  for (int i = 0; i < kBox; ++i)
    for (int j = 0; j < kBox; ++j) k(i + j) += 1.0;
  return k / k.sum();
}

BandSplit triangular_split(const Eigen::Ref<const Eigen::VectorXd>& channel) {
  static const Eigen::VectorXd kernel = triangular_kernel();
  const Eigen::Index taps = kernel.size(), half = taps / 2, n = channel.size();
  if (n < taps)
    throw data_error("channel of " + std::to_string(n) + " samples shorter than the " +
                     std::to_string(taps) + "-tap triangular kernel");
  BandSplit out;
  out.low.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double acc = 0;
    for (Eigen::Index k = 0; k < taps; ++k) {
      const Eigen::Index idx = std::clamp<Eigen::Index>(i + k - half, 0, n - 1);
      acc += kernel(k) * channel(idx);
    }
    out.low(i) = acc;
  }
  out.high = channel - out.low;
  return out;
}

}  // namespace emgvoice
