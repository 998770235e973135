#include "emgvoice/dsp.hpp"

#include "emgvoice/error.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace emgvoice::dsp {

Eigen::VectorXd hann(int n) {
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) w(i) = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

Eigen::VectorXcd rfft(const Eigen::Ref<const Eigen::VectorXd>& frame, int n_fft) {
  std::vector<double> in(static_cast<std::size_t>(n_fft), 0.0);
  const auto n = std::min<Eigen::Index>(frame.size(), n_fft);
  for (Eigen::Index i = 0; i < n; ++i) in[static_cast<std::size_t>(i)] = frame(i);
  std::vector<std::complex<double>> out;
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  fft.fwd(out, in);
  Eigen::VectorXcd spec(n_fft / 2 + 1);
  for (int k = 0; k <= n_fft / 2; ++k) spec(k) = out[static_cast<std::size_t>(k)];
  return spec;
}

Eigen::VectorXd irfft(const Eigen::Ref<const Eigen::VectorXcd>& spectrum, int n_fft) {
  std::vector<std::complex<double>> in(static_cast<std::size_t>(n_fft / 2 + 1));
  for (int k = 0; k <= n_fft / 2; ++k) in[static_cast<std::size_t>(k)] = spectrum(k);
  std::vector<double> out;
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  fft.inv(out, in, n_fft);
  return Eigen::Map<Eigen::VectorXd>(out.data(), n_fft);
}

int frame_count(Eigen::Index n_samples, int win, int hop) {
  if (n_samples < win) return 0;
  return static_cast<int>((n_samples - win) / hop + 1);
}

ComplexMatrix stft(const Eigen::Ref<const Eigen::VectorXd>& x, const StftConfig& cfg) {
  const int frames = frame_count(x.size(), cfg.win, cfg.hop);
  const Eigen::VectorXd w = hann(cfg.win);
  ComplexMatrix spec(frames, cfg.n_fft / 2 + 1);
  for (int f = 0; f < frames; ++f) {
    const Eigen::VectorXd frame = x.segment(f * cfg.hop, cfg.win).cwiseProduct(w);
    spec.row(f) = rfft(frame, cfg.n_fft).transpose();
  }
  return spec;
}

Eigen::VectorXd istft(const ComplexMatrix& spec, const StftConfig& cfg, Eigen::Index length) {
  const Eigen::VectorXd w = hann(cfg.win);
  const Eigen::Index span = spec.rows() == 0 ? 0 : (spec.rows() - 1) * cfg.hop + cfg.win;
  Eigen::VectorXd y = Eigen::VectorXd::Zero(std::max(span, length));
  Eigen::VectorXd norm = Eigen::VectorXd::Zero(y.size());
  for (Eigen::Index f = 0; f < spec.rows(); ++f) {
    const Eigen::VectorXd frame = irfft(spec.row(f).transpose(), cfg.n_fft);
    const Eigen::Index start = f * cfg.hop;
    y.segment(start, cfg.win) += frame.head(cfg.win).cwiseProduct(w);
    norm.segment(start, cfg.win) += w.cwiseAbs2();
  }
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (norm(i) > 1e-8) y(i) /= norm(i);
  return y.head(length);
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Eigen::MatrixXd mel_filterbank(int n_mels, int n_fft, double sample_rate, double f_min,
                               double f_max) {
  const int bins = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(f_min), mel_hi = hz_to_mel(f_max);
  std::vector<double> edges(static_cast<std::size_t>(n_mels + 2));
  for (int m = 0; m < n_mels + 2; ++m)
    edges[static_cast<std::size_t>(m)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * m / (n_mels + 1));

  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mels, bins);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double center = edges[static_cast<std::size_t>(m + 1)];
    const double hi = edges[static_cast<std::size_t>(m + 2)];
    for (int k = 0; k < bins; ++k) {
      const double f = k * sample_rate / n_fft;
      const double up = (f - lo) / (center - lo);
      const double down = (hi - f) / (hi - center);
      fb(m, k) = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

Eigen::MatrixXd dct_matrix(int n_out, int n_in) {
  Eigen::MatrixXd d(n_out, n_in);
  for (int k = 0; k < n_out; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n_in) : std::sqrt(2.0 / n_in);
    for (int n = 0; n < n_in; ++n)
      d(k, n) = scale * std::cos(std::numbers::pi * k * (2.0 * n + 1.0) / (2.0 * n_in));
  }
  return d;
}

}  // namespace emgvoice::dsp
