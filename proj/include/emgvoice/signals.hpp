#pragma once

#include <Eigen/Core>

#include <optional>
#include <vector>

namespace emgvoice {

struct FilterSpec {
  double highpass_hz = 2.0;
  int highpass_order = 3;
  double notch_hz = 60.0;
  double notch_q = 30.0;
  double sample_rate = 1000.0;

  void validate() const;
  // Mains harmonics strictly below Nyquist: notch_hz, 2*notch_hz, ...
  std::vector<double> notch_frequencies() const;
};

// Normalized biquad: y = b0 x + b1 x1 + b2 x2 - a1 y1 - a2 y2.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
};

using SosFilter = std::vector<Biquad>;

// Butterworth high-pass as second-order sections (odd orders carry one
// first-order section with b2 = a2 = 0).
SosFilter butterworth_highpass(int order, double cutoff_hz, double sample_rate);
Biquad iir_notch(double freq_hz, double q, double sample_rate);

// Complex frequency response of the cascade at `freq_hz`.
std::complex<double> frequency_response(const SosFilter& sos, double freq_hz, double sample_rate);

// Causal filtering with zero initial state.
Eigen::VectorXd sos_filter(const SosFilter& sos, const Eigen::Ref<const Eigen::VectorXd>& x);

// Forward-backward filtering with odd-reflection padding and steady-state
// initial conditions, giving zero phase and squared magnitude response.
Eigen::VectorXd zero_phase_filter(const SosFilter& sos, const Eigen::Ref<const Eigen::VectorXd>& x);

// High-pass then mains notches, each applied forward-backward, per channel.
// Input and output are samples x channels.
Eigen::MatrixXd preprocess_emg(const Eigen::Ref<const Eigen::MatrixXd>& emg,
                               const FilterSpec& spec = {});

struct GateConfig {
  int win = 400;
  int hop = 160;
  int n_fft = 512;
  double n_std = 1.5;
  double profile_seconds = 0.5;
  double target_peak_rms = 0.1;
  double rms_window_seconds = 0.3;
  double sample_rate = 16000.0;
};

struct AudioResult {
  Eigen::VectorXd samples;
  bool warning = false;  // set when the input was silent and left unchanged
};

// Stationary spectral gate followed by peak short-window RMS normalization.
AudioResult preprocess_audio(const Eigen::Ref<const Eigen::VectorXd>& audio,
                             const std::optional<Eigen::VectorXd>& noise_profile = std::nullopt,
                             const GateConfig& cfg = {});

Eigen::VectorXd spectral_gate(const Eigen::Ref<const Eigen::VectorXd>& audio,
                              const std::optional<Eigen::VectorXd>& noise_profile,
                              const GateConfig& cfg = {});

// Maximum RMS over all windows of `window` samples (whole signal if shorter).
double peak_rms(const Eigen::Ref<const Eigen::VectorXd>& x, int window);

// Boxcar of length 7 convolved with itself: 13 taps summing to one.
Eigen::VectorXd triangular_kernel();

struct BandSplit {
  Eigen::VectorXd low;
  Eigen::VectorXd high;
};

// Same-length convolution with edge replication; high = x - low.
BandSplit triangular_split(const Eigen::Ref<const Eigen::VectorXd>& channel);

}  // namespace emgvoice
