#pragma once

#include "emgvoice/io.hpp"

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include <array>
#include <cstdint>
#include <vector>

namespace emgvoice {

inline constexpr int kEmgFeaturesPerChannel = 14;
inline constexpr int kMfccDim = 26;

struct FrameConfig {
  double frame_ms = 27.0;
  double hop_ms = 10.0;
  double sample_rate = 1000.0;

  int frame_samples() const;
  int hop_samples() const;
  void validate() const;

  static FrameConfig emg() { return {27.0, 10.0, 1000.0}; }
  static FrameConfig audio() { return {27.0, 10.0, 16000.0}; }
};

// Time-major feature matrix at 100 Hz.
struct FeatureSequence {
  Eigen::MatrixXd data;  // frames x dim
  FeatureKind kind = FeatureKind::emg;
  bool normalized = false;

  Eigen::Index frames() const { return data.rows(); }
  Eigen::Index dim() const { return data.cols(); }
  void validate() const;
};

// [mean(low^2), mean(low), mean(high^2), mean(|high|), ZCR(high)] where ZCR
// counts strict sign changes between neighbours, divided by n - 1.
std::array<double, 5> emg_td_frame(const Eigen::Ref<const Eigen::VectorXd>& low,
                                   const Eigen::Ref<const Eigen::VectorXd>& high);

// Magnitudes of DFT bins 0..8 of the Hann-windowed central 16 samples.
std::array<double, 9> emg_stft_frame(const Eigen::Ref<const Eigen::VectorXd>& frame);

// Per channel: 5 time-domain features then 9 spectral magnitudes; channels
// concatenated in column order.
FeatureSequence emg_features(const Eigen::Ref<const Eigen::MatrixXd>& emg,
                             const FrameConfig& cfg = FrameConfig::emg());

struct MfccConfig {
  int n_fft = 512;
  int n_mels = 40;
  int n_coeffs = kMfccDim;
  double f_min = 0.0;
  double f_max = 8000.0;
  double log_floor = 1e-10;
};

FeatureSequence mfcc_features(const Eigen::Ref<const Eigen::VectorXd>& audio,
                              const FrameConfig& cfg = FrameConfig::audio(),
                              const MfccConfig& mfcc = {});

class Normalizer {
public:
  static constexpr double kStdFloor = 1e-8;

  Normalizer() = default;
  Normalizer(Eigen::VectorXd mean, Eigen::VectorXd std);

  static Normalizer fit(const std::vector<FeatureSequence>& sequences);

  // (x - mean) / std. Applying twice is not the identity.
  FeatureSequence apply(const FeatureSequence& seq) const;
  FeatureSequence invert(const FeatureSequence& seq) const;
  Eigen::MatrixXd apply(const Eigen::Ref<const Eigen::MatrixXd>& x) const;
  Eigen::MatrixXd invert(const Eigen::Ref<const Eigen::MatrixXd>& x) const;

  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::VectorXd& std() const { return std_; }
  Eigen::Index dim() const { return mean_.size(); }
  std::uint64_t hash() const;

private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd std_;
};

nlohmann::json to_json(const Normalizer& n);
Normalizer normalizer_from_json(const nlohmann::json& j);

// Truncates both sequences to the shorter frame count.
void match_lengths(FeatureSequence& a, FeatureSequence& b);

}  // namespace emgvoice
