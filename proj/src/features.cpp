#include "emgvoice/features.hpp"

#include "emgvoice/dsp.hpp"
#include "emgvoice/error.hpp"
#include "emgvoice/hash.hpp"
#include "emgvoice/json_eigen.hpp"
#include "emgvoice/signals.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace emgvoice {

int FrameConfig::frame_samples() const {
  return static_cast<int>(std::lround(frame_ms * sample_rate / 1000.0));
}

int FrameConfig::hop_samples() const {
  return static_cast<int>(std::lround(hop_ms * sample_rate / 1000.0));
}

void FrameConfig::validate() const {
  if (!(frame_ms > 0 && hop_ms > 0 && sample_rate > 0))
    throw config_error("frame length, hop and sample rate must be positive");
  if (hop_ms > frame_ms) throw config_error("hop must not exceed frame length");
}

void FeatureSequence::validate() const {
  if (kind == FeatureKind::mfcc && dim() != kMfccDim)
    throw data_error("MFCC sequence must have 26 dims, has " + std::to_string(dim()));
  if (kind == FeatureKind::emg && (dim() == 0 || dim() % kEmgFeaturesPerChannel != 0))
    throw data_error("EMG feature dim must be a positive multiple of 14, is " + std::to_string(dim()));
  if (!data.allFinite()) throw numeric_error("feature sequence contains non-finite values");
}

std::array<double, 5> emg_td_frame(const Eigen::Ref<const Eigen::VectorXd>& low,
                                   const Eigen::Ref<const Eigen::VectorXd>& high) {
  const Eigen::Index n = low.size();
  if (n < 2 || high.size() != n) throw data_error("time-domain frames must share a length >= 2");
  const double inv = 1.0 / static_cast<double>(n);
  int crossings = 0;
  for (Eigen::Index i = 0; i + 1 < n; ++i)
    if (high(i) * high(i + 1) < 0.0) ++crossings;
  return {low.squaredNorm() * inv, low.sum() * inv, high.squaredNorm() * inv,
          high.cwiseAbs().sum() * inv, crossings / static_cast<double>(n - 1)};
}

std::array<double, 9> emg_stft_frame(const Eigen::Ref<const Eigen::VectorXd>& frame) {
  static constexpr int kPoints = 16;
  struct Tables {
    Eigen::VectorXd window = dsp::hann(kPoints);
    Eigen::MatrixXd cos_t = Eigen::MatrixXd(9, kPoints), sin_t = Eigen::MatrixXd(9, kPoints);
    Tables() {
      for (int k = 0; k < 9; ++k)
        for (int t = 0; t < kPoints; ++t) {
          cos_t(k, t) = std::cos(2.0 * std::numbers::pi * k * t / kPoints);
          sin_t(k, t) = std::sin(2.0 * std::numbers::pi * k * t / kPoints);
        }
    }
  };
  static const Tables tables;

  // Centre-crop (or zero-pad) the frame to 16 samples.
  Eigen::VectorXd x = Eigen::VectorXd::Zero(kPoints);
  const Eigen::Index n = frame.size();
  if (n >= kPoints) {
    x = frame.segment((n - kPoints) / 2, kPoints);
  } else {
    x.segment((kPoints - n) / 2, n) = frame;
  }
  x = x.cwiseProduct(tables.window);

  const Eigen::VectorXd re = tables.cos_t * x;
  const Eigen::VectorXd im = tables.sin_t * x;
  std::array<double, 9> mags{};
  for (int k = 0; k < 9; ++k) mags[static_cast<std::size_t>(k)] = std::hypot(re(k), im(k));
  return mags;
}

FeatureSequence emg_features(const Eigen::Ref<const Eigen::MatrixXd>& emg, const FrameConfig& cfg) {
  cfg.validate();
  const int len = cfg.frame_samples(), hop = cfg.hop_samples();
  const Eigen::Index channels = emg.cols();
  if (channels == 0) throw data_error("EMG recording has no channels");
  const int frames = dsp::frame_count(emg.rows(), len, hop);
  if (frames == 0)
    throw data_error("EMG signal of " + std::to_string(emg.rows()) + " samples shorter than one frame");

  FeatureSequence out;
  out.kind = FeatureKind::emg;
  out.data.resize(frames, kEmgFeaturesPerChannel * channels);
  for (Eigen::Index c = 0; c < channels; ++c) {
    const BandSplit bands = triangular_split(emg.col(c));
    const Eigen::Index base = kEmgFeaturesPerChannel * c;
    for (int f = 0; f < frames; ++f) {
      const Eigen::Index start = static_cast<Eigen::Index>(f) * hop;
      const auto td = emg_td_frame(bands.low.segment(start, len), bands.high.segment(start, len));
      const auto spec = emg_stft_frame(emg.col(c).segment(start, len));
      for (int k = 0; k < 5; ++k) out.data(f, base + k) = td[static_cast<std::size_t>(k)];
      for (int k = 0; k < 9; ++k) out.data(f, base + 5 + k) = spec[static_cast<std::size_t>(k)];
    }
  }
  return out;
}

FeatureSequence mfcc_features(const Eigen::Ref<const Eigen::VectorXd>& audio, const FrameConfig& cfg,
                              const MfccConfig& mfcc) {
  cfg.validate();
  const int len = cfg.frame_samples(), hop = cfg.hop_samples();
  const int frames = dsp::frame_count(audio.size(), len, hop);
  if (frames == 0)
    throw data_error("audio of " + std::to_string(audio.size()) + " samples shorter than one frame");

  const Eigen::VectorXd window = dsp::hann(len);
  const Eigen::MatrixXd fb =
      dsp::mel_filterbank(mfcc.n_mels, mfcc.n_fft, cfg.sample_rate, mfcc.f_min, mfcc.f_max);
  const Eigen::MatrixXd dct = dsp::dct_matrix(mfcc.n_coeffs, mfcc.n_mels);

  FeatureSequence out;
  out.kind = FeatureKind::mfcc;
  out.data.resize(frames, mfcc.n_coeffs);
  for (int f = 0; f < frames; ++f) {
    const Eigen::VectorXd frame =
        audio.segment(static_cast<Eigen::Index>(f) * hop, len).cwiseProduct(window);
    const Eigen::VectorXd power = dsp::rfft(frame, mfcc.n_fft).cwiseAbs2();
    const Eigen::VectorXd logmel = (fb * power).array().max(mfcc.log_floor).log().matrix();
    out.data.row(f) = (dct * logmel).transpose();
  }
  return out;
}

Normalizer::Normalizer(Eigen::VectorXd mean, Eigen::VectorXd std)
    : mean_(std::move(mean)), std_(std::move(std)) {
  if (mean_.size() != std_.size()) throw data_error("normalizer mean/std size mismatch");
  std_ = std_.cwiseMax(kStdFloor);
}

Normalizer Normalizer::fit(const std::vector<FeatureSequence>& sequences) {
  if (sequences.empty()) throw data_error("cannot fit a normalizer on zero sequences");
  const Eigen::Index dim = sequences.front().dim();
  const FeatureKind kind = sequences.front().kind;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
  double count = 0;
  for (const auto& s : sequences) {
    if (s.dim() != dim || s.kind != kind)
      throw data_error("normalizer inputs must share kind and dimension");
    sum += s.data.colwise().sum().transpose();
    count += static_cast<double>(s.frames());
  }
  if (count == 0) throw data_error("cannot fit a normalizer on zero frames");
  const Eigen::VectorXd mean = sum / count;
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(dim);
  for (const auto& s : sequences)
    sq += (s.data.rowwise() - mean.transpose()).array().square().colwise().sum().matrix().transpose();
  return Normalizer(mean, (sq / count).cwiseSqrt());
}

Eigen::MatrixXd Normalizer::apply(const Eigen::Ref<const Eigen::MatrixXd>& x) const {
  if (x.cols() != dim()) throw data_error("normalizer dimension mismatch");
  return ((x.rowwise() - mean_.transpose()).array().rowwise() / std_.transpose().array()).matrix();
}

Eigen::MatrixXd Normalizer::invert(const Eigen::Ref<const Eigen::MatrixXd>& x) const {
  if (x.cols() != dim()) throw data_error("normalizer dimension mismatch");
  return ((x.array().rowwise() * std_.transpose().array()).matrix().rowwise() + mean_.transpose());
}

FeatureSequence Normalizer::apply(const FeatureSequence& seq) const {
  FeatureSequence out = seq;
  out.data = apply(seq.data);
  out.normalized = true;
  return out;
}

FeatureSequence Normalizer::invert(const FeatureSequence& seq) const {
  FeatureSequence out = seq;
  out.data = invert(seq.data);
  out.normalized = false;
  return out;
}

std::uint64_t Normalizer::hash() const {
  Fnv1a h;
  h.add(mean_);
  h.add(std_);
  return h.value();
}

nlohmann::json to_json(const Normalizer& n) {
  return {{"mean", vector_to_json(n.mean())}, {"std", vector_to_json(n.std())}};
}

Normalizer normalizer_from_json(const nlohmann::json& j) {
  return {vector_from_json(j.at("mean")), vector_from_json(j.at("std"))};
}

void match_lengths(FeatureSequence& a, FeatureSequence& b) {
  const Eigen::Index n = std::min(a.frames(), b.frames());
  a.data.conservativeResize(n, Eigen::NoChange);
  b.data.conservativeResize(n, Eigen::NoChange);
}

}  // namespace emgvoice
