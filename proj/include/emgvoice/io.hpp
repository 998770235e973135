#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>

namespace emgvoice {

namespace fs = std::filesystem;

inline constexpr int kEmgSampleRate = 1000;
inline constexpr int kAudioSampleRate = 16000;

// Multi-channel recording, one column per channel, one row per sample.
struct EmgRecording {
  Eigen::MatrixXd samples;
  std::uint32_t sample_rate = kEmgSampleRate;
};

// EMG container: "EMG1", u16 channel count, u32 sample rate, then
// channel-interleaved little-endian f32 samples.
EmgRecording read_emg(const fs::path& path);
void write_emg(const fs::path& path, const EmgRecording& rec);

struct WavAudio {
  Eigen::VectorXd samples;  // [-1, 1]
  std::uint32_t sample_rate = kAudioSampleRate;
};

// 16-bit PCM mono RIFF/WAVE. Samples are clipped to [-1, 1] and rounded.
WavAudio read_wav(const fs::path& path);
void write_wav(const fs::path& path, const WavAudio& audio);

enum class FeatureKind : std::uint8_t { emg = 0, mfcc = 1 };

// Feature cache: "FEA1", u16 dim, u32 frame rate, u8 kind, u8 normalized,
// u64 provenance hash, then frame-interleaved f32 values.
struct FeatureFile {
  Eigen::MatrixXd data;  // frames x dim
  FeatureKind kind = FeatureKind::emg;
  bool normalized = false;
  std::uint64_t provenance = 0;
};

FeatureFile read_feature_file(const fs::path& path);
void write_feature_file(const fs::path& path, const FeatureFile& file);

}  // namespace emgvoice
