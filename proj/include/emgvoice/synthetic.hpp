#pragma once

#include "emgvoice/io.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace emgvoice {

// Generator for a toy corpus whose EMG and audio are both driven by a few
// smooth latent trajectories. Each silent recording replays its vocalized
// counterpart's latents through a known monotone time warp, with fresh muscle
// noise, a perturbed mixing, per-channel gain changes (electrode 4 much
// weaker), new mains hum and extra noise.
struct SyntheticConfig {
  int pairs = 15;
  int nonparallel = 0;
  int sessions = 2;
  std::uint64_t seed = 1;
  double min_seconds = 1.5;  // includes a 0.5 s rest at the start
  double max_seconds = 2.5;
  double max_warp = 0.35;     // |beta| bound of u + beta sin(2 pi u) / (2 pi)
  double rate_jitter = 0.15;  // silent/vocalized duration ratio in 1 +- jitter
  double silent_noise = 0.5;        // std relative to the EMG content scale
  double silent_distortion = 2.0;   // perturbation of the silent-mode mixing matrices
  double audio_noise = 1e-5;        // white noise floor of the recordings
  double weak_gain = 0.35;
  int latent_dims = 4;

  void validate() const;
};

struct SyntheticWarp {
  std::string vocalized_id;
  double beta = 0.0;
  std::vector<int> mapping;  // silent EMG frame -> vocalized frame
};

// Writes manifest.json, per-session EMG/WAV files and warps.json under dir.
// Returns the ground-truth warps keyed by silent id.
std::map<std::string, SyntheticWarp> make_synthetic_corpus(const fs::path& dir, const SyntheticConfig& cfg);

std::map<std::string, SyntheticWarp> load_synthetic_warps(const fs::path& dir);

}  // namespace emgvoice
