#pragma once

#include "emgvoice/align.hpp"
#include "emgvoice/dataset.hpp"
#include "emgvoice/eval.hpp"
#include "emgvoice/features.hpp"
#include "emgvoice/signals.hpp"
#include "emgvoice/transducer.hpp"
#include "emgvoice/vocoder.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace emgvoice {

// One right-hand side of the key/value format. Scalars hold a single item;
// arrays hold zero or more.
struct ConfigValue {
  std::vector<std::string> items;
  bool is_array = false;
  std::string origin;  // "file:line" or "env NAME" for messages
};

// `section.key` -> value, in order of appearance. Top-level keys have no dot.
using ConfigEntries = std::vector<std::pair<std::string, ConfigValue>>;

// Grammar: see docs/config.md. Throws a config error with file and line.
ConfigEntries parse_config_text(std::string_view text, const std::string& origin = "<config>");

struct SplitSettings {
  std::size_t n_val = 2;
  std::size_t n_test = 2;
};

struct VocoderSettings {
  std::string kind = "griffin-lim";  // or "wavenet"
  WaveNetConfig wavenet = WaveNetConfig::desk();
  WaveNetTrainConfig wavenet_train;
  GriffinLimConfig griffin_lim;
  double sample_temperature = 1.0;
};

struct EvalSettings {
  std::string provider = "echo";
  std::string provider_arg;
  NormalizeOptions normalize;
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  int workers = 0;  // 0 = all cores
  std::string corpus;
  std::string work = "work";

  FilterSpec filter;
  bool gate_audio = true;
  double frame_ms = 27.0;
  double hop_ms = 10.0;
  SplitSettings split;
  double data_fraction = 1.0;  // share of the training pool the transducer sees
  std::vector<int> removed_electrodes;
  AlignConfig align;
  TransducerConfig transducer = TransducerConfig::desk();
  TrainConfig train;
  VocoderSettings vocoder;
  EvalSettings eval;

  ElectrodeMask electrode_mask() const;
  FrameConfig emg_frames() const;
  FrameConfig audio_frames() const;
  void validate() const;
};

// Applies entries in order, except that `*.preset` keys go first so explicit
// fields override the preset. Unknown keys are config errors.
void apply_config(PipelineConfig& cfg, const ConfigEntries& entries);
void apply_config(PipelineConfig& cfg, const std::string& key, const std::string& value);

PipelineConfig load_config(const fs::path& path);

// EMGVOICE_<SECTION>_<KEY> and EMGVOICE_<KEY> for top-level keys, e.g.
// EMGVOICE_TRAIN_EPOCHS=3. EMGVOICE_ASR_* belongs to the HTTP provider and
// is skipped. Returns the names that matched no key.
std::vector<std::string> apply_env_overrides(PipelineConfig& cfg,
                                             const std::function<const char*(const char*)>& getenv_fn,
                                             const std::vector<std::string>& names);
// Same, scanning the process environment.
std::vector<std::string> apply_env_overrides(PipelineConfig& cfg);

// Every key, grouped by section.
nlohmann::json to_json(const PipelineConfig& cfg);
std::vector<std::string> config_keys();

std::string hex_hash(std::uint64_t h);
// FNV-1a of the canonical JSON of the named sections, top-level scalars or
// single "section.key" entries, salted with `upstream`.
std::uint64_t section_hash(const PipelineConfig& cfg, const std::vector<std::string>& sections,
                           std::uint64_t upstream = 0);

}  // namespace emgvoice
