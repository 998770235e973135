#pragma once

#include "emgvoice/align.hpp"
#include "emgvoice/config.hpp"
#include "emgvoice/dataset.hpp"
#include "emgvoice/eval.hpp"
#include "emgvoice/features.hpp"
#include "emgvoice/transducer.hpp"
#include "emgvoice/vocoder.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace emgvoice {

// Raw (unnormalized) features of one utterance after electrode masking and
// signal cleanup. Vocalized EMG and MFCC share a frame count.
struct UtteranceFeatures {
  std::string id;
  FeatureSequence emg;
  std::optional<FeatureSequence> audio;
  bool audio_warning = false;
};

UtteranceFeatures featurize_utterance(const Utterance& raw, const PipelineConfig& cfg);

using FeatureTable = std::map<std::string, UtteranceFeatures>;

struct AlignmentArtifacts {
  Normalizer emg_norm;
  Normalizer audio_norm;
  CcaProjection cca;
  std::map<std::string, AlignmentRecord> emg_paths;  // training pairs, used to fit the CCA
  std::map<std::string, AlignmentRecord> cca_paths;  // training and validation pairs
};

// Normalizers are fit on the training split only. Requires at least one
// training pair for the CCA fit.
AlignmentArtifacts compute_alignments(const CorpusManifest& split, const FeatureTable& feats,
                                      const PipelineConfig& cfg);

TrainingData make_training_data(const CorpusManifest& split, const FeatureTable& feats,
                                const AlignmentArtifacts& art);

// Session/mode keys present in the training split.
std::vector<SessionKey> training_keys(const CorpusManifest& split);

// Transducer output for a silent utterance in raw MFCC units.
FeatureSequence predict_mfcc(const TransducerModel& model, const UtteranceFeatures& feats, const SessionKey& key);

// Mean absolute frame offset between two mappings of equal length.
double mean_frame_error(const std::vector<int>& a, const std::vector<int>& b);

// ----- on-disk stages -------------------------------------------------------

enum class Stage { preprocess, featurize, align, train, train_vocoder, synthesize, evaluate };
const char* to_string(Stage s);

struct StageInfo {
  Stage stage;
  std::uint64_t hash = 0;
  fs::path dir;
  bool cached = false;
};

struct StageLogger {
  std::function<void(const std::string& line)> sink;
  void operator()(const std::string& stage, const std::string& event,
                  const std::vector<std::pair<std::string, std::string>>& fields = {}) const;
};

// Work-directory layout: <work>/<stage>/<hash>/ with a stage.json holding the
// full config, the hash and the upstream hash. Completed stages are reused
// unless `force` is set.
class Workspace {
public:
  Workspace(PipelineConfig cfg, bool force = false, StageLogger log = {});

  const PipelineConfig& config() const { return cfg_; }
  std::uint64_t hash(Stage s) const;
  fs::path dir(Stage s) const;

  StageInfo preprocess();
  StageInfo featurize();
  StageInfo align();
  StageInfo train();
  StageInfo train_vocoder();
  StageInfo synthesize();
  StageInfo evaluate();

  // Loads artifacts of a completed stage; data error naming the stage to run
  // when they are missing or were produced by a different config.
  CorpusManifest split_manifest() const;
  FeatureTable features() const;
  TransducerModel transducer() const;
  WerReport report() const;
  nlohmann::json train_summary() const;

private:
  void require(Stage s) const;
  bool begin(Stage s, StageInfo& info);
  void finish(Stage s, const StageInfo& info, nlohmann::json extra = {});

  PipelineConfig cfg_;
  bool force_;
  StageLogger log_;
};

// Runs align, train, synthesize and evaluate for each setting, reusing
// upstream stages. Settings are data fractions or electrode removal lists.
struct AblationRow {
  std::string setting;
  std::size_t train_utterances = 0;
  int emg_dim = 0;
  double best_val_loss = 0.0;
  double wer = 0.0;
};

std::vector<AblationRow> ablate_data_fraction(const PipelineConfig& base, const std::vector<double>& fractions,
                                              bool force, const StageLogger& log);
std::vector<AblationRow> ablate_electrodes(const PipelineConfig& base, const std::vector<std::vector<int>>& removals,
                                           bool force, const StageLogger& log);
std::string ablation_table(const std::string& column, const std::vector<AblationRow>& rows);
nlohmann::json to_json(const std::vector<AblationRow>& rows);

}  // namespace emgvoice
