#pragma once

#include "emgvoice/align.hpp"
#include "emgvoice/checkpoint.hpp"
#include "emgvoice/dataset.hpp"
#include "emgvoice/features.hpp"
#include "emgvoice/nn.hpp"
#include "emgvoice/signals.hpp"

#include <array>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace emgvoice {

struct TransducerConfig {
  int hidden = 1024;
  int layers = 3;
  int embed_dim = 32;
  double dropout = 0.5;
  int output_dim = kMfccDim;

  void validate() const;
  static TransducerConfig desk() { return {32, 2, 8, 0.5, kMfccDim}; }
};

struct SessionKey {
  std::string session;
  Mode mode = Mode::silent;

  auto operator<=>(const SessionKey&) const = default;
};

std::string to_string(const SessionKey& key);

class TransducerModel {
public:
  TransducerModel() = default;
  // Zero-valued parameters; see init() for random initialization.
  TransducerModel(int emg_dim, std::vector<SessionKey> keys, TransducerConfig cfg);

  // Recurrent and output weights uniform in +-1/sqrt(fan_in), embeddings
  // standard normal.
  static TransducerModel init(int emg_dim, std::vector<SessionKey> keys, std::uint64_t seed,
                              TransducerConfig cfg = {});

  const TransducerConfig& config() const { return cfg_; }
  int emg_dim() const { return emg_dim_; }
  int input_dim() const { return emg_dim_ + cfg_.embed_dim; }
  const std::vector<SessionKey>& keys() const { return keys_; }
  std::optional<int> key_index(const SessionKey& key) const;

  // Exact key if known, else the session's silent-mode embedding, else the
  // mean of all silent-mode embeddings.
  Eigen::VectorXd embedding(const SessionKey& key) const;

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }
  const nn::Layout& layout() const { return layout_; }
  const nn::Block& embedding_block() const { return embed_; }
  const std::vector<nn::BiLstmBlocks>& layers() const { return layers_; }
  const nn::Block& output_weight() const { return out_w_; }
  const nn::Block& output_bias() const { return out_b_; }

  Normalizer input_norm;
  Normalizer target_norm;

private:
  TransducerConfig cfg_;
  int emg_dim_ = 0;
  std::vector<SessionKey> keys_;
  nn::Layout layout_;
  nn::Block embed_;
  std::vector<nn::BiLstmBlocks> layers_;
  nn::Block out_w_, out_b_;
  Eigen::VectorXd params_;
};

// Output frames equal input frames. Dropout is applied only when `training`
// is set, with masks drawn from `dropout_seed`.
FeatureSequence forward(const TransducerModel& model, const FeatureSequence& emg, const SessionKey& key,
                        bool training = false, std::uint64_t dropout_seed = 0);

// Sum of squared errors against `target` (frames x output_dim). Adds
// scale * d(sse)/d(params) into grad. The key must be one of the model's keys.
double sse_and_gradient(const TransducerModel& model, const FeatureSequence& emg, const Eigen::MatrixXd& target,
                        const SessionKey& key, bool training, std::uint64_t dropout_seed, double scale,
                        Eigen::VectorXd& grad);

struct TrainConfig {
  double learning_rate = 1e-3;
  double decay = 0.5;
  int patience = 5;
  int epochs = 30;
  int batch_size = 8;
  double clip_norm = 10.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Per-example draw weight for silent+transferred, parallel vocalized and
  // non-parallel vocalized examples.
  std::array<double, 3> source_weights{1.0, 1.0, 1.0};
  // Validation targets follow the current alignment cache; otherwise the
  // initial CCA alignments are kept for validation.
  bool validate_on_current_targets = true;
  std::uint64_t seed = 1;
  int workers = 0;

  void validate() const;
};

struct TrainExample {
  std::string id;
  FeatureSequence emg;     // normalized
  Eigen::MatrixXd target;  // normalized, same frame count as emg
  SessionKey key;
};

struct TrainingState {
  int epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  nn::Adam optimizer;
  std::map<std::string, AlignmentPath> alignments;
  Eigen::VectorXd best_params;
};

TrainingState make_training_state(const TransducerModel& model, const TrainConfig& cfg);

// Mean squared error over frames and dimensions of the batch, one clipped
// Adam update. A non-finite loss throws before any parameter changes and
// names the utterance.
double training_step(TransducerModel& model, TrainingState& state, const std::vector<TrainExample>& batch,
                     const TrainConfig& cfg, std::uint64_t dropout_seed);

// All sequences normalized. Pairs link a silent utterance to its vocalized
// counterpart; the vocalized audio provides the transferred targets.
struct ParallelExample {
  std::string silent_id;
  std::string vocalized_id;
  FeatureSequence silent_emg;
  FeatureSequence vocalized_emg;
  FeatureSequence vocalized_audio;
  SessionKey silent_key;
  SessionKey vocalized_key;
};

struct VocalizedExample {
  std::string id;
  FeatureSequence emg;
  FeatureSequence audio;
  SessionKey key;
};

struct TrainingData {
  std::vector<ParallelExample> train_pairs;
  std::vector<VocalizedExample> nonparallel;
  std::vector<ParallelExample> val_pairs;
  CcaProjection cca;
};

enum class Source { silent_transferred = 0, parallel_vocalized = 1, nonparallel_vocalized = 2 };

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double rate = 0.0;
  bool realigned = false;
  std::array<int, 3> source_counts{};
  int skipped = 0;
};

nlohmann::json to_json(const EpochLog& e);

struct AlignmentSnapshot {
  int epoch = 0;
  CostType cost = CostType::cca;
  std::map<std::string, AlignmentPath> paths;
};

struct TrainHooks {
  // Replaces the measured validation loss, e.g. to inject a plateau.
  std::function<double(int epoch, double measured)> validation_override;
  std::function<void(const EpochLog&)> on_epoch;
  std::function<void(const std::string&)> warn;
};

struct TrainResult {
  TransducerModel model;  // best-validation snapshot
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val = 0.0;
  std::vector<AlignmentSnapshot> alignments;
};

// Epochs are 1-based. Alignments start from the CCA cost; the full cost is
// used at epoch warmup+1 and every realign_period epochs after it.
bool is_realignment_epoch(int epoch, const AlignConfig& align);

// Number of examples drawn per source in one epoch.
std::array<int, 3> source_draws(const std::array<int, 3>& available, const std::array<double, 3>& weights);

TrainResult train_transducer(TransducerModel model, const TrainingData& data, const TrainConfig& cfg,
                             const AlignConfig& align, const TrainHooks& hooks = {});

// Preprocess, featurize, normalize, forward and denormalize a silent utterance.
FeatureSequence predict_features(const TransducerModel& model, const Utterance& utterance,
                                 const FilterSpec& filter = {});

Checkpoint to_checkpoint(const TransducerModel& model, const nlohmann::json& extra = {});
TransducerModel transducer_from_checkpoint(const Checkpoint& ckpt);

}  // namespace emgvoice
