#pragma once

#include "emgvoice/checkpoint.hpp"
#include "emgvoice/features.hpp"
#include "emgvoice/nn.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <vector>

namespace emgvoice {

inline constexpr int kMuLawClasses = 256;

// sign(x) ln(1 + 255|x|) / ln 256, then floor((y + 1) / 2 * 255 + 0.5).
// Inputs outside [-1, 1] are clamped; `clamped` reports it.
int mulaw_encode(double x, bool* clamped = nullptr);
double mulaw_decode(int code);
std::vector<int> mulaw_encode(const Eigen::Ref<const Eigen::VectorXd>& x);
Eigen::VectorXd mulaw_decode(const std::vector<int>& codes);

struct WaveNetConfig {
  int layers = 16;
  int max_dilation = 128;
  int residual = 64;
  int skip = 256;
  int output_hidden = 256;
  int cond_channels = 128;
  int cond_hidden = 512;
  int feature_dim = kMfccDim;
  int upsample_window = 432;
  int upsample_stride = 160;

  void validate() const;
  // Dilations cycle 1, 2, 4, ..., max_dilation.
  int dilation(int layer) const;
  // Codes before position t that can influence the scores at t.
  int receptive_field() const;

  static WaveNetConfig desk() { return {8, 128, 8, 16, 16, 8, 8, kMfccDim, 432, 160}; }
};

class WaveNetModel {
public:
  WaveNetModel() = default;
  explicit WaveNetModel(WaveNetConfig cfg);
  static WaveNetModel init(WaveNetConfig cfg, std::uint64_t seed);

  const WaveNetConfig& config() const { return cfg_; }
  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }
  const nn::Layout& layout() const { return layout_; }

  struct Layer {
    nn::Block w_past, w_now, bias, cond, res_w, res_b, skip_w, skip_b;
    int dilation = 1;
    bool has_residual = true;
  };

  const nn::Block& embedding() const { return embed_; }
  const std::vector<Layer>& layers() const { return layers_; }
  const nn::BiLstmBlocks& cond_rnn() const { return cond_rnn_; }
  const nn::Block& cond_proj_w() const { return cond_w_; }
  const nn::Block& cond_proj_b() const { return cond_b_; }
  const nn::Block& upsample_w() const { return up_w_; }
  const nn::Block& upsample_b() const { return up_b_; }
  const nn::Block& out1_w() const { return out1_w_; }
  const nn::Block& out1_b() const { return out1_b_; }
  const nn::Block& out2_w() const { return out2_w_; }
  const nn::Block& out2_b() const { return out2_b_; }

  // Normalizer applied to MFCC inputs before the conditioning network.
  Normalizer feature_norm;

private:
  WaveNetConfig cfg_;
  nn::Layout layout_;
  nn::Block embed_;
  std::vector<Layer> layers_;
  nn::BiLstmBlocks cond_rnn_;
  nn::Block cond_w_, cond_b_, up_w_, up_b_;
  nn::Block out1_w_, out1_b_, out2_w_, out2_b_;
  Eigen::VectorXd params_;
};

// cond_channels x (stride * T) conditioning vectors for T feature frames.
// Sample s of frame t's window lands at output index stride * t + s.
Eigen::MatrixXd condition_upsample(const WaveNetModel& model, const FeatureSequence& features);

// 256 x N scores. Position t sees codes[0..t-1] and cond[:, t].
Eigen::MatrixXd wavenet_teacher_logits(const WaveNetModel& model, const std::vector<int>& codes,
                                       const Eigen::MatrixXd& cond);

// Mean cross-entropy of the teacher-forced scores over a clip whose
// conditioning comes from `features`; gradient scaled by `scale` is added to
// grad when given.
double wavenet_loss(const WaveNetModel& model, const FeatureSequence& features, const std::vector<int>& codes,
                    Eigen::VectorXd* grad = nullptr, double scale = 1.0);

struct GenerateOptions {
  std::uint64_t seed = 1;
  double temperature = 1.0;
  bool argmax = false;
};

// Autoregressive sampling; returns stride * T samples in [-1, 1].
Eigen::VectorXd wavenet_generate(const WaveNetModel& model, const FeatureSequence& features,
                                 const GenerateOptions& opts = {});
// Codes produced by the same procedure.
std::vector<int> wavenet_generate_codes(const WaveNetModel& model, const FeatureSequence& features,
                                        const GenerateOptions& opts = {});

struct WaveNetTrainConfig {
  int steps = 500;
  double learning_rate = 1e-3;
  double clip_norm = 10.0;
  int segment_frames = 0;  // 0 trains on whole clips
  std::uint64_t seed = 1;
};

struct AudioClip {
  std::string id;
  FeatureSequence features;  // raw MFCC
  Eigen::VectorXd audio;     // at least stride * frames samples
};

// Returns the loss recorded at each step.
std::vector<double> train_wavenet(WaveNetModel& model, const std::vector<AudioClip>& clips,
                                  const WaveNetTrainConfig& cfg);

struct GriffinLimConfig {
  int iterations = 60;
  int win = 432;
  int hop = 160;
  int n_fft = 512;
  int n_mels = 40;
  double sample_rate = 16000.0;
  double f_min = 0.0;
  double f_max = 8000.0;
  std::uint64_t seed = 1;
};

// MFCC (T x 26) -> audio of hop * T samples.
Eigen::VectorXd griffin_lim_invert(const FeatureSequence& mfcc, const GriffinLimConfig& cfg = {});

Checkpoint to_checkpoint(const WaveNetModel& model, const nlohmann::json& extra = {});
WaveNetModel wavenet_from_checkpoint(const Checkpoint& ckpt);

}  // namespace emgvoice
