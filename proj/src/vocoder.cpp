#include "emgvoice/vocoder.hpp"

#include "emgvoice/dsp.hpp"
#include "emgvoice/error.hpp"

#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>

namespace emgvoice {

using nlohmann::json;

namespace {
constexpr double kMu = kMuLawClasses - 1;
}

int mulaw_encode(double x, bool* clamped) {
  const bool out_of_range = !(std::abs(x) <= 1.0);
  if (clamped) *clamped = out_of_range;
  if (std::isnan(x)) x = 0.0;
  x = std::clamp(x, -1.0, 1.0);
  const double y = std::copysign(std::log1p(kMu * std::abs(x)) / std::log1p(kMu), x);
  return std::clamp(static_cast<int>(std::floor((y + 1.0) / 2.0 * kMu + 0.5)), 0, kMuLawClasses - 1);
}

double mulaw_decode(int code) {
  code = std::clamp(code, 0, kMuLawClasses - 1);
  const double y = 2.0 * code / kMu - 1.0;
  return std::copysign((std::pow(1.0 + kMu, std::abs(y)) - 1.0) / kMu, y);
}

std::vector<int> mulaw_encode(const Eigen::Ref<const Eigen::VectorXd>& x) {
  std::vector<int> codes(static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) codes[static_cast<std::size_t>(i)] = mulaw_encode(x(i));
  return codes;
}

Eigen::VectorXd mulaw_decode(const std::vector<int>& codes) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(codes.size()));
  for (std::size_t i = 0; i < codes.size(); ++i) x(static_cast<Eigen::Index>(i)) = mulaw_decode(codes[i]);
  return x;
}

void WaveNetConfig::validate() const {
  if (layers < 1) throw config_error("WaveNet needs at least one layer");
  if (max_dilation < 1 || (max_dilation & (max_dilation - 1)) != 0)
    throw config_error("max dilation must be a power of two");
  if (residual < 1 || skip < 1 || output_hidden < 1 || cond_channels < 1 || cond_hidden < 1 || feature_dim < 1)
    throw config_error("WaveNet channel counts must be positive");
  if (upsample_stride < 1 || upsample_window < upsample_stride)
    throw config_error("upsampling window must be at least the stride");
}

int WaveNetConfig::dilation(int layer) const {
  const int cycle = std::countr_zero(static_cast<unsigned>(max_dilation)) + 1;
  return 1 << (layer % cycle);
}

int WaveNetConfig::receptive_field() const {
  int sum = 1;
  for (int l = 0; l < layers; ++l) sum += dilation(l);
  return sum;
}

WaveNetModel::WaveNetModel(WaveNetConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const int r = cfg_.residual, c = cfg_.cond_channels;
  embed_ = layout_.add("embedding", r, kMuLawClasses);
  cond_rnn_ = nn::add_bilstm(layout_, "cond.lstm", cfg_.feature_dim, cfg_.cond_hidden);
  cond_w_ = layout_.add("cond.proj.w", c, 2 * cfg_.cond_hidden);
  cond_b_ = layout_.add("cond.proj.b", c);
  up_w_ = layout_.add("cond.upsample.w", static_cast<Eigen::Index>(c) * cfg_.upsample_window, c);
  up_b_ = layout_.add("cond.upsample.b", c);
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l);
    Layer layer;
    layer.dilation = cfg_.dilation(l);
    layer.has_residual = l + 1 < cfg_.layers;
    layer.w_past = layout_.add(p + ".w_past", 2 * r, r);
    layer.w_now = layout_.add(p + ".w_now", 2 * r, r);
    layer.bias = layout_.add(p + ".bias", 2 * r);
    layer.cond = layout_.add(p + ".cond", 2 * r, c);
    if (layer.has_residual) {
      layer.res_w = layout_.add(p + ".res.w", r, r);
      layer.res_b = layout_.add(p + ".res.b", r);
    }
    layer.skip_w = layout_.add(p + ".skip.w", cfg_.skip, r);
    layer.skip_b = layout_.add(p + ".skip.b", cfg_.skip);
    layers_.push_back(layer);
  }
  out1_w_ = layout_.add("out1.w", cfg_.output_hidden, cfg_.skip);
  out1_b_ = layout_.add("out1.b", cfg_.output_hidden);
  out2_w_ = layout_.add("out2.w", kMuLawClasses, cfg_.output_hidden);
  out2_b_ = layout_.add("out2.b", kMuLawClasses);
  params_ = Eigen::VectorXd::Zero(layout_.size());
}

WaveNetModel WaveNetModel::init(WaveNetConfig cfg, std::uint64_t seed) {
  WaveNetModel m(cfg);
  std::mt19937_64 rng(seed);
  auto fan_in = [](double n) { return 1.0 / std::sqrt(n); };
  const auto& c = m.cfg_;
  nn::fill_normal(m.params_, m.embed_, 1.0, rng);
  nn::init_bilstm(m.params_, m.cond_rnn_, rng);
  nn::fill_uniform(m.params_, m.cond_w_, fan_in(2.0 * c.cond_hidden), rng);
  nn::fill_uniform(m.params_, m.up_w_,
                   fan_in(static_cast<double>(c.cond_channels) * c.upsample_window / c.upsample_stride), rng);
  for (const auto& l : m.layers_) {
    nn::fill_uniform(m.params_, l.w_past, fan_in(2.0 * c.residual), rng);
    nn::fill_uniform(m.params_, l.w_now, fan_in(2.0 * c.residual), rng);
    nn::fill_uniform(m.params_, l.cond, fan_in(c.cond_channels), rng);
    if (l.has_residual) nn::fill_uniform(m.params_, l.res_w, fan_in(c.residual), rng);
    nn::fill_uniform(m.params_, l.skip_w, fan_in(c.residual), rng);
  }
  nn::fill_uniform(m.params_, m.out1_w_, fan_in(c.skip), rng);
  nn::fill_uniform(m.params_, m.out2_w_, fan_in(c.output_hidden), rng);
  return m;
}

namespace {

struct CondCache {
  nn::BiLstmCache rnn;
  Eigen::MatrixXd hidden;  // 2H x T
  Eigen::MatrixXd proj;    // C x T
};

Eigen::MatrixXd cond_forward(const WaveNetModel& m, const FeatureSequence& features, CondCache* cache) {
  const auto& cfg = m.config();
  if (features.frames() < 1) throw data_error("conditioning needs at least one feature frame");
  if (features.dim() != cfg.feature_dim)
    throw data_error("vocoder expects " + std::to_string(cfg.feature_dim) + "-dim features, got " +
                     std::to_string(features.dim()));
  const Eigen::MatrixXd x =
      (m.feature_norm.dim() == features.dim() ? m.feature_norm.apply(features.data) : features.data).transpose();
  const auto& p = m.params();
  const Eigen::Index frames = x.cols();
  const int c = cfg.cond_channels, k = cfg.upsample_window, stride = cfg.upsample_stride;

  Eigen::MatrixXd hidden = nn::bilstm_forward(p, m.cond_rnn(), x, cache ? &cache->rnn : nullptr);
  Eigen::MatrixXd proj = nn::view(p, m.cond_proj_w()) * hidden;
  proj.colwise() += nn::view(p, m.cond_proj_b()).col(0);

  const Eigen::MatrixXd taps = nn::view(p, m.upsample_w()) * proj;  // (K*C) x T
  const Eigen::Index n = static_cast<Eigen::Index>(stride) * frames;
  Eigen::MatrixXd out = nn::view(p, m.upsample_b()).col(0).replicate(1, n);
  for (Eigen::Index t = 0; t < frames; ++t) {
    const Eigen::Map<const Eigen::MatrixXd> window(taps.col(t).data(), c, k);
    const Eigen::Index start = t * stride;
    const Eigen::Index len = std::min<Eigen::Index>(k, n - start);
    out.middleCols(start, len) += window.leftCols(len);
  }
  if (cache) {
    cache->hidden = std::move(hidden);
    cache->proj = std::move(proj);
  }
  return out;
}

void cond_backward(const WaveNetModel& m, const CondCache& cache, const Eigen::MatrixXd& dout, Eigen::VectorXd& grad) {
  const auto& cfg = m.config();
  const auto& p = m.params();
  const int c = cfg.cond_channels, k = cfg.upsample_window, stride = cfg.upsample_stride;
  const Eigen::Index frames = cache.proj.cols(), n = dout.cols();

  nn::view(grad, m.upsample_b()) += dout.rowwise().sum();
  Eigen::MatrixXd dtaps = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c) * k, frames);
  for (Eigen::Index t = 0; t < frames; ++t) {
    Eigen::Map<Eigen::MatrixXd> window(dtaps.col(t).data(), c, k);
    const Eigen::Index start = t * stride;
    const Eigen::Index len = std::min<Eigen::Index>(k, n - start);
    window.leftCols(len) = dout.middleCols(start, len);
  }
  nn::view(grad, m.upsample_w()) += (dtaps * cache.proj.transpose()).eval();
  const Eigen::MatrixXd dproj = nn::view(p, m.upsample_w()).transpose() * dtaps;
  nn::view(grad, m.cond_proj_w()) += (dproj * cache.hidden.transpose()).eval();
  nn::view(grad, m.cond_proj_b()) += dproj.rowwise().sum();
  const Eigen::MatrixXd dhidden = nn::view(p, m.cond_proj_w()).transpose() * dproj;
  nn::bilstm_backward(p, m.cond_rnn(), cache.rnn, dhidden, grad);
}

// Columns shifted right by d with zero fill.
Eigen::MatrixXd delayed(const Eigen::MatrixXd& x, int d) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  if (d < x.cols()) out.rightCols(x.cols() - d) = x.leftCols(x.cols() - d);
  return out;
}

struct LayerCache {
  Eigen::MatrixXd x, past, f, g, z;
};

struct NetCache {
  std::vector<int> prev;
  std::vector<LayerCache> layers;
  Eigen::MatrixXd skip, h1;
};

Eigen::MatrixXd net_forward(const WaveNetModel& m, const std::vector<int>& codes, const Eigen::MatrixXd& cond,
                            NetCache* cache) {
  const auto& cfg = m.config();
  const auto& p = m.params();
  const Eigen::Index n = static_cast<Eigen::Index>(codes.size());
  if (cond.cols() != n || cond.rows() != cfg.cond_channels)
    throw data_error("conditioning covers " + std::to_string(cond.cols()) + " samples, codes " + std::to_string(n));
  const int r = cfg.residual;

  std::vector<int> prev(codes.size());
  for (std::size_t t = 0; t < codes.size(); ++t) {
    const int code = t == 0 ? kMuLawClasses / 2 : codes[t - 1];
    if (code < 0 || code >= kMuLawClasses) throw data_error("mu-law code out of range");
    prev[t] = code;
  }
  const auto embed = nn::view(p, m.embedding());
  Eigen::MatrixXd x(r, n);
  for (Eigen::Index t = 0; t < n; ++t) x.col(t) = embed.col(prev[static_cast<std::size_t>(t)]);

  Eigen::MatrixXd skip = Eigen::MatrixXd::Zero(cfg.skip, n);
  for (const auto& layer : m.layers()) {
    LayerCache lc;
    lc.past = delayed(x, layer.dilation);
    Eigen::MatrixXd a = nn::view(p, layer.w_past) * lc.past;
    a.noalias() += nn::view(p, layer.w_now) * x;
    a.noalias() += nn::view(p, layer.cond) * cond;
    a.colwise() += nn::view(p, layer.bias).col(0);
    lc.f = a.topRows(r).array().tanh();
    lc.g = a.bottomRows(r).unaryExpr([](double v) { return nn::sigmoid(v); });
    lc.z = lc.f.cwiseProduct(lc.g);
    skip.noalias() += nn::view(p, layer.skip_w) * lc.z;
    skip.colwise() += nn::view(p, layer.skip_b).col(0);
    lc.x = x;
    if (layer.has_residual) {
      x.noalias() += nn::view(p, layer.res_w) * lc.z;
      x.colwise() += nn::view(p, layer.res_b).col(0);
    }
    if (cache) cache->layers.push_back(std::move(lc));
  }
  const Eigen::MatrixXd skip_relu = skip.cwiseMax(0.0);
  Eigen::MatrixXd h1 = nn::view(p, m.out1_w()) * skip_relu;
  h1.colwise() += nn::view(p, m.out1_b()).col(0);
  Eigen::MatrixXd logits = nn::view(p, m.out2_w()) * h1.cwiseMax(0.0);
  logits.colwise() += nn::view(p, m.out2_b()).col(0);
  if (cache) {
    cache->prev = std::move(prev);
    cache->skip = std::move(skip);
    cache->h1 = std::move(h1);
  }
  return logits;
}

// Returns d(loss)/d(cond).
Eigen::MatrixXd net_backward(const WaveNetModel& m, const NetCache& cache, const Eigen::MatrixXd& cond,
                             const Eigen::MatrixXd& dlogits, Eigen::VectorXd& grad) {
  const auto& cfg = m.config();
  const auto& p = m.params();
  const int r = cfg.residual;
  const Eigen::Index n = dlogits.cols();

  const Eigen::MatrixXd h1_relu = cache.h1.cwiseMax(0.0);
  nn::view(grad, m.out2_w()) += (dlogits * h1_relu.transpose()).eval();
  nn::view(grad, m.out2_b()) += dlogits.rowwise().sum();
  Eigen::MatrixXd dh1 = nn::view(p, m.out2_w()).transpose() * dlogits;
  dh1 = (cache.h1.array() > 0).select(dh1, 0.0);
  const Eigen::MatrixXd skip_relu = cache.skip.cwiseMax(0.0);
  nn::view(grad, m.out1_w()) += (dh1 * skip_relu.transpose()).eval();
  nn::view(grad, m.out1_b()) += dh1.rowwise().sum();
  Eigen::MatrixXd dskip = nn::view(p, m.out1_w()).transpose() * dh1;
  dskip = (cache.skip.array() > 0).select(dskip, 0.0);
  const Eigen::VectorXd dskip_sum = dskip.rowwise().sum();

  Eigen::MatrixXd dcond = Eigen::MatrixXd::Zero(cfg.cond_channels, n);
  Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(r, n);
  for (std::size_t li = m.layers().size(); li-- > 0;) {
    const auto& layer = m.layers()[li];
    const auto& lc = cache.layers[li];
    nn::view(grad, layer.skip_w) += (dskip * lc.z.transpose()).eval();
    nn::view(grad, layer.skip_b) += dskip_sum;
    Eigen::MatrixXd dz = nn::view(p, layer.skip_w).transpose() * dskip;
    if (layer.has_residual) {
      nn::view(grad, layer.res_w) += (dx * lc.z.transpose()).eval();
      nn::view(grad, layer.res_b) += dx.rowwise().sum();
      dz.noalias() += nn::view(p, layer.res_w).transpose() * dx;
    }
    Eigen::MatrixXd da(2 * r, n);
    da.topRows(r) = dz.array() * lc.g.array() * (1.0 - lc.f.array().square());
    da.bottomRows(r) = dz.array() * lc.f.array() * lc.g.array() * (1.0 - lc.g.array());
    nn::view(grad, layer.w_past) += (da * lc.past.transpose()).eval();
    nn::view(grad, layer.w_now) += (da * lc.x.transpose()).eval();
    nn::view(grad, layer.bias) += da.rowwise().sum();
    nn::view(grad, layer.cond) += (da * cond.transpose()).eval();
    dcond.noalias() += nn::view(p, layer.cond).transpose() * da;

    Eigen::MatrixXd dx_in = nn::view(p, layer.w_now).transpose() * da;
    const Eigen::MatrixXd dpast = nn::view(p, layer.w_past).transpose() * da;
    const int d = layer.dilation;
    if (d < n) dx_in.leftCols(n - d) += dpast.rightCols(n - d);
    if (layer.has_residual) dx_in += dx;
    dx = std::move(dx_in);
  }
  Eigen::MatrixXd dembed = Eigen::MatrixXd::Zero(r, kMuLawClasses);
  for (Eigen::Index t = 0; t < n; ++t) dembed.col(cache.prev[static_cast<std::size_t>(t)]) += dx.col(t);
  nn::view(grad, m.embedding()) += dembed;
  return dcond;
}

}  // namespace

Eigen::MatrixXd condition_upsample(const WaveNetModel& model, const FeatureSequence& features) {
  return cond_forward(model, features, nullptr);
}

Eigen::MatrixXd wavenet_teacher_logits(const WaveNetModel& model, const std::vector<int>& codes,
                                       const Eigen::MatrixXd& cond) {
  return net_forward(model, codes, cond, nullptr);
}

double wavenet_loss(const WaveNetModel& model, const FeatureSequence& features, const std::vector<int>& codes,
                    Eigen::VectorXd* grad, double scale) {
  CondCache cc;
  const Eigen::MatrixXd cond = cond_forward(model, features, grad ? &cc : nullptr);
  if (static_cast<Eigen::Index>(codes.size()) != cond.cols())
    throw data_error("clip has " + std::to_string(codes.size()) + " samples, conditioning covers " +
                     std::to_string(cond.cols()));
  NetCache nc;
  const Eigen::MatrixXd logits = net_forward(model, codes, cond, grad ? &nc : nullptr);
  const Eigen::Index n = logits.cols();

  Eigen::MatrixXd probs(logits.rows(), n);
  double loss = 0.0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double mx = logits.col(t).maxCoeff();
    probs.col(t) = (logits.col(t).array() - mx).exp();
    const double z = probs.col(t).sum();
    probs.col(t) /= z;
    loss -= logits(codes[static_cast<std::size_t>(t)], t) - mx - std::log(z);
  }
  loss /= static_cast<double>(n);
  if (!grad) return loss;
  if (grad->size() != model.params().size()) throw data_error("gradient size mismatch");

  Eigen::MatrixXd dlogits = probs;
  for (Eigen::Index t = 0; t < n; ++t) dlogits(codes[static_cast<std::size_t>(t)], t) -= 1.0;
  dlogits *= scale / static_cast<double>(n);
  const Eigen::MatrixXd dcond = net_backward(model, nc, cond, dlogits, *grad);
  cond_backward(model, cc, dcond, *grad);
  return loss;
}

std::vector<int> wavenet_generate_codes(const WaveNetModel& model, const FeatureSequence& features,
                                        const GenerateOptions& opts) {
  if (!opts.argmax && !(opts.temperature > 0)) throw config_error("sampling temperature must be positive");
  const auto& cfg = model.config();
  const auto& p = model.params();
  const Eigen::MatrixXd cond = cond_forward(model, features, nullptr);
  const Eigen::Index n = cond.cols();
  const int r = cfg.residual;

  // Layer l needs its input from `dilation` steps back; a ring of that
  // length holds exactly the pending values.
  std::vector<Eigen::MatrixXd> rings;
  for (const auto& layer : model.layers()) rings.push_back(Eigen::MatrixXd::Zero(r, layer.dilation));

  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const auto embed = nn::view(p, model.embedding());
  std::vector<int> codes(static_cast<std::size_t>(n));
  int prev = kMuLawClasses / 2;
  Eigen::VectorXd x(r), a(2 * r), z(r), skip(cfg.skip), logits(kMuLawClasses);
  for (Eigen::Index t = 0; t < n; ++t) {
    x = embed.col(prev);
    skip.setZero();
    for (std::size_t li = 0; li < model.layers().size(); ++li) {
      const auto& layer = model.layers()[li];
      const Eigen::Index slot = t % layer.dilation;
      a.noalias() = nn::view(p, layer.w_past) * rings[li].col(slot);
      rings[li].col(slot) = x;
      a.noalias() += nn::view(p, layer.w_now) * x;
      a.noalias() += nn::view(p, layer.cond) * cond.col(t);
      a += nn::view(p, layer.bias).col(0);
      for (int k = 0; k < r; ++k) z(k) = std::tanh(a(k)) * nn::sigmoid(a(r + k));
      skip.noalias() += nn::view(p, layer.skip_w) * z;
      skip += nn::view(p, layer.skip_b).col(0);
      if (layer.has_residual) {
        x.noalias() += nn::view(p, layer.res_w) * z;
        x += nn::view(p, layer.res_b).col(0);
      }
    }
    Eigen::VectorXd h1 = nn::view(p, model.out1_w()) * skip.cwiseMax(0.0);
    h1 += nn::view(p, model.out1_b()).col(0);
    logits.noalias() = nn::view(p, model.out2_w()) * h1.cwiseMax(0.0);
    logits += nn::view(p, model.out2_b()).col(0);

    int code = 0;
    if (opts.argmax) {
      logits.maxCoeff(&code);
    } else {
      const Eigen::VectorXd scaled = logits / opts.temperature;
      const Eigen::VectorXd w = (scaled.array() - scaled.maxCoeff()).exp();
      double u = uniform(rng) * w.sum();
      code = kMuLawClasses - 1;
      for (int k = 0; k < kMuLawClasses; ++k) {
        u -= w(k);
        if (u < 0) {
          code = k;
          break;
        }
      }
    }
    codes[static_cast<std::size_t>(t)] = code;
    prev = code;
  }
  return codes;
}

Eigen::VectorXd wavenet_generate(const WaveNetModel& model, const FeatureSequence& features,
                                 const GenerateOptions& opts) {
  return mulaw_decode(wavenet_generate_codes(model, features, opts));
}

std::vector<double> train_wavenet(WaveNetModel& model, const std::vector<AudioClip>& clips,
                                  const WaveNetTrainConfig& cfg) {
  if (clips.empty()) throw data_error("no clips to train the vocoder on");
  if (cfg.steps < 1) throw config_error("vocoder training needs at least one step");
  const int stride = model.config().upsample_stride;
  for (const auto& c : clips)
    if (c.audio.size() < static_cast<Eigen::Index>(stride) * c.features.frames())
      throw data_error("clip " + c.id + " has fewer samples than its features cover");

  nn::Adam adam(model.params().size(), {cfg.learning_rate, 0.9, 0.999, 1e-8});
  std::mt19937_64 rng(cfg.seed);
  std::vector<double> losses;
  Eigen::VectorXd grad(model.params().size());
  for (int step = 0; step < cfg.steps; ++step) {
    const auto& clip = clips[rng() % clips.size()];
    Eigen::Index first = 0, frames = clip.features.frames();
    if (cfg.segment_frames > 0 && frames > cfg.segment_frames) {
      first = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(frames - cfg.segment_frames + 1));
      frames = cfg.segment_frames;
    }
    const FeatureSequence seg{clip.features.data.middleRows(first, frames), FeatureKind::mfcc, false};
    const std::vector<int> codes = mulaw_encode(clip.audio.segment(first * stride, frames * stride));
    grad.setZero();
    const double loss = wavenet_loss(model, seg, codes, &grad);
    if (!std::isfinite(loss) || !grad.allFinite())
      throw numeric_error("non-finite vocoder loss on clip " + clip.id);
    nn::clip_global_norm(grad, cfg.clip_norm);
    adam.step(model.params(), grad);
    losses.push_back(loss);
  }
  return losses;
}

Eigen::VectorXd griffin_lim_invert(const FeatureSequence& mfcc, const GriffinLimConfig& cfg) {
  if (mfcc.frames() < 1) throw data_error("no frames to invert");
  if (!mfcc.data.allFinite()) throw data_error("non-finite MFCC input");
  if (cfg.iterations < 0) throw config_error("Griffin-Lim iterations must be non-negative");
  const int n_coeffs = static_cast<int>(mfcc.dim());
  if (n_coeffs > cfg.n_mels) throw config_error("more cepstral coefficients than mel bands");

  const Eigen::MatrixXd dct = dsp::dct_matrix(cfg.n_mels, cfg.n_mels);
  const Eigen::MatrixXd fb = dsp::mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate, cfg.f_min, cfg.f_max);
  const Eigen::MatrixXd fb_pinv = fb.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(
      Eigen::MatrixXd::Identity(cfg.n_mels, cfg.n_mels));

  // Truncated cepstra are zero-extended before the inverse DCT.
  const Eigen::Index frames = mfcc.frames();
  Eigen::MatrixXd ceps = Eigen::MatrixXd::Zero(cfg.n_mels, frames);
  ceps.topRows(n_coeffs) = mfcc.data.transpose();
  const Eigen::MatrixXd mel_power = (dct.transpose() * ceps).array().exp();
  const Eigen::MatrixXd magnitude = (fb_pinv * mel_power).cwiseMax(0.0).cwiseSqrt().transpose();  // T x bins

  const dsp::StftConfig stft{cfg.win, cfg.hop, cfg.n_fft};
  const Eigen::Index span = (frames - 1) * cfg.hop + cfg.win;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  dsp::ComplexMatrix spec(frames, magnitude.cols());
  for (Eigen::Index i = 0; i < spec.rows(); ++i)
    for (Eigen::Index j = 0; j < spec.cols(); ++j) spec(i, j) = std::polar(magnitude(i, j), phase(rng));

  // Each iteration keeps the phase and fine structure of the consistent
  // spectrogram and rescales bins so its mel energies match the target.
  const Eigen::VectorXd coverage = fb.colwise().sum().transpose();
  for (int it = 0; it < cfg.iterations; ++it) {
    const dsp::ComplexMatrix rebuilt = dsp::stft(dsp::istft(spec, stft, span), stft);
    const Eigen::MatrixXd power = rebuilt.cwiseAbs2().transpose();  // bins x T
    const Eigen::MatrixXd ratio = mel_power.array() / (fb * power).array().max(1e-300);
    const Eigen::MatrixXd spread = fb.transpose() * ratio;
    for (Eigen::Index i = 0; i < spec.rows(); ++i)
      for (Eigen::Index j = 0; j < spec.cols(); ++j) {
        const double gain = coverage(j) > 0 ? spread(j, i) / coverage(j) : 1.0;
        spec(i, j) = rebuilt(i, j) * std::sqrt(gain);
      }
  }
  return dsp::istft(spec, stft, span).head(static_cast<Eigen::Index>(cfg.hop) * frames);
}

Checkpoint to_checkpoint(const WaveNetModel& model, const json& extra) {
  const auto& c = model.config();
  json header = extra.is_object() ? extra : json::object();
  header["kind"] = "wavenet";
  header["config"] = {{"layers", c.layers},
                      {"max_dilation", c.max_dilation},
                      {"residual", c.residual},
                      {"skip", c.skip},
                      {"output_hidden", c.output_hidden},
                      {"cond_channels", c.cond_channels},
                      {"cond_hidden", c.cond_hidden},
                      {"feature_dim", c.feature_dim},
                      {"upsample_window", c.upsample_window},
                      {"upsample_stride", c.upsample_stride}};
  header["feature_norm"] = model.feature_norm.dim() > 0 ? to_json(model.feature_norm) : json(nullptr);
  return {header, model.params()};
}

WaveNetModel wavenet_from_checkpoint(const Checkpoint& ckpt) {
  try {
    const json& c = ckpt.header.at("config");
    WaveNetConfig cfg{c.at("layers").get<int>(),        c.at("max_dilation").get<int>(),
                      c.at("residual").get<int>(),      c.at("skip").get<int>(),
                      c.at("output_hidden").get<int>(), c.at("cond_channels").get<int>(),
                      c.at("cond_hidden").get<int>(),   c.at("feature_dim").get<int>(),
                      c.at("upsample_window").get<int>(), c.at("upsample_stride").get<int>()};
    WaveNetModel m(cfg);
    if (ckpt.params.size() != m.params().size()) throw data_error("vocoder checkpoint parameter count mismatch");
    m.params() = ckpt.params;
    const json& norm = ckpt.header.at("feature_norm");
    if (!norm.is_null()) m.feature_norm = normalizer_from_json(norm);
    return m;
  } catch (const json::exception& e) {
    throw data_error(std::string("malformed vocoder checkpoint header: ") + e.what());
  }
}

}  // namespace emgvoice
