#include "emgvoice/transducer.hpp"

#include "emgvoice/error.hpp"
#include "emgvoice/json_eigen.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace emgvoice {

using nlohmann::json;

void TransducerConfig::validate() const {
  if (hidden < 1) throw config_error("transducer hidden size must be positive");
  if (layers < 1) throw config_error("transducer needs at least one recurrent layer");
  if (embed_dim < 0) throw config_error("embedding size must be non-negative");
  if (!(dropout >= 0 && dropout < 1)) throw config_error("dropout must lie in [0, 1)");
  if (output_dim < 1) throw config_error("output dimension must be positive");
}

std::string to_string(const SessionKey& key) { return key.session + "/" + to_string(key.mode); }

TransducerModel::TransducerModel(int emg_dim, std::vector<SessionKey> keys, TransducerConfig cfg)
    : cfg_(cfg), emg_dim_(emg_dim), keys_(std::move(keys)) {
  if (emg_dim <= 0) throw config_error("EMG feature dimension must be positive");
  cfg_.validate();
  for (std::size_t i = 0; i < keys_.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (keys_[i] == keys_[j]) throw config_error("duplicate session key " + to_string(keys_[i]));

  embed_ = layout_.add("embedding", cfg_.embed_dim, static_cast<Eigen::Index>(keys_.size()));
  int in = input_dim();
  for (int l = 0; l < cfg_.layers; ++l) {
    layers_.push_back(nn::add_bilstm(layout_, "lstm" + std::to_string(l), in, cfg_.hidden));
    in = 2 * cfg_.hidden;
  }
  out_w_ = layout_.add("output.w", cfg_.output_dim, in);
  out_b_ = layout_.add("output.b", cfg_.output_dim);
  params_ = Eigen::VectorXd::Zero(layout_.size());
}

TransducerModel TransducerModel::init(int emg_dim, std::vector<SessionKey> keys, std::uint64_t seed,
                                      TransducerConfig cfg) {
  TransducerModel m(emg_dim, std::move(keys), cfg);
  std::mt19937_64 rng(seed);
  nn::fill_normal(m.params_, m.embed_, 1.0, rng);
  for (const auto& l : m.layers_) nn::init_bilstm(m.params_, l, rng);
  const double k = 1.0 / std::sqrt(static_cast<double>(m.out_w_.cols));
  nn::fill_uniform(m.params_, m.out_w_, k, rng);
  nn::fill_uniform(m.params_, m.out_b_, k, rng);
  return m;
}

std::optional<int> TransducerModel::key_index(const SessionKey& key) const {
  const auto it = std::find(keys_.begin(), keys_.end(), key);
  if (it == keys_.end()) return std::nullopt;
  return static_cast<int>(it - keys_.begin());
}

Eigen::VectorXd TransducerModel::embedding(const SessionKey& key) const {
  const auto table = nn::view(params_, embed_);
  if (auto i = key_index(key)) return table.col(*i);
  if (auto i = key_index({key.session, Mode::silent})) return table.col(*i);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(cfg_.embed_dim);
  int count = 0;
  for (std::size_t i = 0; i < keys_.size(); ++i)
    if (keys_[i].mode == Mode::silent) {
      sum += table.col(static_cast<Eigen::Index>(i));
      ++count;
    }
  if (count == 0) throw data_error("no embedding for " + to_string(key) + " and no silent-mode fallback");
  return sum / count;
}

namespace {

struct Pass {
  Eigen::MatrixXd x0;
  std::vector<nn::BiLstmCache> caches;
  std::vector<Eigen::MatrixXd> masks;  // empty when dropout is off
  Eigen::MatrixXd top;                 // input to the output layer
  Eigen::MatrixXd y;                   // output_dim x T
};

Pass run(const TransducerModel& m, const FeatureSequence& emg, const Eigen::VectorXd& embedding, bool training,
         std::uint64_t seed, bool keep) {
  if (emg.frames() == 0) throw data_error("transducer input has zero frames");
  if (emg.dim() != m.emg_dim())
    throw data_error("transducer expects " + std::to_string(m.emg_dim()) + "-dim EMG features, got " +
                     std::to_string(emg.dim()));
  const auto& cfg = m.config();
  const Eigen::Index steps = emg.frames();
  Pass pass;
  pass.x0.resize(m.input_dim(), steps);
  pass.x0.topRows(m.emg_dim()) = emg.data.transpose();
  pass.x0.bottomRows(cfg.embed_dim) = embedding.replicate(1, steps);

  const bool drop = training && cfg.dropout > 0;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep_unit(1.0 - cfg.dropout);
  const double scale = 1.0 / (1.0 - cfg.dropout);

  Eigen::MatrixXd x = pass.x0;
  for (const auto& layer : m.layers()) {
    nn::BiLstmCache cache;
    x = nn::bilstm_forward(m.params(), layer, x, keep ? &cache : nullptr);
    if (drop) {
      Eigen::MatrixXd mask(x.rows(), x.cols());
      for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep_unit(rng) ? scale : 0.0;
      x = x.cwiseProduct(mask);
      if (keep) pass.masks.push_back(std::move(mask));
    }
    if (keep) pass.caches.push_back(std::move(cache));
  }
  pass.y = nn::view(m.params(), m.output_weight()) * x;
  pass.y.colwise() += nn::view(m.params(), m.output_bias()).col(0);
  if (keep) pass.top = std::move(x);
  return pass;
}

}  // namespace

FeatureSequence forward(const TransducerModel& model, const FeatureSequence& emg, const SessionKey& key,
                        bool training, std::uint64_t dropout_seed) {
  const Pass pass = run(model, emg, model.embedding(key), training, dropout_seed, false);
  return {pass.y.transpose(), FeatureKind::mfcc, true};
}

double sse_and_gradient(const TransducerModel& model, const FeatureSequence& emg, const Eigen::MatrixXd& target,
                        const SessionKey& key, bool training, std::uint64_t dropout_seed, double scale,
                        Eigen::VectorXd& grad) {
  const auto index = model.key_index(key);
  if (!index) throw data_error("training key " + to_string(key) + " has no embedding");
  if (target.rows() != emg.frames() || target.cols() != model.config().output_dim)
    throw data_error("target shape does not match the transducer output");
  if (grad.size() != model.params().size()) throw data_error("gradient size mismatch");

  const Eigen::VectorXd emb = nn::view(model.params(), model.embedding_block()).col(*index);
  const Pass pass = run(model, emg, emb, training, dropout_seed, true);
  const Eigen::MatrixXd residual = pass.y - target.transpose();
  const double sse = residual.squaredNorm();

  const Eigen::MatrixXd dy = (2.0 * scale) * residual;
  nn::view(grad, model.output_weight()) += (dy * pass.top.transpose()).eval();
  nn::view(grad, model.output_bias()) += dy.rowwise().sum();
  Eigen::MatrixXd dx = nn::view(model.params(), model.output_weight()).transpose() * dy;
  for (std::size_t l = model.layers().size(); l-- > 0;) {
    if (!pass.masks.empty()) dx = dx.cwiseProduct(pass.masks[l]);
    dx = nn::bilstm_backward(model.params(), model.layers()[l], pass.caches[l], dx, grad);
  }
  nn::view(grad, model.embedding_block()).col(*index) += dx.bottomRows(model.config().embed_dim).rowwise().sum();
  return sse;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw config_error("learning rate must be positive");
  if (!(decay > 0 && decay < 1)) throw config_error("decay factor must lie in (0, 1)");
  if (patience < 1) throw config_error("patience must be at least 1");
  if (epochs < 1) throw config_error("epochs must be at least 1");
  if (batch_size < 1) throw config_error("batch size must be at least 1");
  if (!(clip_norm > 0)) throw config_error("clip norm must be positive");
  for (double w : source_weights)
    if (!(w >= 0)) throw config_error("source weights must be non-negative");
}

TrainingState make_training_state(const TransducerModel& model, const TrainConfig& cfg) {
  TrainingState s;
  s.optimizer = nn::Adam(model.params().size(), {cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps});
  s.best_params = model.params();
  return s;
}

double training_step(TransducerModel& model, TrainingState& state, const std::vector<TrainExample>& batch,
                     const TrainConfig& cfg, std::uint64_t dropout_seed) {
  if (batch.empty()) throw data_error("empty training batch");
  Eigen::Index frames = 0;
  for (const auto& ex : batch) {
    if (ex.target.rows() != ex.emg.frames())
      throw data_error("target frames differ from input frames for " + ex.id);
    frames += ex.emg.frames();
  }
  const double scale = 1.0 / (static_cast<double>(frames) * model.config().output_dim);

  const Eigen::Index n_params = model.params().size();
  std::vector<Eigen::VectorXd> grads(batch.size());
  std::vector<double> sse(batch.size());
  nn::parallel_for(batch.size(), cfg.workers, [&](std::size_t i) {
    grads[i] = Eigen::VectorXd::Zero(n_params);
    sse[i] = sse_and_gradient(model, batch[i].emg, batch[i].target, batch[i].key, true,
                              nn::mix_seed(dropout_seed, i), scale, grads[i]);
  });

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(n_params);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!std::isfinite(sse[i]) || !grads[i].allFinite())
      throw numeric_error("non-finite loss or gradient for utterance " + batch[i].id);
    grad += grads[i];
    total += sse[i];
  }
  nn::clip_global_norm(grad, cfg.clip_norm);
  state.optimizer.step(model.params(), grad);
  return total * scale;
}

bool is_realignment_epoch(int epoch, const AlignConfig& align) {
  const int first = align.warmup_epochs + 1;
  return epoch >= first && (epoch - first) % align.realign_period == 0;
}

std::array<int, 3> source_draws(const std::array<int, 3>& available, const std::array<double, 3>& weights) {
  std::array<int, 3> out{};
  for (std::size_t k = 0; k < 3; ++k)
    out[k] = available[k] == 0 ? 0 : static_cast<int>(std::floor(weights[k] * available[k] + 0.5));
  return out;
}

json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch},
          {"train_loss", e.train_loss},
          {"val_loss", e.val_loss},
          {"rate", e.rate},
          {"realigned", e.realigned},
          {"source_counts", e.source_counts},
          {"skipped", e.skipped}};
}

namespace {

Eigen::MatrixXd matched_target(const FeatureSequence& emg, const FeatureSequence& audio) {
  const Eigen::Index n = std::min(emg.frames(), audio.frames());
  return audio.data.topRows(n);
}

template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

double mean_sq_error(const TransducerModel& model, const std::vector<TrainExample>& examples, int workers) {
  std::vector<double> sse(examples.size());
  std::vector<Eigen::Index> frames(examples.size());
  nn::parallel_for(examples.size(), workers, [&](std::size_t i) {
    const auto y = forward(model, examples[i].emg, examples[i].key);
    sse[i] = (y.data - examples[i].target).squaredNorm();
    frames[i] = y.frames();
  });
  double total = 0.0;
  Eigen::Index n = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    total += sse[i];
    n += frames[i];
  }
  return total / (static_cast<double>(n) * model.config().output_dim);
}

}  // namespace

TrainResult train_transducer(TransducerModel model, const TrainingData& data, const TrainConfig& cfg,
                             const AlignConfig& align, const TrainHooks& hooks) {
  cfg.validate();
  align.validate();
  if (data.train_pairs.empty() && data.nonparallel.empty()) throw data_error("empty training set");
  auto warn = [&](const std::string& msg) {
    if (hooks.warn) hooks.warn(msg);
  };

  TrainingState state = make_training_state(model, cfg);
  nn::PlateauSchedule schedule(cfg.learning_rate, cfg.decay, cfg.patience);
  TrainResult result;

  std::vector<const ParallelExample*> pairs;
  for (const auto& p : data.train_pairs) pairs.push_back(&p);
  for (const auto& p : data.val_pairs) pairs.push_back(&p);

  auto realign = [&](CostType cost) {
    std::vector<std::optional<AlignmentPath>> paths(pairs.size());
    std::vector<std::string> errors(pairs.size());
    nn::parallel_for(pairs.size(), cfg.workers, [&](std::size_t i) {
      const auto& p = *pairs[i];
      try {
        CostMatrix c;
        if (cost == CostType::cca) {
          c = cca_cost(p.silent_emg, p.vocalized_emg, data.cca);
        } else {
          const auto predicted = forward(model, p.silent_emg, p.silent_key);
          c = full_cost(p.silent_emg, p.vocalized_emg, predicted, p.vocalized_audio, data.cca, align.lambda);
        }
        paths[i] = dtw(c);
      } catch (const Error& e) {
        errors[i] = e.what();
      }
    });
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (paths[i]) {
        state.alignments[pairs[i]->silent_id] = std::move(*paths[i]);
      } else {
        warn("alignment failed for " + pairs[i]->silent_id + ": " + errors[i]);
        if (cost == CostType::cca) state.alignments.erase(pairs[i]->silent_id);
      }
    }
    AlignmentSnapshot snap{state.epoch, cost, state.alignments};
    result.alignments.push_back(std::move(snap));
  };

  state.epoch = 1;
  realign(CostType::cca);
  const auto initial_alignments = state.alignments;

  auto silent_example = [&](const ParallelExample& p,
                            const std::map<std::string, AlignmentPath>& cache) -> std::optional<TrainExample> {
    const auto it = cache.find(p.silent_id);
    if (it == cache.end()) return std::nullopt;
    return TrainExample{p.silent_id, p.silent_emg, transfer_targets(p.vocalized_audio, it->second.mapping).data,
                        p.silent_key};
  };

  std::vector<TrainExample> vocalized_parallel, vocalized_other;
  for (const auto& p : data.train_pairs) {
    Eigen::MatrixXd target = matched_target(p.vocalized_emg, p.vocalized_audio);
    FeatureSequence emg{p.vocalized_emg.data.topRows(target.rows()), FeatureKind::emg, true};
    vocalized_parallel.push_back({p.vocalized_id, std::move(emg), std::move(target), p.vocalized_key});
  }
  for (const auto& v : data.nonparallel) {
    Eigen::MatrixXd target = matched_target(v.emg, v.audio);
    FeatureSequence emg{v.emg.data.topRows(target.rows()), FeatureKind::emg, true};
    vocalized_other.push_back({v.id, std::move(emg), std::move(target), v.key});
  }

  std::mt19937_64 rng(cfg.seed);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    state.epoch = epoch;
    EpochLog log;
    log.epoch = epoch;
    log.rate = schedule.rate();
    state.optimizer.set_rate(schedule.rate());
    if (is_realignment_epoch(epoch, align)) {
      realign(CostType::full);
      log.realigned = true;
    }

    std::vector<TrainExample> silent;
    for (const auto& p : data.train_pairs) {
      if (auto ex = silent_example(p, state.alignments)) silent.push_back(std::move(*ex));
      else ++log.skipped;
    }
    const std::array<const std::vector<TrainExample>*, 3> sources{&silent, &vocalized_parallel, &vocalized_other};
    const std::array<int, 3> available{static_cast<int>(silent.size()), static_cast<int>(vocalized_parallel.size()),
                                       static_cast<int>(vocalized_other.size())};
    log.source_counts = source_draws(available, cfg.source_weights);

    std::vector<const TrainExample*> order;
    for (std::size_t k = 0; k < 3; ++k) {
      std::vector<std::size_t> idx(sources[k]->size());
      std::iota(idx.begin(), idx.end(), 0);
      shuffle(idx, rng);
      for (int d = 0; d < log.source_counts[k]; ++d) order.push_back(&(*sources[k])[idx[d % idx.size()]]);
    }
    shuffle(order, rng);
    if (order.empty()) throw data_error("no training examples could be drawn in epoch " + std::to_string(epoch));

    double weighted = 0.0;
    Eigen::Index frames = 0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += cfg.batch_size, ++b) {
      std::vector<TrainExample> batch;
      Eigen::Index batch_frames = 0;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        batch.push_back(*order[i]);
        batch_frames += order[i]->emg.frames();
      }
      const double loss = training_step(model, state, batch, cfg,
                                        nn::mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch) * 1000003 + b));
      weighted += loss * static_cast<double>(batch_frames);
      frames += batch_frames;
    }
    log.train_loss = weighted / static_cast<double>(frames);

    std::vector<TrainExample> val;
    const auto& val_cache = cfg.validate_on_current_targets ? state.alignments : initial_alignments;
    for (const auto& p : data.val_pairs)
      if (auto ex = silent_example(p, val_cache)) val.push_back(std::move(*ex));
    if (val.empty()) {
      if (epoch == 1) warn("no validation utterances; the schedule follows the training loss");
      log.val_loss = log.train_loss;
    } else {
      log.val_loss = mean_sq_error(model, val, cfg.workers);
    }
    if (hooks.validation_override) log.val_loss = hooks.validation_override(epoch, log.val_loss);
    if (!std::isfinite(log.val_loss)) throw numeric_error("validation loss is not finite at epoch " + std::to_string(epoch));

    if (log.val_loss < state.best_val) {
      state.best_val = log.val_loss;
      state.best_epoch = epoch;
      state.best_params = model.params();
    }
    schedule.observe(log.val_loss);
    result.log.push_back(log);
    if (hooks.on_epoch) hooks.on_epoch(log);
  }

  model.params() = state.best_params;
  result.model = std::move(model);
  result.best_epoch = state.best_epoch;
  result.best_val = state.best_val;
  return result;
}

FeatureSequence predict_features(const TransducerModel& model, const Utterance& utterance, const FilterSpec& filter) {
  if (utterance.mode != Mode::silent)
    throw data_error("predict_features expects a silent utterance; " + utterance.id + " is " +
                     to_string(utterance.mode));
  if (model.input_norm.dim() != model.emg_dim() || model.target_norm.dim() != model.config().output_dim)
    throw config_error("transducer normalizers are not fitted");
  const Eigen::MatrixXd emg = preprocess_emg(utterance.emg, filter);
  const FeatureSequence features = model.input_norm.apply(emg_features(emg));
  const FeatureSequence predicted = forward(model, features, {utterance.session_id, Mode::silent});
  FeatureSequence out = model.target_norm.invert(predicted);
  out.kind = FeatureKind::mfcc;
  return out;
}

Checkpoint to_checkpoint(const TransducerModel& model, const json& extra) {
  json keys = json::array();
  for (const auto& k : model.keys()) keys.push_back({{"session", k.session}, {"mode", to_string(k.mode)}});
  const auto& c = model.config();
  json header = extra.is_object() ? extra : json::object();
  header["kind"] = "transducer";
  header["config"] = {{"hidden", c.hidden},
                      {"layers", c.layers},
                      {"embed_dim", c.embed_dim},
                      {"dropout", c.dropout},
                      {"output_dim", c.output_dim}};
  header["emg_dim"] = model.emg_dim();
  header["keys"] = keys;
  header["input_norm"] = to_json(model.input_norm);
  header["target_norm"] = to_json(model.target_norm);
  return {header, model.params()};
}

TransducerModel transducer_from_checkpoint(const Checkpoint& ckpt) {
  const json& h = ckpt.header;
  try {
    const json& c = h.at("config");
    TransducerConfig cfg{c.at("hidden").get<int>(), c.at("layers").get<int>(), c.at("embed_dim").get<int>(),
                         c.at("dropout").get<double>(), c.at("output_dim").get<int>()};
    std::vector<SessionKey> keys;
    for (const auto& k : h.at("keys")) keys.push_back({k.at("session").get<std::string>(), parse_mode(k.at("mode"))});
    TransducerModel m(h.at("emg_dim").get<int>(), std::move(keys), cfg);
    if (ckpt.params.size() != m.params().size())
      throw data_error("checkpoint has " + std::to_string(ckpt.params.size()) + " parameters, layout needs " +
                       std::to_string(m.params().size()));
    m.params() = ckpt.params;
    m.input_norm = normalizer_from_json(h.at("input_norm"));
    m.target_norm = normalizer_from_json(h.at("target_norm"));
    return m;
  } catch (const json::exception& e) {
    throw data_error(std::string("malformed transducer checkpoint header: ") + e.what());
  }
}

}  // namespace emgvoice
