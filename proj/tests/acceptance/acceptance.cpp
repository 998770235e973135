// Acceptance checks; one PASS/FAIL line per criterion. Exit status is the
// number of failures.

#include "emgvoice/align.hpp"
#include "emgvoice/dsp.hpp"
#include "emgvoice/error.hpp"
#include "emgvoice/eval.hpp"
#include "emgvoice/features.hpp"
#include "emgvoice/pipeline.hpp"
#include "emgvoice/signals.hpp"
#include "emgvoice/synthetic.hpp"
#include "emgvoice/transducer.hpp"
#include "emgvoice/vocoder.hpp"
#include "oracles.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#ifndef EMGVOICE_CLI_PATH
#define EMGVOICE_CLI_PATH "emgvoice"
#endif

using namespace emgvoice;
using std::numbers::pi;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Eigen::MatrixXd gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("emgvoice_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// 1 ---------------------------------------------------------------------------
void dtw_oracle(Outcome& out) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(1, 8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int exact = 0, valid = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = size(rng), m = size(rng);
    CostMatrix c(n, m);
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = u(rng);
    const auto a = dtw(c);
    exact += a.total_cost == oracle::exhaustive_dtw(c);

    bool ok = !a.path.empty() && a.path.front() == std::pair<int, int>{0, 0} &&
              a.path.back() == std::pair<int, int>{n - 1, m - 1} && a.mapping.size() == static_cast<std::size_t>(n);
    for (std::size_t k = 1; ok && k < a.path.size(); ++k) {
      const int di = a.path[k].first - a.path[k - 1].first, dj = a.path[k].second - a.path[k - 1].second;
      ok = (di == 1 && dj == 0) || (di == 0 && dj == 1) || (di == 1 && dj == 1);
    }
    // Each silent frame maps to the first vocalized frame paired with it.
    std::vector<int> first(static_cast<std::size_t>(n), -1);
    for (const auto& [i, j] : a.path)
      if (first[static_cast<std::size_t>(i)] < 0) first[static_cast<std::size_t>(i)] = j;
    ok = ok && first == a.mapping && oracle::path_cost(c, a.path) == a.total_cost;
    valid += ok;
  }
  const double secs = seconds_since(t0);
  out.detail << exact << "/200 exact, " << valid << "/200 valid paths, " << std::fixed << std::setprecision(2) << secs
             << " s";
  out.require(exact == 200, "DP cost equals enumeration");
  out.require(valid == 200, "path rules");
  out.require(secs < 10.0, "runtime < 10 s");
}

// 2 ---------------------------------------------------------------------------
void cca_oracle(Outcome& out) {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> dim(1, 8);
  double worst = 0;
  for (int p = 0; p < 20; ++p) {
    const int ds = dim(rng), dv = dim(rng), shared = std::min(ds, dv);
    const Eigen::MatrixXd z = gaussian(2000, shared, rng);
    const Eigen::MatrixXd x = z * gaussian(shared, ds, rng) + 0.8 * gaussian(2000, ds, rng);
    const Eigen::MatrixXd y = z * gaussian(shared, dv, rng) + 0.8 * gaussian(2000, dv, rng);
    const auto proj = fit_cca(x, y, std::min(ds, dv));
    const Eigen::VectorXd expected = oracle::cca_correlations_whitened(x, y).head(proj.dims());
    worst = std::max(worst, (proj.correlations - expected).cwiseAbs().maxCoeff());
  }
  const Eigen::MatrixXd x = gaussian(2000, 4, rng);
  const Eigen::MatrixXd a = gaussian(4, 4, rng) + 3.0 * Eigen::MatrixXd::Identity(4, 4);
  const Eigen::MatrixXd y = (x * a).rowwise() + Eigen::RowVectorXd::Constant(4, 2.5);
  const auto perfect = fit_cca(x, y, 4);
  const double off = (perfect.correlations.array() - 1.0).abs().maxCoeff();
  out.detail << "max |corr - oracle| = " << std::scientific << std::setprecision(2) << worst
             << " over 20 problems, perfect-relation deviation " << off;
  out.require(worst <= 1e-6, "oracle agreement within 1e-6");
  out.require(off <= 1e-9, "perfect relation within 1e-9");
}

// 3 ---------------------------------------------------------------------------
// Relative error of a block: |a - n| / max(|a|, |n|, 1e-4).
double block_error(const Eigen::VectorXd& a, const Eigen::VectorXd& n) {
  return (a - n).norm() / std::max({a.norm(), n.norm(), 1e-4});
}

void gradients(Outcome& out) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(31);

  const std::vector<SessionKey> keys{{"s1", Mode::silent}, {"s1", Mode::vocalized}};
  auto tm = TransducerModel::init(12, keys, 5, {8, 2, 4, 0.5, kMfccDim});
  const FeatureSequence x{gaussian(7, 12, rng), FeatureKind::emg, true};
  const Eigen::MatrixXd target = gaussian(7, kMfccDim, rng);
  double worst_t = 0;
  for (bool training : {false, true}) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(tm.params().size());
    sse_and_gradient(tm, x, target, keys[0], training, 3, 1.0, grad);
    const Eigen::VectorXd num = oracle::finite_difference(
        [&](const Eigen::VectorXd& p) {
          TransducerModel probe = tm;
          probe.params() = p;
          Eigen::VectorXd unused = Eigen::VectorXd::Zero(p.size());
          return sse_and_gradient(probe, x, target, keys[0], training, 3, 1.0, unused);
        },
        tm.params());
    for (const auto& b : tm.layout().blocks())
      worst_t = std::max(worst_t, block_error(grad.segment(b.offset, b.size()), num.segment(b.offset, b.size())));
  }

  // Blocks larger than the cap are checked on a random subset of entries.
  const WaveNetConfig tiny{8, 128, 8, 8, 8, 8, 8, kMfccDim, 432, 160};
  auto wm = WaveNetModel::init(tiny, 6);
  const FeatureSequence feats{gaussian(2, kMfccDim, rng), FeatureKind::mfcc, false};
  wm.feature_norm = Normalizer::fit({feats});
  std::vector<int> codes(320);
  for (auto& c : codes) c = static_cast<int>(rng() % kMuLawClasses);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(wm.params().size());
  wavenet_loss(wm, feats, codes, &grad);
  const double h = 1e-5;
  const Eigen::Index cap = 200;
  double worst_w = 0;
  Eigen::Index probed = 0;
  for (const auto& b : wm.layout().blocks()) {
    std::vector<Eigen::Index> idx;
    if (b.size() <= cap) {
      for (Eigen::Index i = 0; i < b.size(); ++i) idx.push_back(b.offset + i);
    } else {
      for (Eigen::Index k = 0; k < cap; ++k)
        idx.push_back(b.offset + static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(b.size())));
    }
    Eigen::VectorXd a(static_cast<Eigen::Index>(idx.size())), n(a.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      WaveNetModel probe = wm;
      probe.params()(idx[k]) += h;
      const double fp = wavenet_loss(probe, feats, codes);
      probe.params()(idx[k]) -= 2 * h;
      const double fm = wavenet_loss(probe, feats, codes);
      a(static_cast<Eigen::Index>(k)) = grad(idx[k]);
      n(static_cast<Eigen::Index>(k)) = (fp - fm) / (2 * h);
    }
    probed += a.size();
    worst_w = std::max(worst_w, block_error(a, n));
  }
  const double secs = seconds_since(t0);
  out.detail << "transducer " << std::scientific << std::setprecision(2) << worst_t << " (" << tm.params().size()
             << " params), wavenet " << worst_w << " (" << probed << "/" << wm.params().size() << " params), "
             << std::fixed << secs << " s";
  out.require(worst_t < 1e-4, "transducer gradients");
  out.require(worst_w < 1e-4, "wavenet gradients");
  out.require(secs < 120.0, "runtime < 2 min");
}

// 4 ---------------------------------------------------------------------------
Eigen::VectorXd sine(double freq, Eigen::Index n, double phase = 0.0) {
  Eigen::VectorXd x(n);
  for (Eigen::Index i = 0; i < n; ++i) x(i) = std::sin(2 * pi * freq * static_cast<double>(i) / 1000.0 + phase);
  return x;
}

double rms(const Eigen::VectorXd& x) { return std::sqrt(x.squaredNorm() / static_cast<double>(x.size())); }

void dsp_contracts(Outcome& out) {
  const Eigen::MatrixXd dc = Eigen::MatrixXd::Constant(3000, 1, 0.7);
  const double dc_rel = preprocess_emg(dc).middleRows(200, 2600).cwiseAbs().maxCoeff() / 0.7;

  const Eigen::VectorXd mains = sine(60.0, 4000);
  const Eigen::VectorXd mains_out = preprocess_emg(Eigen::MatrixXd(mains)).col(0);
  const double mains_db = 20 * std::log10(rms(mains_out.segment(1000, 2000)) / rms(mains.segment(1000, 2000)));

  const Eigen::VectorXd tone = sine(35.0, 4000, 0.3);
  const Eigen::VectorXd tone_out = preprocess_emg(Eigen::MatrixXd(tone)).col(0);
  const double tone_db = 20 * std::log10(rms(tone_out.segment(1000, 2000)) / rms(tone.segment(1000, 2000)));
  int best_lag = 0;
  double best = -1e300;
  for (int lag = -20; lag <= 20; ++lag) {
    double acc = 0;
    for (Eigen::Index i = 20; i < tone.size() - 20; ++i) acc += tone(i) * tone_out(i + lag);
    if (acc > best) {
      best = acc;
      best_lag = lag;
    }
  }

  std::mt19937_64 rng(4);
  const auto emg = emg_features(gaussian(1000, kNumElectrodes, rng));
  const auto mfcc = mfcc_features(gaussian(16000, 1, rng).col(0));
  out.detail << "DC " << std::scientific << std::setprecision(1) << dc_rel << ", 60 Hz " << std::fixed
             << std::setprecision(1) << mains_db << " dB, 35 Hz " << std::setprecision(3) << tone_db << " dB lag "
             << best_lag << ", dim " << emg.dim() << ", frames " << emg.frames() << "/" << mfcc.frames();
  out.require(dc_rel < 1e-6, "DC attenuation");
  out.require(mains_db <= -30.0, "60 Hz >= 30 dB down");
  out.require(std::abs(tone_db) <= 1.0 && best_lag == 0, "35 Hz passband and zero phase");
  out.require(emg.dim() == 112, "112 EMG features");
  out.require(emg.frames() == 98 && mfcc.frames() == 98, "98 frames per second on both streams");
}

// 5 ---------------------------------------------------------------------------
void target_transfer(Outcome& out) {
  const auto t0 = Clock::now();
  const fs::path root = scratch("transfer");
  SyntheticConfig sc;
  sc.pairs = 30;
  sc.seed = 7;
  sc.min_seconds = 3.0;
  sc.max_seconds = 5.0;
  const auto warps = make_synthetic_corpus(root / "corpus", sc);

  PipelineConfig cfg;
  cfg.corpus = (root / "corpus").string();
  cfg.work = (root / "work").string();
  cfg.seed = 7;
  cfg.split.n_val = 4;
  cfg.split.n_test = 2;
  cfg.transducer.hidden = 64;
  cfg.transducer.dropout = 0.3;
  cfg.train.epochs = 15;
  cfg.train.batch_size = 4;
  cfg.train.learning_rate = 3e-3;
  cfg.workers = 1;
  Workspace ws(cfg);
  ws.preprocess();
  ws.featurize();
  ws.align();
  const auto split = ws.split_manifest();
  const auto feats = ws.features();
  const auto art = compute_alignments(split, feats, cfg);
  const auto data = make_training_data(split, feats, art);
  auto model = TransducerModel::init(static_cast<int>(art.emg_norm.dim()), training_keys(split), cfg.seed, cfg.transducer);
  model.input_norm = art.emg_norm;
  model.target_norm = art.audio_norm;
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  tc.workers = 1;
  const auto result = train_transducer(std::move(model), data, tc, cfg.align);

  // Ground truth clamped to the vocalized frames that survive length matching.
  auto truth = [&](const std::string& id) {
    std::vector<int> gt = warps.at(id).mapping;
    const int nv = static_cast<int>(feats.at(warps.at(id).vocalized_id).emg.frames());
    for (auto& j : gt) j = std::min(j, nv - 1);
    return gt;
  };
  const AlignmentSnapshot* initial = nullptr;
  const AlignmentSnapshot* switched = nullptr;
  std::vector<int> snap_epochs;
  for (const auto& s : result.alignments) {
    if (s.epoch == 1 && s.cost == CostType::cca) initial = &s;
    if (s.epoch == 5 && s.cost == CostType::full) switched = &s;
    if (s.cost == CostType::full) snap_epochs.push_back(s.epoch);
  }
  std::vector<int> realigned;
  for (const auto& e : result.log)
    if (e.realigned) realigned.push_back(e.epoch);

  out.require(initial && switched, "alignment snapshots at epochs 1 and 5");
  if (!initial || !switched) return;
  std::vector<double> before, after;
  int decreased = 0;
  for (const auto& [id, path] : initial->paths) {
    const auto gt = truth(id);
    before.push_back(mean_frame_error(path.mapping, gt));
    after.push_back(mean_frame_error(switched->paths.at(id).mapping, gt));
    decreased += after.back() < before.back();
  }
  const double share = static_cast<double>(decreased) / static_cast<double>(before.size());
  const double first_val = result.log.front().val_loss;
  const double ratio = result.best_val / first_val;
  const double secs = seconds_since(t0);

  out.detail << std::fixed << std::setprecision(3) << "median frame error cca " << median(before) << ", full@5 "
             << median(after) << ", decreased " << decreased << "/" << before.size() << "; val best/epoch1 " << ratio
             << " (epoch " << result.best_epoch << "); realigned at";
  for (int e : realigned) out.detail << " " << e;
  out.detail << "; " << std::setprecision(0) << secs << " s";
  out.require(median(before) <= 3.0, "(a) cca median <= 3");
  out.require(median(after) <= median(before), "(b) median does not increase");
  out.require(share >= 0.6, "(b) decreases in >= 60%");
  out.require(ratio <= 0.5, "(c) best val <= 50% of epoch 1");
  out.require(realigned == std::vector<int>{5, 10, 15} && snap_epochs == realigned, "(d) realignment at 5, 10, 15");
  out.require(secs < 900.0, "runtime < 15 min");
}

// 6 ---------------------------------------------------------------------------
void schedule(Outcome& out) {
  std::mt19937_64 rng(12);
  const std::vector<SessionKey> keys{{"s1", Mode::silent}, {"s1", Mode::vocalized}};
  TrainingData data;
  for (int k = 0; k < 4; ++k) {
    ParallelExample p;
    p.silent_id = "s" + std::to_string(k);
    p.vocalized_id = "v" + std::to_string(k);
    p.silent_emg = {gaussian(10, 4, rng), FeatureKind::emg, true};
    p.vocalized_emg = {gaussian(9, 4, rng), FeatureKind::emg, true};
    p.vocalized_audio = {gaussian(9, kMfccDim, rng), FeatureKind::mfcc, true};
    p.silent_key = keys[0];
    p.vocalized_key = keys[1];
    (k < 3 ? data.train_pairs : data.val_pairs).push_back(std::move(p));
  }
  Eigen::MatrixXd xs = gaussian(200, 4, rng);
  data.cca = fit_cca(xs, xs + 0.5 * gaussian(200, 4, rng), 2);
  TrainConfig tc;
  tc.epochs = 14;
  tc.batch_size = 2;
  TrainHooks hooks;
  hooks.validation_override = [](int, double) { return 1.0; };  // flat from the first epoch
  const auto result = train_transducer(TransducerModel::init(4, keys, 1, {4, 1, 2, 0.0, kMfccDim}), data, tc, {}, hooks);

  std::vector<double> expected;
  for (int e = 1; e <= 14; ++e) expected.push_back(e <= 6 ? 0.001 : e <= 11 ? 0.0005 : 0.00025);
  std::vector<double> got;
  for (const auto& e : result.log) got.push_back(e.rate);
  int first_half = 0, first_quarter = 0;
  for (const auto& e : result.log) {
    if (!first_half && e.rate == 0.0005) first_half = e.epoch;
    if (!first_quarter && e.rate == 0.00025) first_quarter = e.epoch;
  }
  out.detail << "0.001 -> 0.0005 at epoch " << first_half << ", -> 0.00025 at epoch " << first_quarter;
  out.require(got == expected, "rates per epoch");
}

// 7 ---------------------------------------------------------------------------
void vocoder_contracts(Outcome& out) {
  const auto t0 = Clock::now();
  double worst = 0;
  for (int i = 0; i <= 20000; ++i) {
    const double y = -1.0 + i / 10000.0;
    const Eigen::VectorXd v = Eigen::VectorXd::Constant(1, y);
    worst = std::max(worst, std::abs(mulaw_decode(mulaw_encode(v))(0) - y));
  }

  std::mt19937_64 rng(4);
  const WaveNetConfig probe_cfg{16, 128, 4, 32, 32, 4, 4, kMfccDim, 432, 160};
  const auto probe = WaveNetModel::init(probe_cfg, 11);
  const FeatureSequence f7{gaussian(7, kMfccDim, rng), FeatureKind::mfcc, false};
  const Eigen::MatrixXd cond = condition_upsample(probe, f7);
  std::vector<int> codes(static_cast<std::size_t>(cond.cols()));
  for (auto& c : codes) c = static_cast<int>(rng() % kMuLawClasses);
  const Eigen::MatrixXd base = wavenet_teacher_logits(probe, codes, cond);
  const Eigen::Index t = 100;
  codes[t] = (codes[t] + 97) % kMuLawClasses;
  const Eigen::MatrixXd moved = wavenet_teacher_logits(probe, codes, cond);
  Eigen::Index first = -1, last = -1;
  for (Eigen::Index s = 0; s < base.cols(); ++s)
    if ((moved.col(s) - base.col(s)).cwiseAbs().maxCoeff() > 0) {
      if (first < 0) first = s;
      last = s;
    }
  const bool rf_ok = probe_cfg.receptive_field() == 511 && first == t + 1 && last == t + 511;

  const int frames = 50;
  Eigen::VectorXd audio(160 * frames);
  for (Eigen::Index i = 0; i < audio.size(); ++i) audio(i) = 0.5 * std::sin(2 * pi * 200.0 * static_cast<double>(i) / 16000.0);
  AudioClip clip{"tone", mfcc_features(audio), audio};
  clip.audio.conservativeResize(160 * clip.features.frames());
  auto m = WaveNetModel::init(WaveNetConfig::desk(), 1);
  m.feature_norm = Normalizer::fit({clip.features});
  WaveNetTrainConfig tc;
  tc.steps = 500;
  tc.learning_rate = 3e-3;
  const auto losses = train_wavenet(m, {clip}, tc);
  const double final_loss = wavenet_loss(m, clip.features, mulaw_encode(clip.audio));
  const double reduction = 1.0 - final_loss / losses.front();
  const auto generated = wavenet_generate(m, clip.features, {});
  const bool length_ok = generated.size() == 160 * clip.features.frames();

  Eigen::VectorXd tone(16000);
  for (Eigen::Index i = 0; i < tone.size(); ++i) tone(i) = 0.5 * std::sin(2 * pi * 1000.0 * static_cast<double>(i) / 16000.0);
  const Eigen::VectorXd inverted = griffin_lim_invert(mfcc_features(tone));
  const Eigen::VectorXd mean_mag = dsp::stft(inverted, {432, 160, 512}).cwiseAbs().colwise().mean().transpose();
  Eigen::Index bin = 0;
  mean_mag.maxCoeff(&bin);
  const Eigen::Index expected_bin = 32;  // 1000 Hz * 512 / 16000

  out.detail << std::fixed << std::setprecision(4) << "mu-law max error " << worst << ", receptive field " << first - t
             << ".." << last - t << ", overfit CE " << std::setprecision(3) << losses.front() << " -> " << final_loss
             << " (" << std::setprecision(1) << 100 * reduction << "% down), length " << generated.size() << "/"
             << 160 * clip.features.frames() << ", griffin-lim peak bin " << bin << " (expected " << expected_bin
             << "), " << std::setprecision(0) << seconds_since(t0) << " s";
  out.require(worst <= 0.025, "mu-law round trip");
  out.require(rf_ok, "causality and 511-sample receptive field");
  out.require(reduction >= 0.8, "overfit CE down >= 80%");
  out.require(length_ok, "generation length");
  out.require(std::abs(bin - expected_bin) <= 1, "griffin-lim tone peak");
}

// 8 ---------------------------------------------------------------------------
void wer_suite(Outcome& out) {
  struct Fixture {
    const char* ref;
    const char* hyp;
    std::size_t s, i, d;
  };
  // Counts worked out by hand.
  const std::vector<Fixture> fixtures{
      {"set an alarm for five pm", "set alarm for nine pm", 1, 0, 1},
      {"call bob at ten", "call bob at ten", 0, 0, 0},
      {"call bob at ten", "call rob at ten please", 1, 1, 0},
      {"what is the weather", "", 0, 0, 4},
      {"Remind me, please!", "remind me please", 0, 0, 0},
      {"turn it up", "turn the volume up", 1, 1, 0},
  };
  int exact = 0;
  for (const auto& f : fixtures) {
    const auto e = word_error_rate(normalize_text(f.ref), normalize_text(f.hyp));
    exact += e.substitutions == f.s && e.insertions == f.i && e.deletions == f.d;
  }
  const auto two_of_six = word_error_rate(normalize_text(fixtures[0].ref), normalize_text(fixtures[0].hyp));
  const bool third = two_of_six.wer() == 2.0 / 6.0;

  const fs::path dir = scratch("wer");
  const std::vector<EvalItem> items{{"short", dir / "short.wav", "hello world"},
                                    {"long", dir / "long.wav", "one two three four five six seven eight"}};
  for (const auto& it : items) write_wav(it.audio, {Eigen::VectorXd::Zero(1600), kAudioSampleRate});
  std::ofstream(dir / "t.tsv") << "short\thello there\nlong\tone two three four five six seven eight\n";
  FileProvider file(dir / "t.tsv");
  const auto micro = evaluate_corpus(items, file);
  const bool micro_ok = micro.errors() == 1 && micro.ref_length() == 10 && micro.wer() == 0.1 &&
                        micro.macro_wer() == 0.25;
  EchoProvider echo;
  const double echo_wer = evaluate_corpus(items, echo, {2, {}}).wer();

  out.detail << exact << "/" << fixtures.size() << " fixtures exact, 2/6 case " << two_of_six.wer() << ", micro "
             << micro.wer() << " (macro " << micro.macro_wer() << "), echo " << echo_wer;
  out.require(exact == static_cast<int>(fixtures.size()) && third, "hand fixtures");
  out.require(micro_ok, "micro-average");
  out.require(echo_wer == 0.0, "echo corpus WER = 0");
}

// 9 ---------------------------------------------------------------------------
int run(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  if (status == -1) return -1;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void cli_smoke(Outcome& out) {
  const auto t0 = Clock::now();
  const fs::path root = scratch("cli");
  const std::string cli = EMGVOICE_CLI_PATH;
  const std::vector<std::string> stages{"preprocess", "featurize", "align", "train",
                                        "synthesize --vocoder griffin-lim", "evaluate --provider echo"};
  int failures = 0;
  for (const std::string run_name : {"a", "b"}) {
    const fs::path dir = root / run_name;
    const std::string log = " 2>>" + (dir / "log.txt").string() + " >>" + (dir / "out.txt").string();
    fs::create_directories(dir);
    failures += run(cli + " make-synthetic-corpus --utterances 30 --seed 1 -o " + (dir / "corpus").string() + log) != 0;
    for (const auto& s : stages)
      failures += run(cli + " " + s + " --seed 1 --corpus " +
                      (dir / "corpus").string() + " --work " + (dir / "work").string() + log) != 0;
  }

  // Every artifact must match; stage.json differs only in the corpus path.
  std::set<std::string> files_a, files_b;
  for (const auto& e : fs::recursive_directory_iterator(root / "a" / "work"))
    if (e.is_regular_file()) files_a.insert(fs::relative(e.path(), root / "a" / "work").string());
  for (const auto& e : fs::recursive_directory_iterator(root / "b" / "work"))
    if (e.is_regular_file()) files_b.insert(fs::relative(e.path(), root / "b" / "work").string());
  int differing = 0;
  for (const auto& f : files_a) {
    if (!files_b.count(f)) continue;
    const fs::path pa = root / "a" / "work" / f, pb = root / "b" / "work" / f;
    if (pa.filename() == "stage.json") {
      auto ja = nlohmann::json::parse(slurp(pa)), jb = nlohmann::json::parse(slurp(pb));
      ja["config"].erase("corpus");
      jb["config"].erase("corpus");
      differing += ja != jb;
    } else {
      differing += slurp(pa) != slurp(pb);
    }
  }
  const bool corpus_same = slurp(root / "a" / "corpus" / "manifest.json") == slurp(root / "b" / "corpus" / "manifest.json");
  out.detail << failures << " non-zero exits, " << files_a.size() << " artifacts, " << differing << " differ, "
             << std::fixed << std::setprecision(0) << seconds_since(t0) << " s for two runs";
  out.require(failures == 0, "all commands exit 0");
  out.require(!files_a.empty() && files_a == files_b, "same artifact set");
  out.require(differing == 0 && corpus_same, "identical artifacts");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"DTW oracle equivalence", dtw_oracle},
      {"CCA oracle equivalence", cca_oracle},
      {"gradient exactness", gradients},
      {"DSP contracts", dsp_contracts},
      {"synthetic target transfer", target_transfer},
      {"plateau schedule arithmetic", schedule},
      {"vocoder contracts", vocoder_contracts},
      {"WER suite", wer_suite},
      {"end-to-end CLI smoke", cli_smoke},
  };
  // Optional list of criterion numbers to run.
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int number = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(number)) continue;
    Outcome out;
    try {
      criteria[k].second(out);
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail << " [exception: " << e.what() << "]";
    }
    failed += !out.pass;
    std::cout << (out.pass ? "PASS" : "FAIL") << " " << number << " " << criteria[k].first << ": "
              << out.detail.str() << std::endl;
  }
  return failed;
}
