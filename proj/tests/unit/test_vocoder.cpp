#include <doctest.h>

#include "emgvoice/dsp.hpp"
#include "emgvoice/error.hpp"
#include "emgvoice/features.hpp"
#include "emgvoice/vocoder.hpp"
#include "test_signals.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

using namespace emgvoice;

namespace {

FeatureSequence random_mfcc(Eigen::Index frames, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  FeatureSequence s{Eigen::MatrixXd(frames, kMfccDim), FeatureKind::mfcc, false};
  for (Eigen::Index i = 0; i < s.data.size(); ++i) s.data.data()[i] = g(rng);
  return s;
}

std::vector<int> random_codes(std::size_t n, std::mt19937_64& rng) {
  std::vector<int> c(n);
  for (auto& v : c) v = static_cast<int>(rng() % kMuLawClasses);
  return c;
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::ArrayXd x = a.array() - a.mean(), y = b.array() - b.mean();
  return (x * y).sum() / std::sqrt((x * x).sum() * (y * y).sum());
}

}  // namespace

TEST_CASE("mu-law codec") {
  CHECK(mulaw_encode(0.0) == 128);
  CHECK(mulaw_encode(1.0) == 255);
  CHECK(mulaw_encode(-1.0) == 0);
  CHECK(mulaw_decode(255) == doctest::Approx(1.0));
  CHECK(mulaw_decode(0) == doctest::Approx(-1.0));
  // 256 uniform levels cannot contain zero; the middle code decodes to the
  // smallest positive level.
  CHECK(mulaw_decode(128) == doctest::Approx((std::pow(256.0, 1.0 / 255.0) - 1.0) / 255.0));
  CHECK(std::abs(mulaw_decode(128)) < 1e-4);

  bool clamped = false;
  CHECK(mulaw_encode(1.5, &clamped) == 255);
  CHECK(clamped);
  mulaw_encode(0.3, &clamped);
  CHECK_FALSE(clamped);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> xs(10000);
  for (auto& x : xs) x = u(rng);
  double worst = 0;
  for (double x : xs) worst = std::max(worst, std::abs(mulaw_decode(mulaw_encode(x)) - x));
  CHECK(worst <= 0.025);

  std::sort(xs.begin(), xs.end());
  for (std::size_t i = 1; i < xs.size(); ++i) REQUIRE(mulaw_encode(xs[i - 1]) <= mulaw_encode(xs[i]));
  for (int c = 1; c < kMuLawClasses; ++c) REQUIRE(mulaw_decode(c - 1) < mulaw_decode(c));
}

TEST_CASE("wavenet config") {
  const WaveNetConfig full;
  CHECK(full.receptive_field() == 511);
  std::vector<int> d;
  for (int l = 0; l < full.layers; ++l) d.push_back(full.dilation(l));
  CHECK(d == std::vector<int>{1, 2, 4, 8, 16, 32, 64, 128, 1, 2, 4, 8, 16, 32, 64, 128});
  CHECK(WaveNetConfig::desk().receptive_field() == 256);

  WaveNetConfig bad;
  bad.max_dilation = 100;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = {};
  bad.upsample_window = 100;
  CHECK_THROWS_AS(WaveNetModel{bad}, Error);
}

TEST_CASE("conditioning upsampling length") {
  std::mt19937_64 rng(2);
  const auto m = WaveNetModel::init(WaveNetConfig::desk(), 3);
  CHECK(condition_upsample(m, random_mfcc(98, rng)).cols() == 15680);
  CHECK(condition_upsample(m, random_mfcc(1, rng)).cols() == 160);
  CHECK(condition_upsample(m, random_mfcc(1, rng)).rows() == 8);
  CHECK_THROWS_AS(condition_upsample(m, FeatureSequence{Eigen::MatrixXd(4, 13), FeatureKind::mfcc, false}), Error);
}

TEST_CASE("causality and receptive field") {
  WaveNetConfig cfg{16, 128, 4, 32, 32, 4, 4, kMfccDim, 432, 160};
  const auto m = WaveNetModel::init(cfg, 11);
  std::mt19937_64 rng(4);
  const auto feats = random_mfcc(7, rng);
  const Eigen::MatrixXd cond = condition_upsample(m, feats);
  auto codes = random_codes(static_cast<std::size_t>(cond.cols()), rng);
  const Eigen::MatrixXd base = wavenet_teacher_logits(m, codes, cond);
  CHECK(base.rows() == 256);
  CHECK(base.cols() == cond.cols());

  const Eigen::Index t = 100;
  codes[t] = (codes[t] + 97) % kMuLawClasses;
  const Eigen::MatrixXd moved = wavenet_teacher_logits(m, codes, cond);
  for (Eigen::Index s = 0; s <= t; ++s) REQUIRE((moved.col(s) - base.col(s)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((moved.col(t + 1) - base.col(t + 1)).cwiseAbs().maxCoeff() > 0.0);
  CHECK((moved.col(t + 511) - base.col(t + 511)).cwiseAbs().maxCoeff() > 0.0);
  for (Eigen::Index s = t + 512; s < base.cols(); ++s)
    REQUIRE((moved.col(s) - base.col(s)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("wavenet gradients match finite differences") {
  auto m = WaveNetModel::init(WaveNetConfig::desk(), 6);
  std::mt19937_64 rng(8);
  const auto feats = random_mfcc(2, rng);
  const auto codes = random_codes(320, rng);
  m.feature_norm = Normalizer::fit({feats});

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(m.params().size());
  const double loss = wavenet_loss(m, feats, codes, &grad);
  CHECK(loss == doctest::Approx(wavenet_loss(m, feats, codes)));

  // A random subset of each block keeps this quick; every block is covered.
  const double h = 1e-5;
  for (const auto& block : m.layout().blocks()) {
    CAPTURE(block.name);
    const Eigen::Index k = std::min<Eigen::Index>(block.size(), 24);
    Eigen::VectorXd a(k), n(k);
    for (Eigen::Index j = 0; j < k; ++j) {
      const Eigen::Index i = block.offset + static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(block.size()));
      WaveNetModel probe = m;
      probe.params()(i) += h;
      const double fp = wavenet_loss(probe, feats, codes);
      probe.params()(i) -= 2 * h;
      const double fm = wavenet_loss(probe, feats, codes);
      a(j) = grad(i);
      n(j) = (fp - fm) / (2 * h);
    }
    // The floor on the denominator absorbs difference-quotient roundoff on
    // blocks whose gradient is nearly zero.
    const double scale = std::max({a.norm(), n.norm(), 1e-4});
    CHECK((a - n).norm() / scale < 1e-4);
  }
}

TEST_CASE("wavenet overfits a short clip and regenerates it") {
  const int frames = 50;  // 0.5 s
  Eigen::VectorXd audio(160 * frames);
  for (Eigen::Index i = 0; i < audio.size(); ++i)
    audio(i) = 0.5 * std::sin(2 * std::numbers::pi * 200.0 * static_cast<double>(i) / 16000.0);
  AudioClip clip{"tone", mfcc_features(audio), audio};
  clip.audio.conservativeResize(160 * clip.features.frames());
  REQUIRE(clip.features.frames() >= 40);

  auto m = WaveNetModel::init(WaveNetConfig::desk(), 1);
  m.feature_norm = Normalizer::fit({clip.features});
  const auto codes = mulaw_encode(clip.audio);
  WaveNetTrainConfig tc;
  tc.steps = 500;
  tc.learning_rate = 3e-3;
  const auto losses = train_wavenet(m, {clip}, tc);
  REQUIRE(losses.size() == 500u);
  const double final_loss = wavenet_loss(m, clip.features, codes);
  MESSAGE("initial ", losses.front(), " final ", final_loss);
  CHECK(final_loss <= 0.2 * losses.front());

  GenerateOptions opts;
  opts.argmax = true;
  const auto regen = wavenet_generate_codes(m, clip.features, opts);
  REQUIRE(regen.size() == codes.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < codes.size(); ++i) hits += regen[i] == codes[i];
  const double acc = static_cast<double>(hits) / static_cast<double>(codes.size());
  MESSAGE("argmax regeneration accuracy ", acc);
  CHECK(acc > 0.9);
}

TEST_CASE("generation") {
  const auto m = WaveNetModel::init(WaveNetConfig::desk(), 12);
  std::mt19937_64 rng(13);
  const auto feats = random_mfcc(3, rng);
  const Eigen::VectorXd a = wavenet_generate(m, feats, {7, 1.0, false});
  CHECK(a.size() == 480);
  CHECK(a.cwiseAbs().maxCoeff() <= 1.0);
  CHECK(wavenet_generate(m, feats, {7, 1.0, false}) == a);
  CHECK_FALSE(wavenet_generate(m, feats, {8, 1.0, false}) == a);
  CHECK_THROWS_AS(wavenet_generate(m, feats, {7, 0.0, false}), Error);

  // Incremental generation and the teacher-forced pass agree on every step.
  GenerateOptions greedy;
  greedy.argmax = true;
  const auto codes = wavenet_generate_codes(m, feats, greedy);
  const Eigen::MatrixXd logits = wavenet_teacher_logits(m, codes, condition_upsample(m, feats));
  for (std::size_t t = 0; t < codes.size(); ++t) {
    Eigen::Index best = 0;
    logits.col(static_cast<Eigen::Index>(t)).maxCoeff(&best);
    REQUIRE(best == codes[t]);
  }
}

TEST_CASE("vocoder checkpoint round trip") {
  auto m = WaveNetModel::init(WaveNetConfig::desk(), 2);
  std::mt19937_64 rng(3);
  m.feature_norm = Normalizer::fit({random_mfcc(5, rng)});
  const auto back = wavenet_from_checkpoint(to_checkpoint(m));
  CHECK(back.params() == m.params());
  CHECK(back.config().layers == 8);
  const auto feats = random_mfcc(2, rng);
  CHECK(condition_upsample(back, feats) == condition_upsample(m, feats));
}

TEST_CASE("griffin-lim inversion") {
  const double rate = 16000.0;
  SUBCASE("tone peak") {
    Eigen::VectorXd tone(16000);
    for (Eigen::Index i = 0; i < tone.size(); ++i) tone(i) = 0.5 * std::sin(2 * std::numbers::pi * 1000.0 * i / rate);
    const auto mfcc = mfcc_features(tone);
    const Eigen::VectorXd out = griffin_lim_invert(mfcc);
    CHECK(out.size() == 160 * mfcc.frames());
    const Eigen::VectorXcd spec = dsp::rfft(out, static_cast<int>(out.size()));
    Eigen::Index peak = 0;
    spec.cwiseAbs().maxCoeff(&peak);
    const double peak_hz = static_cast<double>(peak) * rate / static_cast<double>(out.size());
    CHECK(std::abs(peak_hz - 1000.0) <= rate / 512.0);
    const Eigen::VectorXd mean_mag = dsp::stft(out, {432, 160, 512}).cwiseAbs().colwise().mean().transpose();
    Eigen::Index bin = 0;
    mean_mag.maxCoeff(&bin);
    CHECK(std::abs(bin - 32) <= 1);
  }
  SUBCASE("silence") {
    const auto mfcc = mfcc_features(Eigen::VectorXd::Zero(8000));
    const Eigen::VectorXd out = griffin_lim_invert(mfcc);
    CHECK(std::sqrt(out.squaredNorm() / static_cast<double>(out.size())) < 1e-3);
  }
  SUBCASE("round trip on speech-like signals") {
    for (std::uint64_t seed : {1, 2, 3}) {
      const Eigen::VectorXd speech = testsig::speech_like(16000, rate, seed);
      const auto mfcc = mfcc_features(speech);
      const auto again = mfcc_features(griffin_lim_invert(mfcc));
      const Eigen::Index n = std::min(mfcc.frames(), again.frames());
      double r = 0;
      for (int d = 0; d < kMfccDim; ++d) r += pearson(mfcc.data.col(d).head(n), again.data.col(d).head(n));
      r /= kMfccDim;
      CAPTURE(seed);
      CHECK(r > 0.8);
    }
  }
  CHECK_THROWS_AS(griffin_lim_invert(FeatureSequence{Eigen::MatrixXd(0, 26), FeatureKind::mfcc, false}), Error);
}
