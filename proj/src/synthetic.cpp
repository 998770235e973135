#include "emgvoice/synthetic.hpp"

#include "emgvoice/dataset.hpp"
#include "emgvoice/error.hpp"
#include "emgvoice/features.hpp"
#include "emgvoice/nn.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>

namespace emgvoice {

using nlohmann::json;

void SyntheticConfig::validate() const {
  if (pairs < 0 || nonparallel < 0 || pairs + nonparallel == 0)
    throw config_error("synthetic corpus needs at least one utterance");
  if (sessions < 1) throw config_error("synthetic corpus needs at least one session");
  if (!(min_seconds >= 1.0 && max_seconds >= min_seconds)) throw config_error("durations must satisfy 1 <= min <= max");
  if (!(max_warp >= 0.0 && max_warp < 1.0)) throw config_error("warp strength must lie in [0, 1)");
  if (!(rate_jitter >= 0.0 && rate_jitter < 0.5)) throw config_error("rate jitter must lie in [0, 0.5)");
  if (latent_dims < 1) throw config_error("latent dimension must be positive");
  if (!(silent_noise >= 0.0 && silent_distortion >= 0.0 && audio_noise >= 0.0))
    throw config_error("noise levels and distortion must be non-negative");
}

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kRest = 0.5;

// Smooth articulator-like trajectories: sums of three sinusoids at 1-5 Hz.
struct Latents {
  std::vector<std::array<double, 9>> terms;  // (amplitude, frequency, phase) x 3

  Latents(int dims, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> amp(0.3, 1.0), freq(1.0, 5.0), phase(0.0, 2 * kPi);
    for (int k = 0; k < dims; ++k) {
      std::array<double, 9> t{};
      for (int m = 0; m < 3; ++m) {
        t[3 * m] = amp(rng) / std::sqrt(1.5);
        t[3 * m + 1] = freq(rng);
        t[3 * m + 2] = phase(rng);
      }
      terms.push_back(t);
    }
  }

  double at(int k, double t) const {
    const auto& c = terms[static_cast<std::size_t>(k)];
    double v = 0;
    for (int m = 0; m < 3; ++m) v += c[3 * m] * std::sin(2 * kPi * c[3 * m + 1] * t + c[3 * m + 2]);
    return v;
  }
};

double smoothstep(double a, double b, double x) {
  const double t = std::clamp((x - a) / (b - a), 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

// 0 during the leading rest and the last 0.2 s, 1 in the middle.
double activity(double t, double duration) {
  return smoothstep(kRest - 0.1, kRest + 0.1, t) * (1.0 - smoothstep(duration - 0.35, duration - 0.2, t));
}

double softplus(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }

struct Subject {
  Eigen::MatrixXd env_mix;   // channels x latents
  Eigen::MatrixXd slow_mix;  // channels x latents
  Eigen::MatrixXd silent_env_mix;
  Eigen::MatrixXd silent_slow_mix;
  Eigen::VectorXd silent_gain;
};

Subject make_subject(int latents, double weak_gain, double distortion, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> gain(0.75, 1.1);
  auto random = [&] {
    Eigen::MatrixXd m(kNumElectrodes, latents);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
  };
  Subject s;
  s.env_mix = random();
  s.slow_mix = random();
  s.silent_env_mix = s.env_mix + distortion * random();
  s.silent_slow_mix = s.slow_mix + distortion * random();
  s.silent_gain.resize(kNumElectrodes);
  for (int c = 0; c < kNumElectrodes; ++c) s.silent_gain(c) = gain(rng);
  s.silent_gain(3) = weak_gain;
  return s;
}

// EMG content without hum or offsets, samples x channels. `clock` maps
// recording time to latent time.
Eigen::MatrixXd emg_content(const Latents& z, const Eigen::MatrixXd& env_mix, const Eigen::MatrixXd& slow_mix,
                            const Eigen::VectorXd& gain, double duration, double latent_duration,
                            const std::function<double(double)>& clock, std::mt19937_64& rng) {
  const Eigen::Index n = static_cast<Eigen::Index>(std::round(duration * kEmgSampleRate));
  const Eigen::Index dims = env_mix.cols();
  std::normal_distribution<double> g;
  Eigen::MatrixXd x(n, kNumElectrodes);
  std::array<double, kNumElectrodes> carrier{};
  Eigen::VectorXd lat(dims);
  for (Eigen::Index t = 0; t < n; ++t) {
    const double sec = clock(static_cast<double>(t) / kEmgSampleRate);
    for (Eigen::Index k = 0; k < dims; ++k) lat(k) = z.at(static_cast<int>(k), sec);
    const double act = 0.25 + 0.75 * activity(sec, latent_duration);
    const Eigen::VectorXd env = env_mix * lat;
    const Eigen::VectorXd slow = slow_mix * lat;
    for (int c = 0; c < kNumElectrodes; ++c) {
      auto& car = carrier[static_cast<std::size_t>(c)];
      car = 0.5 * car + g(rng);
      x(t, c) = 0.05 * gain(c) * act * (softplus(env(c)) * car + 0.5 * slow(c));
    }
  }
  return x;
}

void add_interference(Eigen::MatrixXd& x, double noise, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> offset(-0.2, 0.2), phase(0.0, 2 * kPi);
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double dc = offset(rng), ph = phase(rng);
    for (Eigen::Index t = 0; t < x.rows(); ++t)
      x(t, c) += dc + 0.02 * std::sin(2 * kPi * 60.0 * static_cast<double>(t) / kEmgSampleRate + ph) + noise * g(rng);
  }
}

Eigen::VectorXd speech_audio(const Latents& z, double duration, double noise, std::mt19937_64& rng) {
  const Eigen::Index n = static_cast<Eigen::Index>(std::round(duration * kAudioSampleRate));
  std::normal_distribution<double> g;
  Eigen::VectorXd y(n);
  double phase = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / kAudioSampleRate;
    const double f0 = 120.0 + 20.0 * z.at(0, t);
    const double f1 = 550.0 + 200.0 * std::tanh(z.at(1 % static_cast<int>(z.terms.size()), t));
    const double f2 = 1600.0 + 400.0 * std::tanh(z.at(2 % static_cast<int>(z.terms.size()), t));
    const double amp =
        0.3 * activity(t, duration) / (1.0 + std::exp(-(1.5 * z.at(3 % static_cast<int>(z.terms.size()), t) + 0.5)));
    phase += 2 * kPi * f0 / kAudioSampleRate;
    double s = 0;
    for (int h = 1; h * f0 < 5000.0; ++h) {
      const double f = h * f0;
      const double gain =
          std::exp(-std::pow((f - f1) / 120.0, 2)) + 0.6 * std::exp(-std::pow((f - f2) / 200.0, 2)) + 0.03;
      s += gain * std::sin(h * phase);
    }
    y(i) = amp * 0.2 * s + noise * g(rng);
  }
  return y;
}

std::string sentence(std::mt19937_64& rng) {
  static const std::vector<std::string> nums{"one", "two", "three", "four", "five", "six",
                                             "seven", "eight", "nine", "ten", "eleven", "twelve"};
  static const std::vector<std::string> names{"alice", "bob", "carol", "dave", "erin", "frank"};
  static const std::vector<std::string> cities{"boston", "denver", "austin", "seattle", "chicago"};
  auto pick = [&](const std::vector<std::string>& v) { return v[rng() % v.size()]; };
  switch (rng() % 4) {
    case 0: return "set an alarm for " + pick(nums) + (rng() % 2 ? " am" : " pm");
    case 1: return "what is the weather in " + pick(cities);
    case 2: return "call " + pick(names) + " at " + pick(nums);
    default: return "remind me to call " + pick(names) + " at " + pick(nums) + " o'clock";
  }
}

}  // namespace

std::map<std::string, SyntheticWarp> make_synthetic_corpus(const fs::path& dir, const SyntheticConfig& cfg) {
  cfg.validate();
  fs::create_directories(dir);
  std::mt19937_64 rng(cfg.seed);
  std::vector<Subject> subjects;
  for (int s = 0; s < cfg.sessions; ++s) subjects.push_back(make_subject(cfg.latent_dims, cfg.weak_gain, cfg.silent_distortion, rng));

  std::vector<UtteranceRecord> records;
  std::map<std::string, SyntheticWarp> warps;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int total = cfg.pairs + cfg.nonparallel;
  for (int k = 0; k < total; ++k) {
    const bool parallel = k < cfg.pairs;
    const int session = k % cfg.sessions;
    const std::string sess = "s" + std::to_string(session + 1);
    fs::create_directories(dir / sess);
    // Each utterance gets an independent stream so the corpus is stable when
    // counts change.
    std::mt19937_64 urng(nn::mix_seed(cfg.seed, static_cast<std::uint64_t>(k) + 1));
    const Latents z(cfg.latent_dims, urng);
    const double dur = cfg.min_seconds + (cfg.max_seconds - cfg.min_seconds) * unit(urng);
    const std::string text = sentence(urng);
    const std::string stem = sess + (parallel ? "_p" : "_n") + std::to_string(1000 + k).substr(1);

    const Subject& subj = subjects[static_cast<std::size_t>(session)];
    const Eigen::VectorXd unit_gain = Eigen::VectorXd::Ones(kNumElectrodes);
    Eigen::MatrixXd voc =
        emg_content(z, subj.env_mix, subj.slow_mix, unit_gain, dur, dur, [](double t) { return t; }, urng);
    const Eigen::Index nvoc = voc.rows();
    add_interference(voc, 0.002, urng);
    const std::string vid = stem + "_v";
    write_emg(dir / sess / (vid + ".emg"), {voc, kEmgSampleRate});
    write_wav(dir / sess / (vid + ".wav"), {speech_audio(z, dur, cfg.audio_noise, urng), kAudioSampleRate});
    records.push_back({vid, text, sess, Mode::vocalized, sess + "/" + vid + ".emg", sess + "/" + vid + ".wav", {}});
    if (!parallel) continue;

    // Silent replay: vocalized time = Tv * w(u / Ts).
    const double beta = cfg.max_warp * (2 * unit(urng) - 1);
    const double ratio = 1.0 + cfg.rate_jitter * (2 * unit(urng) - 1);
    const double tv = static_cast<double>(nvoc) / kEmgSampleRate;
    const double ts = tv * ratio;
    const auto warp = [&](double u) {
      const double x = std::clamp(u / ts, 0.0, 1.0);
      return tv * (x + beta * std::sin(2 * kPi * x) / (2 * kPi));
    };
    // Fresh muscle noise and a silent-mode mixing, not a replay.
    Eigen::MatrixXd sil = emg_content(z, subj.silent_env_mix, subj.silent_slow_mix, subj.silent_gain, ts, dur, warp, urng);
    const Eigen::Index ns = sil.rows();
    add_interference(sil, cfg.silent_noise * 0.05, urng);
    const std::string sid = stem + "_s";
    write_emg(dir / sess / (sid + ".emg"), {sil, kEmgSampleRate});
    records.push_back({sid, text, sess, Mode::silent, sess + "/" + sid + ".emg", {}, vid});

    // Frame centres map through the warp to the nearest vocalized frame.
    const FrameConfig fc = FrameConfig::emg();
    const int frame = fc.frame_samples(), hop = fc.hop_samples();
    const int nv = static_cast<int>((nvoc - frame) / hop + 1);
    const int nsf = static_cast<int>((ns - frame) / hop + 1);
    SyntheticWarp w{vid, beta, {}};
    const double centre = 0.5 * (frame - 1);
    for (int i = 0; i < nsf; ++i) {
      const double tau = warp((i * hop + centre) / kEmgSampleRate) * kEmgSampleRate;
      w.mapping.push_back(std::clamp(static_cast<int>(std::lround((tau - centre) / hop)), 0, nv - 1));
    }
    warps.emplace(sid, std::move(w));
  }

  save_manifest(CorpusManifest(dir, Domain::closed_vocabulary, records), dir / "manifest.json");
  json j = json::object();
  for (const auto& [id, w] : warps) j[id] = {{"vocalized", w.vocalized_id}, {"beta", w.beta}, {"mapping", w.mapping}};
  std::ofstream(dir / "warps.json") << j.dump(1) << "\n";
  return warps;
}

std::map<std::string, SyntheticWarp> load_synthetic_warps(const fs::path& dir) {
  std::ifstream in(dir / "warps.json");
  if (!in) throw data_error("no warps.json in " + dir.string());
  std::map<std::string, SyntheticWarp> out;
  try {
    const json j = json::parse(in);
    for (const auto& [id, w] : j.items())
      out.emplace(id, SyntheticWarp{w.at("vocalized").get<std::string>(), w.at("beta").get<double>(),
                                    w.at("mapping").get<std::vector<int>>()});
  } catch (const json::exception& e) {
    throw data_error(std::string("malformed warps.json: ") + e.what());
  }
  return out;
}

}  // namespace emgvoice
