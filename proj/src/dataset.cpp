#include "emgvoice/dataset.hpp"

#include "emgvoice/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

namespace emgvoice {

using nlohmann::json;

const char* to_string(Mode m) { return m == Mode::silent ? "silent" : "vocalized"; }

const char* to_string(Domain d) {
  return d == Domain::closed_vocabulary ? "closed-vocabulary" : "open-vocabulary";
}

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  if (s == "silent") return Mode::silent;
  if (s == "vocalized") return Mode::vocalized;
  throw data_error("unknown speaking mode '" + s + "'");
}

Domain parse_domain(const std::string& s) {
  if (s == "closed-vocabulary") return Domain::closed_vocabulary;
  if (s == "open-vocabulary") return Domain::open_vocabulary;
  throw data_error("unknown domain '" + s + "'");
}

CorpusManifest::CorpusManifest(fs::path root, Domain domain, std::vector<UtteranceRecord> utterances,
                               std::map<std::string, Split> splits)
    : root_(std::move(root)),
      domain_(domain),
      utterances_(std::move(utterances)),
      splits_(std::move(splits)) {
  for (std::size_t i = 0; i < utterances_.size(); ++i) {
    if (!index_.emplace(utterances_[i].id, i).second)
      throw data_error("duplicate utterance id '" + utterances_[i].id + "'");
  }
  for (const auto& u : utterances_)
    if (u.parallel_id) reverse_links_.emplace(*u.parallel_id, u.id);
}

std::optional<std::string> CorpusManifest::counterpart(const std::string& id) const {
  const auto& rec = record(id);
  if (rec.parallel_id) return rec.parallel_id;
  auto it = reverse_links_.find(id);
  if (it == reverse_links_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> CorpusManifest::sessions() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& u : utterances_)
    if (seen.insert(u.session_id).second) out.push_back(u.session_id);
  return out;
}

const UtteranceRecord& CorpusManifest::record(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw data_error("unknown utterance id '" + id + "'");
  return utterances_[it->second];
}

std::optional<Split> CorpusManifest::split_of(const std::string& id) const {
  auto it = splits_.find(id);
  if (it == splits_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> CorpusManifest::ids_in(Split s) const {
  std::vector<std::string> out;
  for (const auto& u : utterances_) {
    auto it = splits_.find(u.id);
    if (it != splits_.end() && it->second == s) out.push_back(u.id);
  }
  return out;
}

void CorpusManifest::validate(bool check_files) const {
  for (const auto& u : utterances_) {
    if (u.id.empty()) throw data_error("utterance with empty id");
    if (u.mode == Mode::vocalized && !u.audio_path)
      throw data_error("vocalized utterance '" + u.id + "' has no audio");
    if (check_files) {
      if (!fs::exists(root_ / u.emg_path))
        throw data_error("utterance '" + u.id + "': missing EMG file " + u.emg_path);
      if (u.mode == Mode::vocalized && !fs::exists(root_ / *u.audio_path))
        throw data_error("utterance '" + u.id + "': missing audio file " + *u.audio_path);
    }
    if (u.parallel_id) {
      auto it = index_.find(*u.parallel_id);
      if (it == index_.end())
        throw data_error("utterance '" + u.id + "': dangling parallel_id '" + *u.parallel_id + "'");
      const auto& p = utterances_[it->second];
      if (p.text != u.text || p.session_id != u.session_id || p.mode == u.mode)
        throw data_error("utterance '" + u.id + "': parallel counterpart '" + p.id +
                         "' must share text and session and use the other mode");
      if (p.parallel_id && *p.parallel_id != u.id)
        throw data_error("utterance '" + u.id + "': parallel counterpart '" + p.id +
                         "' links to a different utterance");
    }
  }
  std::map<std::string, std::string> linked_by;
  for (const auto& u : utterances_) {
    if (!u.parallel_id) continue;
    auto [it, fresh] = linked_by.emplace(*u.parallel_id, u.id);
    if (!fresh)
      throw data_error("utterance '" + *u.parallel_id + "' is the parallel counterpart of both '" +
                       it->second + "' and '" + u.id + "'");
  }
  for (const auto& [id, split] : splits_) {
    if (!index_.count(id)) throw data_error("split refers to unknown utterance '" + id + "'");
  }
}

namespace {

json record_to_json(const UtteranceRecord& u) {
  json j{{"id", u.id},
         {"text", u.text},
         {"session_id", u.session_id},
         {"mode", to_string(u.mode)},
         {"emg", u.emg_path}};
  j["audio"] = u.audio_path ? json(*u.audio_path) : json(nullptr);
  j["parallel_id"] = u.parallel_id ? json(*u.parallel_id) : json(nullptr);
  return j;
}

UtteranceRecord record_from_json(const json& j) {
  UtteranceRecord u;
  try {
    u.id = j.at("id").get<std::string>();
  } catch (const json::exception&) {
    throw data_error("manifest record without id");
  }
  try {
    u.text = j.at("text").get<std::string>();
    u.session_id = j.at("session_id").get<std::string>();
    u.mode = parse_mode(j.at("mode").get<std::string>());
    u.emg_path = j.at("emg").get<std::string>();
    if (j.contains("audio") && !j["audio"].is_null()) u.audio_path = j["audio"].get<std::string>();
    if (j.contains("parallel_id") && !j["parallel_id"].is_null())
      u.parallel_id = j["parallel_id"].get<std::string>();
  } catch (const json::exception& e) {
    throw data_error("malformed manifest record '" + u.id + "': " + e.what());
  }
  return u;
}

}  // namespace

CorpusManifest load_manifest(const fs::path& path) {
  fs::path file = path;
  if (fs::is_directory(path)) {
    file = path / "manifest.json";
    if (!fs::exists(file)) {
      if (fs::is_empty(path)) return CorpusManifest(path, Domain::open_vocabulary, {});
      throw data_error("no manifest.json in " + path.string());
    }
  } else if (!fs::exists(path)) {
    throw data_error("manifest not found: " + path.string());
  }

  std::ifstream in(file);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw data_error("cannot parse " + file.string() + ": " + e.what());
  }

  Domain domain = Domain::open_vocabulary;
  if (j.contains("domain")) domain = parse_domain(j["domain"].get<std::string>());
  std::vector<UtteranceRecord> records;
  for (const auto& r : j.value("utterances", json::array())) records.push_back(record_from_json(r));

  std::map<std::string, Split> splits;
  if (j.contains("splits")) {
    for (Split s : {Split::train, Split::val, Split::test}) {
      for (const auto& id : j["splits"].value(to_string(s), json::array())) {
        if (!splits.emplace(id.get<std::string>(), s).second)
          throw data_error("utterance '" + id.get<std::string>() + "' appears in two splits");
      }
    }
  }

  CorpusManifest m(file.parent_path(), domain, std::move(records), std::move(splits));
  m.validate(true);
  return m;
}

void save_manifest(const CorpusManifest& manifest, const fs::path& path) {
  json j;
  j["format"] = "emgvoice-manifest";
  j["version"] = 1;
  j["domain"] = to_string(manifest.domain());
  j["sessions"] = manifest.sessions();
  j["utterances"] = json::array();
  for (const auto& u : manifest.utterances()) j["utterances"].push_back(record_to_json(u));
  if (!manifest.splits().empty()) {
    json splits = json::object();
    for (Split s : {Split::train, Split::val, Split::test}) splits[to_string(s)] = manifest.ids_in(s);
    j["splits"] = splits;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

Utterance load_utterance(const CorpusManifest& manifest, const std::string& id) {
  const auto& rec = manifest.record(id);
  Utterance u;
  u.id = rec.id;
  u.text = rec.text;
  u.session_id = rec.session_id;
  u.mode = rec.mode;
  u.parallel_id = manifest.counterpart(id);

  auto emg = read_emg(manifest.root() / rec.emg_path);
  if (emg.samples.cols() != kNumElectrodes)
    throw data_error("utterance '" + id + "': expected 8 EMG channels, found " +
                     std::to_string(emg.samples.cols()));
  if (emg.sample_rate != kEmgSampleRate)
    throw data_error("utterance '" + id + "': EMG sample rate " + std::to_string(emg.sample_rate) +
                     " Hz, expected 1000 Hz");
  u.emg = std::move(emg.samples);
  for (int e = 1; e <= kNumElectrodes; ++e) u.electrodes.push_back(e);

  if (rec.mode == Mode::vocalized) {
    auto wav = read_wav(manifest.root() / *rec.audio_path);
    if (wav.sample_rate != kAudioSampleRate)
      throw data_error("utterance '" + id + "': audio sample rate " +
                       std::to_string(wav.sample_rate) + " Hz, expected 16000 Hz");
    u.audio = std::move(wav.samples);
  }
  return u;
}

namespace {

// Fisher-Yates on raw engine output so the permutation does not depend on
// the standard library's distribution implementation.
template <typename T>
void seeded_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rng() % i;
    std::swap(v[i - 1], v[j]);
  }
}

std::size_t scaled_count(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5));
}

}  // namespace

CorpusManifest make_splits(const CorpusManifest& manifest, std::uint64_t seed, std::size_t n_val,
                           std::size_t n_test, double data_fraction) {
  if (!(data_fraction > 0.0 && data_fraction <= 1.0))
    throw config_error("data_fraction must lie in (0, 1]");

  std::vector<std::string> held_candidates;
  for (const auto& u : manifest.utterances())
    if (u.mode == Mode::silent && manifest.counterpart(u.id)) held_candidates.push_back(u.id);
  if (held_candidates.size() < n_val + n_test)
    throw data_error("insufficient silent parallel utterances: need " +
                     std::to_string(n_val + n_test) + ", have " +
                     std::to_string(held_candidates.size()));

  std::mt19937_64 rng(seed);
  seeded_shuffle(held_candidates, rng);

  std::map<std::string, Split> splits;
  std::set<std::string> reserved;
  for (std::size_t k = 0; k < n_val + n_test; ++k) {
    const auto& id = held_candidates[k];
    splits[id] = k < n_val ? Split::val : Split::test;
    reserved.insert(id);
    reserved.insert(*manifest.counterpart(id));
  }

  // Training pools: parallel pairs keyed by their silent member, and
  // non-parallel vocalized utterances. Silent recordings without a
  // counterpart have no transferable targets and are left out.
  std::vector<std::string> pairs, nonparallel;
  for (const auto& u : manifest.utterances()) {
    if (reserved.count(u.id)) continue;
    if (manifest.counterpart(u.id)) {
      if (u.mode == Mode::silent) pairs.push_back(u.id);
    } else if (u.mode == Mode::vocalized) {
      nonparallel.push_back(u.id);
    }
  }

  auto subsample = [&](std::vector<std::string> pool) {
    if (data_fraction >= 1.0) return pool;
    const std::size_t keep = scaled_count(pool.size(), data_fraction);
    seeded_shuffle(pool, rng);
    pool.resize(keep);
    return pool;
  };
  const auto kept_pairs = subsample(pairs);
  const auto kept_nonparallel = subsample(nonparallel);
  if (kept_pairs.empty() && kept_nonparallel.empty())
    throw data_error("insufficient utterances: training split would be empty");

  for (const auto& id : kept_pairs) {
    splits[id] = Split::train;
    splits[*manifest.counterpart(id)] = Split::train;
  }
  for (const auto& id : kept_nonparallel) splits[id] = Split::train;

  return CorpusManifest(manifest.root(), manifest.domain(), manifest.utterances(), std::move(splits));
}

ElectrodeMask::ElectrodeMask(const std::array<bool, kNumElectrodes>& enabled) : enabled_(enabled) {
  if (count() == 0) throw config_error("electrode mask disables every channel");
}

ElectrodeMask ElectrodeMask::removing(const std::vector<int>& electrodes) {
  std::array<bool, kNumElectrodes> bits;
  bits.fill(true);
  for (int e : electrodes) {
    if (e < 1 || e > kNumElectrodes)
      throw config_error("electrode number out of range: " + std::to_string(e));
    bits[static_cast<std::size_t>(e - 1)] = false;
  }
  return ElectrodeMask(bits);
}

bool ElectrodeMask::enabled(int electrode) const {
  return enabled_.at(static_cast<std::size_t>(electrode - 1));
}

int ElectrodeMask::count() const {
  return static_cast<int>(std::count(enabled_.begin(), enabled_.end(), true));
}

std::vector<int> ElectrodeMask::removed() const {
  std::vector<int> out;
  for (int e = 1; e <= kNumElectrodes; ++e)
    if (!enabled(e)) out.push_back(e);
  return out;
}

Utterance mask_electrodes(const Utterance& u, const ElectrodeMask& mask) {
  if (mask.count() == 0) throw config_error("electrode mask disables every channel");
  std::vector<Eigen::Index> keep;
  for (std::size_t c = 0; c < u.electrodes.size(); ++c)
    if (mask.enabled(u.electrodes[c])) keep.push_back(static_cast<Eigen::Index>(c));
  if (keep.empty()) throw config_error("utterance '" + u.id + "' has no enabled channels left");

  Utterance out = u;
  out.emg.resize(u.emg.rows(), static_cast<Eigen::Index>(keep.size()));
  out.electrodes.clear();
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.emg.col(static_cast<Eigen::Index>(k)) = u.emg.col(keep[k]);
    out.electrodes.push_back(u.electrodes[static_cast<std::size_t>(keep[k])]);
  }
  return out;
}

const char* electrode_location(int electrode) {
  static constexpr const char* kLocations[kNumElectrodes] = {
      "left cheek just above mouth",
      "left corner of chin",
      "below chin back 3 cm",
      "throat 3 cm left from Adam's apple",
      "mid-jaw right",
      "right cheek just below mouth",
      "right cheek 2 cm from nose",
      "back of right cheek, 4 cm in front of ear",
  };
  if (electrode < 1 || electrode > kNumElectrodes) return "unknown";
  return kLocations[electrode - 1];
}

}  // namespace emgvoice
