#pragma once

#include "emgvoice/io.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace emgvoice {

inline constexpr int kNumElectrodes = 8;

enum class Mode { silent, vocalized };
enum class Domain { closed_vocabulary, open_vocabulary };
enum class Split { train, val, test };

const char* to_string(Mode m);
const char* to_string(Domain d);
const char* to_string(Split s);
Mode parse_mode(const std::string& s);
Domain parse_domain(const std::string& s);

struct Utterance {
  std::string id;
  std::string text;
  std::string session_id;
  Mode mode = Mode::silent;
  Eigen::MatrixXd emg;                  // samples x channels, 1000 Hz
  std::optional<Eigen::VectorXd> audio;  // 16 kHz, vocalized only
  std::optional<std::string> parallel_id;
  std::vector<int> electrodes;  // 1-based electrode number of each emg column
};

struct UtteranceRecord {
  std::string id;
  std::string text;
  std::string session_id;
  Mode mode = Mode::silent;
  std::string emg_path;  // relative to the manifest root
  std::optional<std::string> audio_path;
  std::optional<std::string> parallel_id;

  bool operator==(const UtteranceRecord&) const = default;
};

// Validated, immutable view of a corpus on disk. Paths in the records are
// relative to `root`.
class CorpusManifest {
public:
  CorpusManifest() = default;
  CorpusManifest(fs::path root, Domain domain, std::vector<UtteranceRecord> utterances,
                 std::map<std::string, Split> splits = {});

  const fs::path& root() const { return root_; }
  Domain domain() const { return domain_; }
  const std::vector<UtteranceRecord>& utterances() const { return utterances_; }
  std::vector<std::string> sessions() const;
  std::size_t size() const { return utterances_.size(); }

  const UtteranceRecord& record(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.count(id) != 0; }

  // Parallel links may be recorded on either member; this resolves both ways.
  std::optional<std::string> counterpart(const std::string& id) const;

  std::optional<Split> split_of(const std::string& id) const;
  std::vector<std::string> ids_in(Split s) const;
  const std::map<std::string, Split>& splits() const { return splits_; }

  // Checks every invariant; throws a data error naming the offending id.
  void validate(bool check_files = true) const;

  bool operator==(const CorpusManifest& o) const {
    return domain_ == o.domain_ && utterances_ == o.utterances_ && splits_ == o.splits_;
  }

private:
  fs::path root_;
  Domain domain_ = Domain::open_vocabulary;
  std::vector<UtteranceRecord> utterances_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, Split> splits_;
  std::map<std::string, std::string> reverse_links_;
};

// Accepts a manifest JSON file or a corpus directory holding manifest.json.
// An empty directory yields an empty manifest.
CorpusManifest load_manifest(const fs::path& path);
void save_manifest(const CorpusManifest& manifest, const fs::path& path);

Utterance load_utterance(const CorpusManifest& manifest, const std::string& id);

// Draws validation and test sets from silent parallel utterances, reserves
// their vocalized counterparts, and downsamples the remaining training data.
// Parallel pairs and non-parallel utterances are subsampled proportionally.
CorpusManifest make_splits(const CorpusManifest& manifest, std::uint64_t seed, std::size_t n_val,
                           std::size_t n_test, double data_fraction = 1.0);

class ElectrodeMask {
public:
  ElectrodeMask() { enabled_.fill(true); }
  explicit ElectrodeMask(const std::array<bool, kNumElectrodes>& enabled);

  // Electrode numbers are 1-based, as in the electrode location table.
  static ElectrodeMask removing(const std::vector<int>& electrodes);

  bool enabled(int electrode) const;
  int count() const;
  std::vector<int> removed() const;
  const std::array<bool, kNumElectrodes>& bits() const { return enabled_; }

private:
  std::array<bool, kNumElectrodes> enabled_{};
};

Utterance mask_electrodes(const Utterance& u, const ElectrodeMask& mask);

// Human-readable electrode placement, 1-based.
const char* electrode_location(int electrode);

}  // namespace emgvoice
