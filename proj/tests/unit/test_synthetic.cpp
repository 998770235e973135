#include <doctest.h>

#include "emgvoice/dataset.hpp"
#include "emgvoice/error.hpp"
#include "emgvoice/features.hpp"
#include "emgvoice/synthetic.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace emgvoice;

namespace {

fs::path fresh(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("emgvoice_synth_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("synthetic corpus layout") {
  SyntheticConfig cfg;
  cfg.pairs = 4;
  cfg.nonparallel = 2;
  const auto dir = fresh("layout");
  const auto warps = make_synthetic_corpus(dir, cfg);
  const auto m = load_manifest(dir);
  CHECK(m.size() == 10);
  CHECK(m.sessions().size() == 2);
  CHECK(warps.size() == 4);
  CHECK(m.domain() == Domain::closed_vocabulary);

  int silent = 0;
  for (const auto& r : m.utterances()) {
    if (r.mode == Mode::vocalized) {
      CHECK(r.audio_path.has_value());
      CHECK_FALSE(r.parallel_id.has_value());
      continue;
    }
    ++silent;
    REQUIRE(r.parallel_id.has_value());
    CHECK(m.counterpart(r.id) == r.parallel_id);
    CHECK(m.counterpart(*r.parallel_id) == r.id);
    REQUIRE(warps.count(r.id));
    const auto& w = warps.at(r.id);
    CHECK(w.vocalized_id == *r.parallel_id);
    CHECK(std::abs(w.beta) <= cfg.max_warp);

    // One ground-truth entry per silent EMG frame, monotone, inside the
    // vocalized frame range.
    const auto u = load_utterance(m, r.id);
    const auto v = load_utterance(m, w.vocalized_id);
    const auto ns = emg_features(u.emg).frames(), nv = emg_features(v.emg).frames();
    CHECK(static_cast<Eigen::Index>(w.mapping.size()) == ns);
    CHECK(w.mapping.front() == 0);
    CHECK(w.mapping.back() <= nv - 1);
    CHECK(w.mapping.back() >= nv - 2);
    CHECK(std::is_sorted(w.mapping.begin(), w.mapping.end()));
    CHECK(u.emg.rows() != v.emg.rows());
  }
  CHECK(silent == 4);
  CHECK(load_synthetic_warps(dir).at(warps.begin()->first).mapping == warps.begin()->second.mapping);
}

TEST_CASE("synthetic corpus is seeded") {
  SyntheticConfig cfg;
  cfg.pairs = 2;
  const auto a = fresh("seed_a"), b = fresh("seed_b"), c = fresh("seed_c");
  make_synthetic_corpus(a, cfg);
  make_synthetic_corpus(b, cfg);
  cfg.seed = 2;
  make_synthetic_corpus(c, cfg);
  const std::string f = "s1/s1_p000_s.emg";
  CHECK(slurp(a / f) == slurp(b / f));
  CHECK(slurp(a / "warps.json") == slurp(b / "warps.json"));
  CHECK(slurp(a / f) != slurp(c / f));
}

TEST_CASE("synthetic config validation") {
  SyntheticConfig cfg;
  cfg.pairs = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.max_warp = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.min_seconds = 0.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK_THROWS_AS(load_synthetic_warps(fresh("none")), Error);
}
