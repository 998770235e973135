#include <doctest.h>

#include "emgvoice/config.hpp"
#include "emgvoice/error.hpp"

#include <filesystem>
#include <fstream>
#include <map>

using namespace emgvoice;

TEST_CASE("config grammar") {
  const auto e = parse_config_text(R"(
# top level
seed = 7
corpus = "data/corpus"   # trailing comment

[train]
epochs = 3
source_weights = [1, 0.5, 0]

[electrodes]
remove = []
[eval]
provider_arg = "a \"quoted\" #value"
)");
  REQUIRE(e.size() == 6);
  CHECK(e[0].first == "seed");
  CHECK(e[1].second.items == std::vector<std::string>{"data/corpus"});
  CHECK(e[2].first == "train.epochs");
  CHECK(e[3].second.is_array);
  CHECK(e[3].second.items == std::vector<std::string>{"1", "0.5", "0"});
  CHECK(e[4].second.is_array);
  CHECK(e[4].second.items.empty());
  CHECK(e[5].second.items.front() == "a \"quoted\" #value");
  CHECK(e[2].second.origin == "<config>:7");

  CHECK_THROWS_AS(parse_config_text("x 1"), Error);
  CHECK_THROWS_AS(parse_config_text("[train\nepochs = 1"), Error);
  CHECK_THROWS_AS(parse_config_text("x = \"open"), Error);
  CHECK_THROWS_AS(parse_config_text("x = [1, 2"), Error);
  CHECK_THROWS_AS(parse_config_text("x = 1\nx = 2"), Error);
  CHECK_THROWS_AS(parse_config_text("x = 1 2 ]"), Error);
  try {
    parse_config_text("a = 1\n\nb = ", "f.toml");
    FAIL("expected an error");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::config);
    CHECK(std::string(err.what()).find("f.toml:3") != std::string::npos);
  }
}

TEST_CASE("config application") {
  PipelineConfig c;
  apply_config(c, parse_config_text(R"(
seed = 9
[transducer]
hidden = 48
preset = "full"
[train]
source_weights = [1, 0.5, 0]
validate_on_current_targets = false
[electrodes]
remove = [4, 8]
)"));
  CHECK(c.seed == 9);
  // Presets apply first regardless of position.
  CHECK(c.transducer.hidden == 48);
  CHECK(c.transducer.layers == TransducerConfig{}.layers);
  CHECK(c.train.source_weights[1] == doctest::Approx(0.5));
  CHECK_FALSE(c.train.validate_on_current_targets);
  CHECK(c.electrode_mask().count() == 6);

  PipelineConfig d;
  CHECK_THROWS_AS(apply_config(d, parse_config_text("[train]\nepoch = 3")), Error);
  CHECK_THROWS_AS(apply_config(d, parse_config_text("[train]\nepochs = three")), Error);
  CHECK_THROWS_AS(apply_config(d, parse_config_text("[train]\nepochs = [3]")), Error);
  CHECK_THROWS_AS(apply_config(d, parse_config_text("[train]\nsource_weights = [1, 2]")), Error);
  CHECK_THROWS_AS(apply_config(d, parse_config_text("[filter]\ngate_audio = maybe")), Error);
  CHECK_THROWS_AS(apply_config(d, parse_config_text("[transducer]\npreset = \"huge\"")), Error);

  apply_config(d, "train.data_fraction", "0.25");
  CHECK(d.data_fraction == doctest::Approx(0.25));
  apply_config(d, "train.data_fraction", "2");
  CHECK_THROWS_AS(d.validate(), Error);
}

TEST_CASE("config from file and environment") {
  const auto path = std::filesystem::temp_directory_path() / "emgvoice_config_test.toml";
  std::ofstream(path) << "[train]\nepochs = 4\nbatch_size = 2\n";
  PipelineConfig c = load_config(path);
  CHECK(c.train.epochs == 4);
  CHECK_THROWS_AS(load_config(path.string() + ".missing"), Error);

  std::map<std::string, std::string> env{{"EMGVOICE_TRAIN_EPOCHS", "6"},
                                         {"EMGVOICE_SEED", "3"},
                                         {"EMGVOICE_ELECTRODES_REMOVE", "[2]"},
                                         {"EMGVOICE_ASR_URL", "http://x"},
                                         {"EMGVOICE_TRAIN_EPOHCS", "1"}};
  auto get = [&](const char* n) -> const char* {
    auto it = env.find(n);
    return it == env.end() ? nullptr : it->second.c_str();
  };
  std::vector<std::string> names;
  for (const auto& [k, v] : env) names.push_back(k);
  const auto unknown = apply_env_overrides(c, get, names);
  CHECK(c.train.epochs == 6);
  CHECK(c.train.batch_size == 2);
  CHECK(c.seed == 3);
  CHECK(c.removed_electrodes == std::vector<int>{2});
  CHECK(unknown == std::vector<std::string>{"EMGVOICE_TRAIN_EPOHCS"});

  env = {{"EMGVOICE_TRAIN_EPOCHS", "x"}};
  CHECK_THROWS_AS(apply_env_overrides(c, get, {}), Error);
}

TEST_CASE("config json and hashes") {
  PipelineConfig a;
  const auto j = to_json(a);
  CHECK(j.at("train").at("epochs") == a.train.epochs);
  CHECK(j.contains("seed"));
  for (const auto& k : config_keys()) {
    if (k.ends_with(".preset")) continue;
    const auto dot = k.find('.');
    CHECK_MESSAGE((dot == std::string::npos ? j.contains(k) : j.at(k.substr(0, dot)).contains(k.substr(dot + 1))), k);
  }

  PipelineConfig b = a;
  b.train.epochs += 1;
  CHECK(section_hash(a, {"train"}) != section_hash(b, {"train"}));
  CHECK(section_hash(a, {"filter"}) == section_hash(b, {"filter"}));
  CHECK(section_hash(a, {"filter"}, 1) != section_hash(a, {"filter"}, 2));
  CHECK(section_hash(a, {"seed", "train"}) == section_hash(a, {"seed", "train"}));
  CHECK_THROWS_AS(section_hash(a, {"nope"}), Error);
  CHECK_THROWS_AS(section_hash(a, {"train.nope"}), Error);
  CHECK(section_hash(a, {"train.decay"}) == section_hash(b, {"train.decay"}));
  CHECK(section_hash(a, {"train.epochs"}) != section_hash(b, {"train.epochs"}));
  CHECK(hex_hash(0xabcULL) == "0000000000000abc");
}
