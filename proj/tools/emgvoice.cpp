#include "emgvoice/config.hpp"
#include "emgvoice/error.hpp"
#include "emgvoice/pipeline.hpp"
#include "emgvoice/synthetic.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

using namespace emgvoice;

namespace {

enum Exit { kOk = 0, kOther = 1, kUsage = 2, kConfig = 3, kData = 4, kNumeric = 5 };

void log_line(const std::string& level, const std::string& rest) { std::cerr << "level=" << level << " " << rest << "\n"; }

struct Common {
  std::string config;
  std::string corpus;
  std::string work;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::vector<std::string> sets;
  bool force = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "Config file (key = value format, see docs/config.md)");
  app->add_option("--corpus", c.corpus, "Corpus directory or manifest.json");
  app->add_option("--work", c.work, "Work directory for stage artifacts");
  app->add_option("--seed", c.seed, "Random seed");
  app->add_option("-j,--workers", c.workers, "Worker threads for per-utterance stages (0 = all cores)");
  app->add_option("--set", c.sets, "Override one key, e.g. --set train.epochs=5 (repeatable)");
  app->add_flag("--force", c.force, "Recompute the stage even if cached artifacts exist");
}

PipelineConfig resolve(const Common& c) {
  PipelineConfig cfg;
  if (!c.config.empty()) cfg = load_config(c.config);
  for (const auto& name : apply_env_overrides(cfg)) log_line("warn", "event=unknown_env name=" + name);
  if (!c.corpus.empty()) cfg.corpus = c.corpus;
  if (!c.work.empty()) cfg.work = c.work;
  if (c.seed) cfg.seed = *c.seed;
  if (c.workers) cfg.workers = *c.workers;
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw config_error("--set expects key=value, got " + s);
    apply_config(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

StageLogger stage_logger() {
  return {[](const std::string& line) { log_line(line.find("event=warning") != std::string::npos ? "warn" : "info", line); }};
}

std::vector<std::vector<int>> parse_removals(const std::vector<std::string>& specs) {
  std::vector<std::vector<int>> out;
  for (const auto& s : specs) {
    std::vector<int> r;
    if (s != "none") {
      std::stringstream ss(s);
      std::string item;
      while (std::getline(ss, item, ',')) {
        try {
          std::size_t used = 0;
          r.push_back(std::stoi(item, &used));
          if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
          throw config_error("bad electrode list " + s + " (expected e.g. 4 or 2,4 or none)");
        }
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EMG-to-speech toolkit: preprocess, featurize, align, train, synthesize and evaluate."};
  app.require_subcommand(1);

  Common common;
  SyntheticConfig synth;
  std::string synth_out;
  auto* make = app.add_subcommand("make-synthetic-corpus", "Write a toy parallel corpus with known time warps");
  make->add_option("-o,--out", synth_out, "Output directory")->required();
  make->add_option("--utterances", synth.pairs, "Number of silent/vocalized pairs")->capture_default_str();
  make->add_option("--nonparallel", synth.nonparallel, "Extra vocalized-only utterances")->capture_default_str();
  make->add_option("--sessions", synth.sessions, "Recording sessions")->capture_default_str();
  make->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  make->add_option("--min-seconds", synth.min_seconds, "Shortest utterance")->capture_default_str();
  make->add_option("--max-seconds", synth.max_seconds, "Longest utterance")->capture_default_str();

  auto* pre = app.add_subcommand("preprocess", "Filter EMG and clean audio");
  auto* feat = app.add_subcommand("featurize", "Compute EMG features and MFCCs");
  auto* align = app.add_subcommand("align", "Split the corpus, fit normalizers and CCA, align parallel pairs");
  auto* train = app.add_subcommand("train", "Train the EMG transducer or the WaveNet vocoder");
  auto* synthesize = app.add_subcommand("synthesize", "Predict features and waveforms for the test split");
  auto* evaluate = app.add_subcommand("evaluate", "Transcribe synthesized audio and score WER");
  auto* ablate = app.add_subcommand("ablate", "Sweep data fraction or removed electrodes and tabulate WER");
  for (auto* s : {pre, feat, align, train, synthesize, evaluate, ablate}) add_common(s, common);

  std::optional<double> fraction;
  std::string model = "transducer";
  train->add_option("--data-fraction", fraction, "Share of the training pool to use, in (0, 1]");
  train->add_option("--model", model, "transducer or wavenet")
      ->check(CLI::IsMember({"transducer", "wavenet"}))
      ->capture_default_str();
  std::string vocoder;
  synthesize->add_option("--vocoder", vocoder, "griffin-lim or wavenet")->check(CLI::IsMember({"griffin-lim", "wavenet"}));
  std::string provider, provider_arg;
  for (auto* s : {evaluate, ablate}) {
    s->add_option("--provider", provider, "echo, empty, file or http");
    s->add_option("--provider-arg", provider_arg, "Transcript file for the file provider, URL for http");
  }
  std::vector<double> fractions;
  std::vector<std::string> removals;
  std::string ablate_out;
  auto* fr = ablate->add_option("--fractions", fractions, "Data fractions to sweep (default 0.1 ... 1.0)")
                 ->delimiter(',');
  ablate->add_option("--electrodes", removals, "Electrode sets to remove, e.g. none 4 2,4")->excludes(fr);
  ablate->add_option("--out", ablate_out, "Also write the rows as JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (make->parsed()) {
      const auto warps = make_synthetic_corpus(synth_out, synth);
      log_line("info", "stage=make-synthetic-corpus event=done pairs=" + std::to_string(warps.size()) +
                           " dir=" + synth_out);
      std::cout << synth_out << "\n";
      return kOk;
    }

    if (train->parsed() && fraction) common.sets.push_back("train.data_fraction=" + std::to_string(*fraction));
    if (synthesize->parsed() && !vocoder.empty()) common.sets.push_back("vocoder.kind=\"" + vocoder + "\"");
    if (!provider.empty()) common.sets.push_back("eval.provider=\"" + provider + "\"");
    if (!provider_arg.empty()) {
      nlohmann::json quoted = provider_arg;
      common.sets.push_back("eval.provider_arg=" + quoted.dump());
    }
    const PipelineConfig cfg = resolve(common);

    if (ablate->parsed()) {
      std::vector<AblationRow> rows;
      std::string column;
      if (!removals.empty()) {
        rows = ablate_electrodes(cfg, parse_removals(removals), common.force, stage_logger());
        column = "removed";
      } else {
        if (fractions.empty()) fractions = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
        rows = ablate_data_fraction(cfg, fractions, common.force, stage_logger());
        column = "fraction";
      }
      std::cout << ablation_table(column, rows);
      if (!ablate_out.empty()) std::ofstream(ablate_out) << to_json(rows).dump(1) << "\n";
      return kOk;
    }

    Workspace ws(cfg, common.force, stage_logger());
    StageInfo info;
    if (pre->parsed()) info = ws.preprocess();
    else if (feat->parsed()) info = ws.featurize();
    else if (align->parsed()) info = ws.align();
    else if (train->parsed()) info = model == "wavenet" ? ws.train_vocoder() : ws.train();
    else if (synthesize->parsed()) info = ws.synthesize();
    else if (evaluate->parsed()) {
      info = ws.evaluate();
      std::cout << ws.report().table();
    }
    std::cout << info.dir.string() << "\n";
    return kOk;
  } catch (const Error& e) {
    const char* kind = e.kind() == ErrorKind::config ? "config" : e.kind() == ErrorKind::data ? "data" : "numeric";
    nlohmann::json msg = std::string(e.what());
    log_line("error", std::string("kind=") + kind + " msg=" + msg.dump());
    return e.kind() == ErrorKind::config ? kConfig : e.kind() == ErrorKind::data ? kData : kNumeric;
  } catch (const std::exception& e) {
    nlohmann::json msg = std::string(e.what());
    log_line("error", "kind=internal msg=" + msg.dump());
    return kOther;
  }
}
