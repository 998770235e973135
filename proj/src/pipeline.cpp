#include "emgvoice/pipeline.hpp"

#include "emgvoice/checkpoint.hpp"
#include "emgvoice/error.hpp"
#include "emgvoice/hash.hpp"
#include "emgvoice/io.hpp"
#include "emgvoice/nn.hpp"
#include "emgvoice/signals.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace emgvoice {

using nlohmann::json;

namespace {

Utterance featurize_input(const Utterance& raw, const PipelineConfig& cfg) {
  return mask_electrodes(raw, cfg.electrode_mask());
}

UtteranceFeatures features_from_clean(const Utterance& u, const Eigen::MatrixXd& emg,
                                      const std::optional<Eigen::VectorXd>& audio, const PipelineConfig& cfg) {
  UtteranceFeatures out;
  out.id = u.id;
  out.emg = emg_features(emg, cfg.emg_frames());
  if (u.mode == Mode::vocalized) {
    if (!audio) throw data_error("vocalized utterance " + u.id + " has no audio");
    FeatureSequence mfcc = mfcc_features(*audio, cfg.audio_frames());
    match_lengths(out.emg, mfcc);
    if (out.emg.frames() == 0) throw data_error("utterance " + u.id + " is too short to featurize");
    out.audio = std::move(mfcc);
  }
  if (out.emg.frames() == 0) throw data_error("utterance " + u.id + " is too short to featurize");
  return out;
}

AudioResult clean_audio(const Eigen::VectorXd& audio, const PipelineConfig& cfg) {
  if (cfg.gate_audio) return preprocess_audio(audio);
  const GateConfig g;
  const double peak = peak_rms(audio, static_cast<int>(g.rms_window_seconds * g.sample_rate));
  if (peak <= 0) return {audio, true};
  return {audio * (g.target_peak_rms / peak), false};
}

}  // namespace

UtteranceFeatures featurize_utterance(const Utterance& raw, const PipelineConfig& cfg) {
  const Utterance u = featurize_input(raw, cfg);
  const Eigen::MatrixXd emg = preprocess_emg(u.emg, cfg.filter);
  std::optional<Eigen::VectorXd> audio;
  bool warning = false;
  if (u.mode == Mode::vocalized && u.audio) {
    auto r = clean_audio(*u.audio, cfg);
    audio = std::move(r.samples);
    warning = r.warning;
  }
  auto out = features_from_clean(u, emg, audio, cfg);
  out.audio_warning = warning;
  return out;
}

std::vector<SessionKey> training_keys(const CorpusManifest& split) {
  std::set<SessionKey> keys;
  for (const auto& id : split.ids_in(Split::train)) {
    const auto& r = split.record(id);
    keys.insert({r.session_id, r.mode});
  }
  return {keys.begin(), keys.end()};
}

namespace {

const UtteranceFeatures& lookup(const FeatureTable& feats, const std::string& id) {
  const auto it = feats.find(id);
  if (it == feats.end()) throw data_error("no features for utterance " + id);
  return it->second;
}

FeatureSequence normalized(const Normalizer& n, const FeatureSequence& s) {
  FeatureSequence out = n.apply(s);
  out.kind = s.kind;
  return out;
}

// (silent, vocalized) ids of the parallel pairs whose silent member is in
// the given split.
std::vector<std::pair<std::string, std::string>> pairs_in(const CorpusManifest& split, Split which) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& id : split.ids_in(which)) {
    const auto& r = split.record(id);
    if (r.mode != Mode::silent) continue;
    if (auto cp = split.counterpart(id)) out.emplace_back(id, *cp);
  }
  return out;
}

}  // namespace

AlignmentArtifacts compute_alignments(const CorpusManifest& split, const FeatureTable& feats,
                                      const PipelineConfig& cfg) {
  cfg.align.validate();
  AlignmentArtifacts art;
  std::vector<FeatureSequence> emg_fit, audio_fit;
  for (const auto& id : split.ids_in(Split::train)) {
    const auto& f = lookup(feats, id);
    emg_fit.push_back(f.emg);
    if (f.audio) audio_fit.push_back(*f.audio);
  }
  if (emg_fit.empty()) throw data_error("training split is empty");
  if (audio_fit.empty()) throw data_error("training split has no vocalized audio");
  art.emg_norm = Normalizer::fit(emg_fit);
  art.audio_norm = Normalizer::fit(audio_fit);

  const auto train_pairs = pairs_in(split, Split::train);
  if (train_pairs.empty()) throw data_error("no parallel training pairs to fit the CCA projection");
  std::vector<AlignmentPath> emg_paths(train_pairs.size());
  nn::parallel_for(train_pairs.size(), cfg.workers, [&](std::size_t k) {
    const auto s = normalized(art.emg_norm, lookup(feats, train_pairs[k].first).emg);
    const auto v = normalized(art.emg_norm, lookup(feats, train_pairs[k].second).emg);
    emg_paths[k] = dtw(emg_cost(s, v));
  });
  Eigen::Index rows = 0;
  for (const auto& p : emg_paths) rows += static_cast<Eigen::Index>(p.mapping.size());
  const Eigen::Index dim = art.emg_norm.dim();
  Eigen::MatrixXd xs(rows, dim), xv(rows, dim);
  Eigen::Index at = 0;
  for (std::size_t k = 0; k < train_pairs.size(); ++k) {
    const auto s = normalized(art.emg_norm, lookup(feats, train_pairs[k].first).emg);
    const auto v = normalized(art.emg_norm, lookup(feats, train_pairs[k].second).emg);
    auto [a, b] = aligned_pairs(s, v, emg_paths[k].mapping);
    xs.middleRows(at, a.rows()) = a;
    xv.middleRows(at, b.rows()) = b;
    at += a.rows();
    art.emg_paths[train_pairs[k].first] = {train_pairs[k].first, CostType::emg, 0.0, emg_paths[k]};
  }
  art.cca = fit_cca(xs, xv, std::min<int>(cfg.align.cca_dims, static_cast<int>(dim)));

  auto all = train_pairs;
  const auto val = pairs_in(split, Split::val);
  all.insert(all.end(), val.begin(), val.end());
  std::vector<AlignmentPath> cca_paths(all.size());
  nn::parallel_for(all.size(), cfg.workers, [&](std::size_t k) {
    const auto s = normalized(art.emg_norm, lookup(feats, all[k].first).emg);
    const auto v = normalized(art.emg_norm, lookup(feats, all[k].second).emg);
    cca_paths[k] = dtw(cca_cost(s, v, art.cca));
  });
  for (std::size_t k = 0; k < all.size(); ++k)
    art.cca_paths[all[k].first] = {all[k].first, CostType::cca, 0.0, cca_paths[k]};
  return art;
}

TrainingData make_training_data(const CorpusManifest& split, const FeatureTable& feats,
                                const AlignmentArtifacts& art) {
  TrainingData data;
  data.cca = art.cca;
  auto make_pair = [&](const std::string& sid, const std::string& vid) {
    const auto& s = lookup(feats, sid);
    const auto& v = lookup(feats, vid);
    if (!v.audio) throw data_error("vocalized counterpart " + vid + " has no audio features");
    const auto& sr = split.record(sid);
    const auto& vr = split.record(vid);
    return ParallelExample{sid,
                           vid,
                           normalized(art.emg_norm, s.emg),
                           normalized(art.emg_norm, v.emg),
                           normalized(art.audio_norm, *v.audio),
                           {sr.session_id, Mode::silent},
                           {vr.session_id, Mode::vocalized}};
  };
  for (const auto& [sid, vid] : pairs_in(split, Split::train)) data.train_pairs.push_back(make_pair(sid, vid));
  for (const auto& [sid, vid] : pairs_in(split, Split::val)) data.val_pairs.push_back(make_pair(sid, vid));
  for (const auto& id : split.ids_in(Split::train)) {
    const auto& r = split.record(id);
    if (r.mode != Mode::vocalized || split.counterpart(id)) continue;
    const auto& f = lookup(feats, id);
    if (!f.audio) throw data_error("vocalized utterance " + id + " has no audio features");
    data.nonparallel.push_back(
        {id, normalized(art.emg_norm, f.emg), normalized(art.audio_norm, *f.audio), {r.session_id, Mode::vocalized}});
  }
  return data;
}

FeatureSequence predict_mfcc(const TransducerModel& model, const UtteranceFeatures& feats, const SessionKey& key) {
  if (model.input_norm.dim() != model.emg_dim() || model.target_norm.dim() != model.config().output_dim)
    throw config_error("transducer normalizers are not fitted");
  const FeatureSequence out = forward(model, normalized(model.input_norm, feats.emg), key);
  FeatureSequence raw = model.target_norm.invert(out);
  raw.kind = FeatureKind::mfcc;
  raw.normalized = false;
  return raw;
}

double mean_frame_error(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size() || a.empty()) throw data_error("mappings differ in length");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

// ----- stages ---------------------------------------------------------------

const char* to_string(Stage s) {
  switch (s) {
    case Stage::preprocess: return "preprocess";
    case Stage::featurize: return "featurize";
    case Stage::align: return "align";
    case Stage::train: return "train";
    case Stage::train_vocoder: return "train-vocoder";
    case Stage::synthesize: return "synthesize";
    case Stage::evaluate: return "evaluate";
  }
  return "unknown";
}

void StageLogger::operator()(const std::string& stage, const std::string& event,
                             const std::vector<std::pair<std::string, std::string>>& fields) const {
  if (!sink) return;
  std::string line = "stage=" + stage + " event=" + event;
  for (const auto& [k, v] : fields) {
    const bool quote = v.find_first_of(" \t\"=") != std::string::npos || v.empty();
    line += " " + k + "=" + (quote ? json(v).dump() : v);
  }
  sink(line);
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw data_error("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw data_error("malformed " + p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p);
  out << j.dump(1) << "\n";
  if (!out) throw data_error("cannot write " + p.string());
}

std::uint64_t file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw data_error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return fnv1a(ss.str());
}

fs::path manifest_file(const fs::path& corpus) {
  return fs::is_directory(corpus) ? corpus / "manifest.json" : corpus;
}

std::uint64_t combine(std::uint64_t a, std::uint64_t b) {
  Fnv1a h;
  h.add(a);
  h.add(b);
  return h.value();
}

void save_features(const fs::path& dir, const UtteranceFeatures& f, std::uint64_t provenance) {
  write_feature_file(dir / (f.id + ".emg.fea"), {f.emg.data, FeatureKind::emg, false, provenance});
  if (f.audio) write_feature_file(dir / (f.id + ".mfcc.fea"), {f.audio->data, FeatureKind::mfcc, false, provenance});
}

UtteranceFeatures load_features(const fs::path& dir, const std::string& id, std::uint64_t provenance) {
  UtteranceFeatures f;
  f.id = id;
  auto check = [&](const FeatureFile& ff, const fs::path& p) {
    if (ff.provenance != provenance)
      throw data_error(p.string() + " was produced by a different configuration (hash " + hex_hash(ff.provenance) + ")");
  };
  const fs::path ep = dir / (id + ".emg.fea");
  const FeatureFile e = read_feature_file(ep);
  check(e, ep);
  f.emg = {e.data, FeatureKind::emg, false};
  const fs::path ap = dir / (id + ".mfcc.fea");
  if (fs::exists(ap)) {
    const FeatureFile a = read_feature_file(ap);
    check(a, ap);
    f.audio = FeatureSequence{a.data, FeatureKind::mfcc, false};
  }
  return f;
}

std::map<std::string, AlignmentRecord> read_alignments(const fs::path& dir) {
  std::map<std::string, AlignmentRecord> out;
  if (!fs::exists(dir)) return out;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    auto rec = alignment_from_json(read_json(p));
    out[rec.utterance_id] = std::move(rec);
  }
  return out;
}

void write_alignments(const fs::path& dir, const std::map<std::string, AlignmentRecord>& recs) {
  fs::create_directories(dir);
  for (const auto& [id, rec] : recs) write_json(dir / (id + ".json"), to_json(rec));
}

}  // namespace

Workspace::Workspace(PipelineConfig cfg, bool force, StageLogger log)
    : cfg_(std::move(cfg)), force_(force), log_(std::move(log)) {
  cfg_.validate();
  if (cfg_.corpus.empty()) throw config_error("no corpus path configured");
  if (cfg_.work.empty()) throw config_error("no work directory configured");
}

std::uint64_t Workspace::hash(Stage s) const {
  switch (s) {
    case Stage::preprocess:
      return section_hash(cfg_, {"filter"}, file_hash(manifest_file(cfg_.corpus)));
    case Stage::featurize:
      return section_hash(cfg_, {"frames", "electrodes"}, hash(Stage::preprocess));
    case Stage::align:
      return section_hash(cfg_, {"seed", "split", "align"}, hash(Stage::featurize));
    case Stage::train:
      return section_hash(cfg_, {"seed", "transducer", "train"}, hash(Stage::align));
    case Stage::train_vocoder:
      return section_hash(cfg_,
                          {"seed", "vocoder.layers", "vocoder.max_dilation", "vocoder.residual", "vocoder.skip",
                           "vocoder.output_hidden", "vocoder.cond_channels", "vocoder.cond_hidden", "vocoder.steps",
                           "vocoder.learning_rate", "vocoder.segment_frames"},
                          hash(Stage::align));
    case Stage::synthesize: {
      std::uint64_t up = hash(Stage::train);
      if (cfg_.vocoder.kind == "wavenet") {
        up = combine(up, hash(Stage::train_vocoder));
        return section_hash(cfg_, {"seed", "vocoder.kind", "vocoder.temperature"}, up);
      }
      return section_hash(cfg_, {"seed", "vocoder.kind", "vocoder.gl_iterations"}, up);
    }
    case Stage::evaluate:
      return section_hash(cfg_, {"eval"}, hash(Stage::synthesize));
  }
  throw config_error("unknown stage");
}

fs::path Workspace::dir(Stage s) const { return fs::path(cfg_.work) / to_string(s) / hex_hash(hash(s)); }

void Workspace::require(Stage s) const {
  const fs::path marker = dir(s) / "stage.json";
  if (!fs::exists(marker))
    throw data_error(std::string("no ") + to_string(s) + " artifacts for this configuration (hash " +
                     hex_hash(hash(s)) + "); run `emgvoice " +
                     (s == Stage::train_vocoder ? std::string("train --model wavenet") : to_string(s)) + "` first");
  const json j = read_json(marker);
  if (j.value("hash", std::string()) != hex_hash(hash(s)))
    throw data_error(marker.string() + " does not match the current configuration");
}

bool Workspace::begin(Stage s, StageInfo& info) {
  info.stage = s;
  info.hash = hash(s);
  info.dir = dir(s);
  if (!force_ && fs::exists(info.dir / "stage.json")) {
    info.cached = true;
    log_(to_string(s), "cached", {{"hash", hex_hash(info.hash)}});
    return false;
  }
  fs::remove_all(info.dir);
  fs::create_directories(info.dir);
  log_(to_string(s), "start", {{"hash", hex_hash(info.hash)}, {"dir", info.dir.string()}});
  return true;
}

void Workspace::finish(Stage s, const StageInfo& info, json extra) {
  json j = extra.is_object() ? std::move(extra) : json::object();
  j["stage"] = to_string(s);
  j["hash"] = hex_hash(info.hash);
  j["config"] = to_json(cfg_);
  j["config"].erase("work");
  j["config"].erase("workers");
  write_json(info.dir / "stage.json", j);
  log_(to_string(s), "done", {{"hash", hex_hash(info.hash)}});
}

StageInfo Workspace::preprocess() {
  StageInfo info;
  if (!begin(Stage::preprocess, info)) return info;
  const CorpusManifest manifest = load_manifest(cfg_.corpus);
  std::vector<UtteranceRecord> records(manifest.utterances().begin(), manifest.utterances().end());
  std::vector<std::string> warnings(records.size());
  nn::parallel_for(records.size(), cfg_.workers, [&](std::size_t i) {
    auto& r = records[i];
    const Utterance u = load_utterance(manifest, r.id);
    const fs::path sub = fs::path(r.session_id);
    fs::create_directories(info.dir / sub);
    const Eigen::MatrixXd emg = preprocess_emg(u.emg, cfg_.filter);
    r.emg_path = (sub / (r.id + ".emg")).string();
    write_emg(info.dir / r.emg_path, {emg, kEmgSampleRate});
    if (r.mode == Mode::vocalized) {
      if (!u.audio) throw data_error("vocalized utterance " + r.id + " has no audio");
      const AudioResult a = clean_audio(*u.audio, cfg_);
      if (a.warning) warnings[i] = r.id;
      r.audio_path = (sub / (r.id + ".wav")).string();
      write_wav(info.dir / *r.audio_path, {a.samples, kAudioSampleRate});
    } else {
      r.audio_path.reset();
    }
  });
  for (const auto& w : warnings)
    if (!w.empty()) log_("preprocess", "warning", {{"utterance", w}, {"message", "silent audio left unchanged"}});
  save_manifest(CorpusManifest(info.dir, manifest.domain(), records), info.dir / "manifest.json");
  log_("preprocess", "utterances", {{"count", std::to_string(records.size())}});
  finish(Stage::preprocess, info, {{"utterances", records.size()}});
  return info;
}

StageInfo Workspace::featurize() {
  require(Stage::preprocess);
  StageInfo info;
  if (!begin(Stage::featurize, info)) return info;
  const CorpusManifest manifest = load_manifest(dir(Stage::preprocess) / "manifest.json");
  const auto& recs = manifest.utterances();
  std::vector<int> dims(recs.size());
  nn::parallel_for(recs.size(), cfg_.workers, [&](std::size_t i) {
    const Utterance u = featurize_input(load_utterance(manifest, recs[i].id), cfg_);
    const auto f = features_from_clean(u, u.emg, u.audio, cfg_);
    dims[i] = static_cast<int>(f.emg.dim());
    save_features(info.dir, f, info.hash);
  });
  const int dim = dims.empty() ? kEmgFeaturesPerChannel * cfg_.electrode_mask().count() : dims.front();
  log_("featurize", "features", {{"utterances", std::to_string(recs.size())}, {"emg_dim", std::to_string(dim)}});
  finish(Stage::featurize, info, {{"utterances", recs.size()}, {"emg_dim", dim}});
  return info;
}

CorpusManifest Workspace::split_manifest() const {
  require(Stage::align);
  const CorpusManifest base = load_manifest(dir(Stage::preprocess) / "manifest.json");
  const json j = read_json(dir(Stage::align) / "splits.json");
  std::map<std::string, Split> splits;
  for (const auto& [id, s] : j.items()) {
    const std::string v = s.get<std::string>();
    splits[id] = v == "train" ? Split::train : v == "val" ? Split::val : Split::test;
  }
  return CorpusManifest(base.root(), base.domain(), base.utterances(), std::move(splits));
}

FeatureTable Workspace::features() const {
  require(Stage::featurize);
  const CorpusManifest base = load_manifest(dir(Stage::preprocess) / "manifest.json");
  FeatureTable out;
  for (const auto& r : base.utterances())
    out.emplace(r.id, load_features(dir(Stage::featurize), r.id, hash(Stage::featurize)));
  return out;
}

StageInfo Workspace::align() {
  require(Stage::featurize);
  StageInfo info;
  if (!begin(Stage::align, info)) return info;
  const CorpusManifest base = load_manifest(dir(Stage::preprocess) / "manifest.json");
  const CorpusManifest split =
      make_splits(base, cfg_.seed, cfg_.split.n_val, cfg_.split.n_test);
  json splits = json::object();
  for (const auto& [id, s] : split.splits()) splits[id] = to_string(s);
  write_json(info.dir / "splits.json", splits);

  const FeatureTable feats = features();
  const AlignmentArtifacts art = compute_alignments(split, feats, cfg_);
  write_json(info.dir / "normalizers.json", {{"emg", to_json(art.emg_norm)}, {"audio", to_json(art.audio_norm)}});
  write_json(info.dir / "cca.json", to_json(art.cca));
  write_alignments(info.dir / "alignments" / "emg", art.emg_paths);
  write_alignments(info.dir / "alignments" / "cca", art.cca_paths);
  log_("align", "splits",
       {{"train", std::to_string(split.ids_in(Split::train).size())},
        {"val", std::to_string(split.ids_in(Split::val).size())},
        {"test", std::to_string(split.ids_in(Split::test).size())},
        {"cca_top", fmt(art.cca.correlations.size() ? art.cca.correlations(0) : 0.0)}});
  finish(Stage::align, info,
         {{"train", split.ids_in(Split::train).size()},
          {"val", split.ids_in(Split::val).size()},
          {"test", split.ids_in(Split::test).size()}});
  return info;
}

namespace {

AlignmentArtifacts load_alignment_artifacts(const fs::path& dir) {
  AlignmentArtifacts art;
  const json n = read_json(dir / "normalizers.json");
  art.emg_norm = normalizer_from_json(n.at("emg"));
  art.audio_norm = normalizer_from_json(n.at("audio"));
  art.cca = cca_from_json(read_json(dir / "cca.json"));
  art.emg_paths = read_alignments(dir / "alignments" / "emg");
  art.cca_paths = read_alignments(dir / "alignments" / "cca");
  return art;
}

}  // namespace

StageInfo Workspace::train() {
  require(Stage::align);
  StageInfo info;
  if (!begin(Stage::train, info)) return info;
  // Held-out sets do not depend on the fraction; only the training pool
  // shrinks.
  const CorpusManifest base = load_manifest(dir(Stage::preprocess) / "manifest.json");
  const CorpusManifest split = make_splits(base, cfg_.seed, cfg_.split.n_val, cfg_.split.n_test, cfg_.data_fraction);
  if (split.ids_in(Split::val) != split_manifest().ids_in(Split::val))
    throw data_error("validation split differs from the align stage");
  const FeatureTable feats = features();
  const AlignmentArtifacts art = load_alignment_artifacts(dir(Stage::align));
  const TrainingData data = make_training_data(split, feats, art);

  const int emg_dim = static_cast<int>(art.emg_norm.dim());
  TransducerModel model = TransducerModel::init(emg_dim, training_keys(split), cfg_.seed, cfg_.transducer);
  model.input_norm = art.emg_norm;
  model.target_norm = art.audio_norm;
  TrainConfig tc = cfg_.train;
  tc.seed = cfg_.seed;
  tc.workers = cfg_.workers;

  const std::size_t train_utts = split.ids_in(Split::train).size();
  log_("train", "data",
       {{"train_utterances", std::to_string(train_utts)},
        {"parallel_pairs", std::to_string(data.train_pairs.size())},
        {"nonparallel", std::to_string(data.nonparallel.size())},
        {"val_pairs", std::to_string(data.val_pairs.size())},
        {"data_fraction", fmt(cfg_.data_fraction)}});

  std::ofstream epochs(info.dir / "epochs.jsonl");
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochLog& e) {
    epochs << to_json(e).dump() << "\n";
    log_("train", "epoch",
         {{"epoch", std::to_string(e.epoch)},
          {"train_loss", fmt(e.train_loss)},
          {"val_loss", fmt(e.val_loss)},
          {"rate", fmt(e.rate)},
          {"realigned", e.realigned ? "true" : "false"}});
  };
  hooks.warn = [&](const std::string& m) { log_("train", "warning", {{"message", m}}); };
  const TrainResult result = train_transducer(std::move(model), data, tc, cfg_.align, hooks);
  epochs.close();

  write_checkpoint(info.dir / "transducer.ckpt",
                   to_checkpoint(result.model, {{"config_hash", hex_hash(info.hash)}, {"config", to_json(cfg_)}}));
  std::vector<int> realigned;
  for (const auto& e : result.log)
    if (e.realigned) realigned.push_back(e.epoch);
  if (!result.alignments.empty()) {
    std::map<std::string, AlignmentRecord> last;
    const auto& snap = result.alignments.back();
    for (const auto& [id, p] : snap.paths) last[id] = {id, snap.cost, snap.cost == CostType::full ? cfg_.align.lambda : 0.0, p};
    write_alignments(info.dir / "alignments", last);
  }
  finish(Stage::train, info,
         {{"train_utterances", train_utts},
          {"parallel_pairs", data.train_pairs.size()},
          {"nonparallel", data.nonparallel.size()},
          {"val_pairs", data.val_pairs.size()},
          {"emg_dim", emg_dim},
          {"best_epoch", result.best_epoch},
          {"best_val_loss", result.best_val},
          {"first_val_loss", result.log.empty() ? 0.0 : result.log.front().val_loss},
          {"realigned_epochs", realigned}});
  return info;
}

json Workspace::train_summary() const {
  require(Stage::train);
  return read_json(dir(Stage::train) / "stage.json");
}

TransducerModel Workspace::transducer() const {
  require(Stage::train);
  return transducer_from_checkpoint(read_checkpoint(dir(Stage::train) / "transducer.ckpt", "transducer"));
}

StageInfo Workspace::train_vocoder() {
  require(Stage::align);
  StageInfo info;
  if (!begin(Stage::train_vocoder, info)) return info;
  const CorpusManifest split = split_manifest();
  const FeatureTable feats = features();
  const AlignmentArtifacts art = load_alignment_artifacts(dir(Stage::align));
  std::vector<AudioClip> clips;
  for (const auto& id : split.ids_in(Split::train)) {
    const auto& r = split.record(id);
    if (r.mode != Mode::vocalized) continue;
    const Utterance u = load_utterance(split, id);
    const auto& f = lookup(feats, id);
    clips.push_back({id, *f.audio, *u.audio});
  }
  if (clips.empty()) throw data_error("no vocalized training audio for the vocoder");
  WaveNetModel model = WaveNetModel::init(cfg_.vocoder.wavenet, cfg_.seed);
  model.feature_norm = art.audio_norm;
  WaveNetTrainConfig tc = cfg_.vocoder.wavenet_train;
  tc.seed = cfg_.seed;
  log_("train-vocoder", "data", {{"clips", std::to_string(clips.size())}, {"steps", std::to_string(tc.steps)}});
  const auto losses = train_wavenet(model, clips, tc);
  std::ofstream(info.dir / "losses.json") << json(losses).dump() << "\n";
  write_checkpoint(info.dir / "wavenet.ckpt", to_checkpoint(model, {{"config_hash", hex_hash(info.hash)}}));
  log_("train-vocoder", "loss", {{"first", fmt(losses.front())}, {"last", fmt(losses.back())}});
  finish(Stage::train_vocoder, info, {{"clips", clips.size()}, {"first_loss", losses.front()}, {"last_loss", losses.back()}});
  return info;
}

StageInfo Workspace::synthesize() {
  require(Stage::train);
  const bool wavenet = cfg_.vocoder.kind == "wavenet";
  if (wavenet) require(Stage::train_vocoder);
  StageInfo info;
  if (!begin(Stage::synthesize, info)) return info;
  const CorpusManifest split = split_manifest();
  const FeatureTable feats = features();
  const TransducerModel model = transducer();
  std::optional<WaveNetModel> vocoder;
  if (wavenet)
    vocoder = wavenet_from_checkpoint(read_checkpoint(dir(Stage::train_vocoder) / "wavenet.ckpt", "wavenet"));

  const auto ids = split.ids_in(Split::test);
  if (ids.empty()) throw data_error("test split is empty; nothing to synthesize");
  json items = json::array();
  for (const auto& id : ids) items.push_back({{"id", id}, {"text", split.record(id).text}, {"audio", id + ".wav"}});
  nn::parallel_for(ids.size(), wavenet ? 1 : cfg_.workers, [&](std::size_t i) {
    const auto& r = split.record(ids[i]);
    const FeatureSequence mfcc = predict_mfcc(model, lookup(feats, ids[i]), {r.session_id, Mode::silent});
    write_feature_file(info.dir / (ids[i] + ".mfcc.fea"), {mfcc.data, FeatureKind::mfcc, false, info.hash});
    Eigen::VectorXd audio;
    if (vocoder) {
      GenerateOptions opts;
      opts.seed = nn::mix_seed(cfg_.seed, i);
      opts.temperature = cfg_.vocoder.sample_temperature;
      audio = wavenet_generate(*vocoder, mfcc, opts);
    } else {
      GriffinLimConfig gl = cfg_.vocoder.griffin_lim;
      gl.seed = nn::mix_seed(cfg_.seed, i);
      audio = griffin_lim_invert(mfcc, gl);
    }
    write_wav(info.dir / (ids[i] + ".wav"), {audio.cwiseMax(-1.0).cwiseMin(1.0), kAudioSampleRate});
  });
  write_json(info.dir / "items.json", items);
  log_("synthesize", "outputs", {{"count", std::to_string(ids.size())}, {"vocoder", cfg_.vocoder.kind}});
  finish(Stage::synthesize, info, {{"outputs", ids.size()}, {"vocoder", cfg_.vocoder.kind}});
  return info;
}

StageInfo Workspace::evaluate() {
  require(Stage::synthesize);
  StageInfo info;
  if (!begin(Stage::evaluate, info)) return info;
  const fs::path sdir = dir(Stage::synthesize);
  std::vector<EvalItem> items;
  for (const auto& j : read_json(sdir / "items.json"))
    items.push_back({j.at("id").get<std::string>(), sdir / j.at("audio").get<std::string>(),
                     j.at("text").get<std::string>()});
  auto provider = make_provider(cfg_.eval.provider, cfg_.eval.provider_arg);
  const WerReport report = evaluate_corpus(items, *provider, {std::max(1, cfg_.workers), cfg_.eval.normalize});
  write_json(info.dir / "report.json", report.to_json());
  std::ofstream(info.dir / "report.txt") << report.table();
  for (const auto& u : report.utterances)
    if (u.provider_failed) log_("evaluate", "warning", {{"utterance", u.id}, {"message", u.failure}});
  log_("evaluate", "wer", {{"wer", fmt(report.wer())}, {"provider", report.provider}});
  finish(Stage::evaluate, info, {{"wer", report.wer()}});
  return info;
}

WerReport Workspace::report() const {
  require(Stage::evaluate);
  const json j = read_json(dir(Stage::evaluate) / "report.json");
  WerReport r;
  r.provider = j.at("provider").get<std::string>();
  for (const auto& u : j.at("utterances")) {
    WerEntry e;
    e.id = u.at("id");
    e.reference = u.at("reference");
    e.hypothesis = u.at("hypothesis");
    e.substitutions = u.at("substitutions");
    e.insertions = u.at("insertions");
    e.deletions = u.at("deletions");
    e.ref_length = u.at("ref_length");
    e.provider_failed = u.at("provider_failed");
    if (u.contains("failure")) e.failure = u.at("failure");
    r.utterances.push_back(std::move(e));
  }
  return r;
}

namespace {

AblationRow run_setting(const PipelineConfig& cfg, const std::string& label, bool force, const StageLogger& log) {
  Workspace ws(cfg, force, log);
  ws.preprocess();
  ws.featurize();
  ws.align();
  ws.train();
  if (cfg.vocoder.kind == "wavenet") ws.train_vocoder();
  ws.synthesize();
  ws.evaluate();
  const json s = ws.train_summary();
  return {label, s.at("train_utterances").get<std::size_t>(), s.at("emg_dim").get<int>(),
          s.at("best_val_loss").get<double>(), ws.report().wer()};
}

}  // namespace

std::vector<AblationRow> ablate_data_fraction(const PipelineConfig& base, const std::vector<double>& fractions,
                                              bool force, const StageLogger& log) {
  std::vector<AblationRow> rows;
  for (double f : fractions) {
    PipelineConfig cfg = base;
    cfg.data_fraction = f;
    rows.push_back(run_setting(cfg, fmt(f), force, log));
  }
  return rows;
}

std::vector<AblationRow> ablate_electrodes(const PipelineConfig& base, const std::vector<std::vector<int>>& removals,
                                           bool force, const StageLogger& log) {
  std::vector<AblationRow> rows;
  for (const auto& r : removals) {
    PipelineConfig cfg = base;
    cfg.removed_electrodes = r;
    std::string label = r.empty() ? "none" : "";
    for (std::size_t i = 0; i < r.size(); ++i) label += (i ? "," : "") + std::to_string(r[i]);
    rows.push_back(run_setting(cfg, label, force, log));
  }
  return rows;
}

std::string ablation_table(const std::string& column, const std::vector<AblationRow>& rows) {
  std::size_t w = column.size();
  for (const auto& r : rows) w = std::max(w, r.setting.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w)) << column << std::right << std::setw(8) << "train"
     << std::setw(8) << "emg_dim" << std::setw(12) << "val_loss" << std::setw(9) << "wer" << "\n";
  os << std::fixed;
  for (const auto& r : rows)
    os << std::left << std::setw(static_cast<int>(w)) << r.setting << std::right << std::setw(8) << r.train_utterances
       << std::setw(8) << r.emg_dim << std::setw(12) << std::setprecision(5) << r.best_val_loss << std::setw(9)
       << std::setprecision(4) << r.wer << "\n";
  return os.str();
}

json to_json(const std::vector<AblationRow>& rows) {
  json out = json::array();
  for (const auto& r : rows)
    out.push_back({{"setting", r.setting},
                   {"train_utterances", r.train_utterances},
                   {"emg_dim", r.emg_dim},
                   {"best_val_loss", r.best_val_loss},
                   {"wer", r.wer}});
  return out;
}

}  // namespace emgvoice
