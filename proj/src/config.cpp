#include "emgvoice/config.hpp"

#include "emgvoice/error.hpp"
#include "emgvoice/hash.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

extern char** environ;

namespace emgvoice {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool is_key_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'; }

class LineParser {
public:
  LineParser(std::string_view line, std::string where) : s_(line), where_(std::move(where)) {}

  [[noreturn]] void fail(const std::string& what) const { throw config_error(where_ + ": " + what); }

  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }
  bool at_end_or_comment() {
    skip_ws();
    return pos_ >= s_.size() || s_[pos_] == '#';
  }
  bool consume(char c) {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  std::string name() {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < s_.size() && is_key_char(s_[pos_])) ++pos_;
    if (pos_ == start) fail("expected a name");
    return std::string(s_.substr(start, pos_ - start));
  }

  std::string scalar() {
    skip_ws();
    if (pos_ >= s_.size()) fail("missing value");
    if (s_[pos_] == '"') {
      ++pos_;
      std::string out;
      while (pos_ < s_.size() && s_[pos_] != '"') {
        char c = s_[pos_++];
        if (c == '\\') {
          if (pos_ >= s_.size()) fail("unterminated escape");
          const char e = s_[pos_++];
          switch (e) {
            case 'n': c = '\n'; break;
            case 't': c = '\t'; break;
            case '"': c = '"'; break;
            case '\\': c = '\\'; break;
            default: fail(std::string("unknown escape \\") + e);
          }
        }
        out.push_back(c);
      }
      if (pos_ >= s_.size()) fail("unterminated string");
      ++pos_;
      return out;
    }
    const std::size_t start = pos_;
    while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != ']' && s_[pos_] != '#') ++pos_;
    std::string v = trim(s_.substr(start, pos_ - start));
    if (v.empty()) fail("missing value");
    return v;
  }

  ConfigValue value() {
    ConfigValue v;
    v.origin = where_;
    if (consume('[')) {
      v.is_array = true;
      if (consume(']')) return v;
      do {
        v.items.push_back(scalar());
      } while (consume(','));
      if (!consume(']')) fail("expected ',' or ']'");
      return v;
    }
    v.items.push_back(scalar());
    return v;
  }

private:
  std::string_view s_;
  std::string where_;
  std::size_t pos_ = 0;
};

// Type conversion of one value.
template <typename T>
T convert(const ConfigValue& v, const std::string& key);

const std::string& single(const ConfigValue& v, const std::string& key) {
  if (v.is_array || v.items.size() != 1) throw config_error(v.origin + ": " + key + " takes a single value");
  return v.items.front();
}

template <typename N>
N parse_number(const std::string& s, const ConfigValue& v, const std::string& key) {
  N out{};
  const auto* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end)
    throw config_error(v.origin + ": " + key + " expects a number, got '" + s + "'");
  return out;
}

template <>
int convert<int>(const ConfigValue& v, const std::string& key) {
  return parse_number<int>(single(v, key), v, key);
}
template <>
std::size_t convert<std::size_t>(const ConfigValue& v, const std::string& key) {
  return parse_number<std::size_t>(single(v, key), v, key);
}
template <>
double convert<double>(const ConfigValue& v, const std::string& key) {
  return parse_number<double>(single(v, key), v, key);
}
template <>
bool convert<bool>(const ConfigValue& v, const std::string& key) {
  const auto& s = single(v, key);
  if (s == "true") return true;
  if (s == "false") return false;
  throw config_error(v.origin + ": " + key + " expects true or false, got '" + s + "'");
}
template <>
std::string convert<std::string>(const ConfigValue& v, const std::string& key) {
  return single(v, key);
}
template <>
std::vector<int> convert<std::vector<int>>(const ConfigValue& v, const std::string& key) {
  std::vector<int> out;
  for (const auto& s : v.items) out.push_back(parse_number<int>(s, v, key));
  return out;
}
template <>
std::array<double, 3> convert<std::array<double, 3>>(const ConfigValue& v, const std::string& key) {
  if (v.items.size() != 3) throw config_error(v.origin + ": " + key + " expects three numbers");
  return {parse_number<double>(v.items[0], v, key), parse_number<double>(v.items[1], v, key),
          parse_number<double>(v.items[2], v, key)};
}

struct Field {
  std::string key;
  std::function<void(PipelineConfig&, const ConfigValue&)> set;
  std::function<json(const PipelineConfig&)> get;
};

template <typename Ref>
Field field(std::string key, Ref ref) {
  using T = std::remove_cvref_t<decltype(ref(std::declval<PipelineConfig&>()))>;
  return {key, [ref, key](PipelineConfig& c, const ConfigValue& v) { ref(c) = convert<T>(v, key); },
          [ref](const PipelineConfig& c) { return json(ref(const_cast<PipelineConfig&>(c))); }};
}

#define EMGV_FIELD(name, expr) field(name, [](PipelineConfig& c) -> auto& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f{
        EMGV_FIELD("seed", c.seed),
        EMGV_FIELD("workers", c.workers),
        EMGV_FIELD("corpus", c.corpus),
        EMGV_FIELD("work", c.work),
        EMGV_FIELD("filter.highpass_hz", c.filter.highpass_hz),
        EMGV_FIELD("filter.highpass_order", c.filter.highpass_order),
        EMGV_FIELD("filter.notch_hz", c.filter.notch_hz),
        EMGV_FIELD("filter.notch_q", c.filter.notch_q),
        EMGV_FIELD("filter.gate_audio", c.gate_audio),
        EMGV_FIELD("frames.frame_ms", c.frame_ms),
        EMGV_FIELD("frames.hop_ms", c.hop_ms),
        EMGV_FIELD("split.n_val", c.split.n_val),
        EMGV_FIELD("split.n_test", c.split.n_test),
        EMGV_FIELD("electrodes.remove", c.removed_electrodes),
        EMGV_FIELD("align.lambda", c.align.lambda),
        EMGV_FIELD("align.cca_dims", c.align.cca_dims),
        EMGV_FIELD("align.realign_period", c.align.realign_period),
        EMGV_FIELD("align.warmup_epochs", c.align.warmup_epochs),
        EMGV_FIELD("transducer.hidden", c.transducer.hidden),
        EMGV_FIELD("transducer.layers", c.transducer.layers),
        EMGV_FIELD("transducer.embed_dim", c.transducer.embed_dim),
        EMGV_FIELD("transducer.dropout", c.transducer.dropout),
        EMGV_FIELD("train.learning_rate", c.train.learning_rate),
        EMGV_FIELD("train.decay", c.train.decay),
        EMGV_FIELD("train.patience", c.train.patience),
        EMGV_FIELD("train.epochs", c.train.epochs),
        EMGV_FIELD("train.batch_size", c.train.batch_size),
        EMGV_FIELD("train.clip_norm", c.train.clip_norm),
        EMGV_FIELD("train.source_weights", c.train.source_weights),
        EMGV_FIELD("train.validate_on_current_targets", c.train.validate_on_current_targets),
        EMGV_FIELD("train.data_fraction", c.data_fraction),
        EMGV_FIELD("vocoder.kind", c.vocoder.kind),
        EMGV_FIELD("vocoder.layers", c.vocoder.wavenet.layers),
        EMGV_FIELD("vocoder.max_dilation", c.vocoder.wavenet.max_dilation),
        EMGV_FIELD("vocoder.residual", c.vocoder.wavenet.residual),
        EMGV_FIELD("vocoder.skip", c.vocoder.wavenet.skip),
        EMGV_FIELD("vocoder.output_hidden", c.vocoder.wavenet.output_hidden),
        EMGV_FIELD("vocoder.cond_channels", c.vocoder.wavenet.cond_channels),
        EMGV_FIELD("vocoder.cond_hidden", c.vocoder.wavenet.cond_hidden),
        EMGV_FIELD("vocoder.steps", c.vocoder.wavenet_train.steps),
        EMGV_FIELD("vocoder.learning_rate", c.vocoder.wavenet_train.learning_rate),
        EMGV_FIELD("vocoder.segment_frames", c.vocoder.wavenet_train.segment_frames),
        EMGV_FIELD("vocoder.temperature", c.vocoder.sample_temperature),
        EMGV_FIELD("vocoder.gl_iterations", c.vocoder.griffin_lim.iterations),
        EMGV_FIELD("eval.provider", c.eval.provider),
        EMGV_FIELD("eval.provider_arg", c.eval.provider_arg),
        EMGV_FIELD("eval.hyphen_splits", c.eval.normalize.hyphen_splits),
    };
    f.push_back({"transducer.preset",
                 [](PipelineConfig& c, const ConfigValue& v) {
                   const auto p = convert<std::string>(v, "transducer.preset");
                   if (p == "desk") c.transducer = TransducerConfig::desk();
                   else if (p == "full") c.transducer = TransducerConfig{};
                   else throw config_error(v.origin + ": transducer.preset must be desk or full");
                 },
                 nullptr});
    f.push_back({"vocoder.preset",
                 [](PipelineConfig& c, const ConfigValue& v) {
                   const auto p = convert<std::string>(v, "vocoder.preset");
                   if (p == "desk") c.vocoder.wavenet = WaveNetConfig::desk();
                   else if (p == "full") c.vocoder.wavenet = WaveNetConfig{};
                   else throw config_error(v.origin + ": vocoder.preset must be desk or full");
                 },
                 nullptr});
    return f;
  }();
  return all;
}

#undef EMGV_FIELD

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

std::string env_name(const std::string& key) {
  std::string out = "EMGVOICE_";
  for (char c : key) out.push_back(c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return out;
}

}  // namespace

ConfigEntries parse_config_text(std::string_view text, const std::string& origin) {
  ConfigEntries out;
  std::set<std::string> seen;
  std::string section;
  std::size_t lineno = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t nl = text.find('\n', start);
    std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    LineParser p(line, origin + ":" + std::to_string(lineno));
    if (p.at_end_or_comment()) continue;
    if (p.consume('[')) {
      section = p.name();
      if (!p.consume(']')) p.fail("expected ']'");
      if (!p.at_end_or_comment()) p.fail("unexpected text after section header");
      continue;
    }
    const std::string key = p.name();
    if (!p.consume('=')) p.fail("expected '='");
    ConfigValue v = p.value();
    if (!p.at_end_or_comment()) p.fail("unexpected text after value");
    const std::string full = section.empty() ? key : section + "." + key;
    if (!seen.insert(full).second) p.fail("duplicate key " + full);
    out.emplace_back(full, std::move(v));
  }
  return out;
}

ElectrodeMask PipelineConfig::electrode_mask() const { return ElectrodeMask::removing(removed_electrodes); }

FrameConfig PipelineConfig::emg_frames() const { return {frame_ms, hop_ms, kEmgSampleRate}; }
FrameConfig PipelineConfig::audio_frames() const { return {frame_ms, hop_ms, kAudioSampleRate}; }

void PipelineConfig::validate() const {
  if (workers < 0) throw config_error("workers must be non-negative");
  filter.validate();
  emg_frames().validate();
  audio_frames().validate();
  if (!(data_fraction > 0.0 && data_fraction <= 1.0)) throw config_error("train.data_fraction must lie in (0, 1]");
  electrode_mask();
  align.validate();
  transducer.validate();
  train.validate();
  if (vocoder.kind != "griffin-lim" && vocoder.kind != "wavenet")
    throw config_error("vocoder.kind must be griffin-lim or wavenet");
  vocoder.wavenet.validate();
  if (vocoder.wavenet_train.steps < 1) throw config_error("vocoder.steps must be positive");
  if (!(vocoder.sample_temperature > 0)) throw config_error("vocoder.temperature must be positive");
  if (vocoder.griffin_lim.iterations < 0) throw config_error("vocoder.gl_iterations must be non-negative");
  if (eval.provider != "echo" && eval.provider != "empty" && eval.provider != "file" && eval.provider != "http")
    throw config_error("eval.provider must be echo, empty, file or http");
}

void apply_config(PipelineConfig& cfg, const ConfigEntries& entries) {
  auto is_preset = [](const std::string& k) { return k.size() > 7 && k.ends_with(".preset"); };
  for (int pass = 0; pass < 2; ++pass)
    for (const auto& [key, value] : entries) {
      if (is_preset(key) != (pass == 0)) continue;
      const Field* f = find_field(key);
      if (!f) throw config_error(value.origin + ": unknown key " + key);
      f->set(cfg, value);
    }
}

void apply_config(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  // Reuse the file grammar so quoting and arrays behave the same.
  auto parsed = parse_config_text("v = " + value, "override " + key);
  apply_config(cfg, ConfigEntries{{key, std::move(parsed.front().second)}});
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  PipelineConfig cfg;
  apply_config(cfg, parse_config_text(ss.str(), path.string()));
  return cfg;
}

std::vector<std::string> apply_env_overrides(PipelineConfig& cfg,
                                             const std::function<const char*(const char*)>& getenv_fn,
                                             const std::vector<std::string>& names) {
  std::set<std::string> known;
  ConfigEntries entries;
  for (const auto& f : fields()) {
    const std::string name = env_name(f.key);
    known.insert(name);
    if (const char* v = getenv_fn(name.c_str())) {
      auto parsed = parse_config_text("v = " + std::string(v), "env " + name);
      entries.emplace_back(f.key, std::move(parsed.front().second));
    }
  }
  apply_config(cfg, entries);
  std::vector<std::string> unknown;
  for (const auto& n : names)
    if (n.rfind("EMGVOICE_", 0) == 0 && n.rfind("EMGVOICE_ASR_", 0) != 0 && !known.count(n)) unknown.push_back(n);
  return unknown;
}

std::vector<std::string> apply_env_overrides(PipelineConfig& cfg) {
  std::vector<std::string> names;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry = *e;
    names.push_back(entry.substr(0, entry.find('=')));
  }
  return apply_env_overrides(cfg, [](const char* n) { return std::getenv(n); }, names);
}

json to_json(const PipelineConfig& cfg) {
  json out = json::object();
  for (const auto& f : fields()) {
    if (!f.get) continue;
    const auto dot = f.key.find('.');
    if (dot == std::string::npos) out[f.key] = f.get(cfg);
    else out[f.key.substr(0, dot)][f.key.substr(dot + 1)] = f.get(cfg);
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

std::string hex_hash(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t section_hash(const PipelineConfig& cfg, const std::vector<std::string>& sections,
                           std::uint64_t upstream) {
  const json all = to_json(cfg);
  Fnv1a h;
  h.add(upstream);
  for (const auto& s : sections) {
    const auto dot = s.find('.');
    const json* v = nullptr;
    if (dot == std::string::npos) {
      if (all.contains(s)) v = &all.at(s);
    } else if (all.contains(s.substr(0, dot)) && all.at(s.substr(0, dot)).contains(s.substr(dot + 1))) {
      v = &all.at(s.substr(0, dot)).at(s.substr(dot + 1));
    }
    if (!v) throw config_error("no config section or key " + s);
    h.add(s);
    h.add(v->dump());
  }
  return h.value();
}

}  // namespace emgvoice
