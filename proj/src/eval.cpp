#include "emgvoice/eval.hpp"

#include "emgvoice/error.hpp"
#include "emgvoice/nn.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace emgvoice {

using nlohmann::json;

Tokens normalize_text(std::string_view text, const NormalizeOptions& opts) {
  Tokens out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    // Curly quotes U+2018 and U+2019.
    if (c == 0xE2 && i + 2 < text.size() && static_cast<unsigned char>(text[i + 1]) == 0x80 &&
        (static_cast<unsigned char>(text[i + 2]) == 0x98 || static_cast<unsigned char>(text[i + 2]) == 0x99)) {
      i += 2;
      continue;
    }
    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (c == '-' && opts.hyphen_splits) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      continue;
    } else {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  flush();
  return out;
}

namespace {

// Full DP table; rows follow `ref`, columns `hyp`.
std::vector<std::vector<std::size_t>> edit_table(const Tokens& ref, const Tokens& hyp) {
  std::vector<std::vector<std::size_t>> d(ref.size() + 1, std::vector<std::size_t>(hyp.size() + 1));
  for (std::size_t i = 0; i <= ref.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= hyp.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i)
    for (std::size_t j = 1; j <= hyp.size(); ++j)
      d[i][j] = std::min({d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1), d[i - 1][j] + 1, d[i][j - 1] + 1});
  return d;
}

}  // namespace

std::size_t edit_distance(const Tokens& a, const Tokens& b) { return edit_table(a, b)[a.size()][b.size()]; }

double WerEntry::wer() const {
  return ref_length == 0 ? 0.0 : static_cast<double>(errors()) / static_cast<double>(ref_length);
}

WerEntry word_error_rate(const Tokens& ref, const Tokens& hyp) {
  if (ref.empty()) throw data_error("word error rate needs a non-empty reference");
  const auto d = edit_table(ref, hyp);
  WerEntry e;
  e.ref_length = ref.size();
  // Backtrace preferring diagonal moves, then deletions.
  std::size_t i = ref.size(), j = hyp.size();
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++e.substitutions;
      --i;
      --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      ++e.deletions;
      --i;
    } else {
      ++e.insertions;
      --j;
    }
  }
  return e;
}

std::size_t WerReport::errors() const {
  std::size_t n = 0;
  for (const auto& u : utterances) n += u.errors();
  return n;
}

std::size_t WerReport::ref_length() const {
  std::size_t n = 0;
  for (const auto& u : utterances) n += u.ref_length;
  return n;
}

double WerReport::wer() const {
  const std::size_t n = ref_length();
  return n == 0 ? 0.0 : static_cast<double>(errors()) / static_cast<double>(n);
}

double WerReport::macro_wer() const {
  if (utterances.empty()) return 0.0;
  double s = 0;
  for (const auto& u : utterances) s += u.wer();
  return s / static_cast<double>(utterances.size());
}

std::size_t WerReport::failures() const {
  return static_cast<std::size_t>(
      std::count_if(utterances.begin(), utterances.end(), [](const WerEntry& u) { return u.provider_failed; }));
}

json WerReport::to_json() const {
  json per = json::array();
  std::size_t s = 0, ins = 0, del = 0;
  for (const auto& u : utterances) {
    json e = {{"id", u.id},
              {"reference", u.reference},
              {"hypothesis", u.hypothesis},
              {"substitutions", u.substitutions},
              {"insertions", u.insertions},
              {"deletions", u.deletions},
              {"ref_length", u.ref_length},
              {"wer", u.wer()},
              {"provider_failed", u.provider_failed}};
    if (u.provider_failed) e["failure"] = u.failure;
    per.push_back(std::move(e));
    s += u.substitutions;
    ins += u.insertions;
    del += u.deletions;
  }
  return {{"provider", provider},
          {"wer", wer()},
          {"macro_wer", macro_wer()},
          {"errors", errors()},
          {"ref_length", ref_length()},
          {"substitutions", s},
          {"insertions", ins},
          {"deletions", del},
          {"provider_failures", failures()},
          {"utterances", per}};
}

std::string WerReport::table() const {
  std::size_t width = 2;
  for (const auto& u : utterances) width = std::max(width, u.id.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "id" << std::right << std::setw(6) << "sub"
     << std::setw(6) << "ins" << std::setw(6) << "del" << std::setw(6) << "ref" << std::setw(9) << "wer" << "\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& u : utterances) {
    os << std::left << std::setw(static_cast<int>(width)) << u.id << std::right << std::setw(6) << u.substitutions
       << std::setw(6) << u.insertions << std::setw(6) << u.deletions << std::setw(6) << u.ref_length
       << std::setw(9) << u.wer() << (u.provider_failed ? "  provider failed" : "") << "\n";
  }
  os << std::left << std::setw(static_cast<int>(width)) << "total" << std::right << std::setw(18) << errors()
     << std::setw(6) << ref_length() << std::setw(9) << wer() << "\n";
  return os.str();
}

FileProvider::FileProvider(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open transcript file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw data_error(path.string() + ":" + std::to_string(lineno) + ": expected id<TAB>text");
    const std::string id = line.substr(0, tab);
    if (!texts_.emplace(id, line.substr(tab + 1)).second)
      throw data_error(path.string() + ":" + std::to_string(lineno) + ": duplicate transcript for " + id);
  }
}

std::string FileProvider::transcribe(const EvalItem& item) {
  const auto it = texts_.find(item.id);
  if (it == texts_.end()) throw data_error("no transcript for " + item.id);
  return it->second;
}

HttpProviderConfig HttpProviderConfig::from_env() {
  HttpProviderConfig cfg;
  auto get = [](const char* name) -> std::string {
    const char* v = std::getenv(name);
    return v ? v : "";
  };
  cfg.url = get("EMGVOICE_ASR_URL");
  if (auto v = get("EMGVOICE_ASR_CONCURRENCY"); !v.empty()) cfg.max_concurrency = std::stoi(v);
  if (auto v = get("EMGVOICE_ASR_TIMEOUT"); !v.empty()) cfg.timeout_seconds = std::stoi(v);
  cfg.auth_token = get("EMGVOICE_ASR_TOKEN");
  return cfg;
}

HttpProvider::HttpProvider(HttpProviderConfig cfg) : cfg_(std::move(cfg)) {
  const std::string prefix = "http://";
  if (cfg_.url.rfind(prefix, 0) != 0) throw config_error("transcription endpoint must start with http://");
  if (cfg_.max_concurrency < 1) throw config_error("transcription concurrency must be at least 1");
  const auto slash = cfg_.url.find('/', prefix.size());
  scheme_host_ = cfg_.url.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : cfg_.url.substr(slash);
  if (scheme_host_.size() == prefix.size()) throw config_error("transcription endpoint has no host");
}

std::string HttpProvider::transcribe(const EvalItem& item) {
  std::ifstream in(item.audio, std::ios::binary);
  if (!in) throw data_error("cannot read " + item.audio.string());
  const std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  httplib::Client client(scheme_host_);
  client.set_connection_timeout(cfg_.timeout_seconds);
  client.set_read_timeout(cfg_.timeout_seconds);
  httplib::Headers headers{{"X-Utterance-Id", item.id}};
  if (!cfg_.auth_token.empty()) headers.emplace("Authorization", "Bearer " + cfg_.auth_token);
  const auto res = client.Post(path_, headers, body, "audio/wav");
  if (!res) throw data_error("transcription request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw data_error("transcription service returned status " + std::to_string(res->status));
  if (res->get_header_value("Content-Type").find("json") != std::string::npos) {
    const json j = json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.contains("text") || !j["text"].is_string())
      throw data_error("transcription response lacks a text field");
    return j["text"].get<std::string>();
  }
  return res->body;
}

std::unique_ptr<TranscriptionProvider> make_provider(const std::string& name, const std::string& arg) {
  if (name == "echo") return std::make_unique<EchoProvider>();
  if (name == "empty") return std::make_unique<EmptyProvider>();
  if (name == "file") {
    if (arg.empty()) throw config_error("file provider needs a transcript path");
    return std::make_unique<FileProvider>(arg);
  }
  if (name == "http") {
    auto cfg = HttpProviderConfig::from_env();
    if (!arg.empty()) cfg.url = arg;
    return std::make_unique<HttpProvider>(cfg);
  }
  throw config_error("unknown transcription provider '" + name + "' (echo, empty, file, http)");
}

WerReport evaluate_corpus(const std::vector<EvalItem>& items, TranscriptionProvider& provider,
                          const EvalOptions& opts) {
  std::set<std::string> seen;
  std::vector<Tokens> refs;
  for (const auto& item : items) {
    if (!seen.insert(item.id).second) throw data_error("duplicate evaluation id " + item.id);
    refs.push_back(normalize_text(item.reference, opts.normalize));
    if (refs.back().empty()) throw data_error("empty reference for " + item.id);
  }

  WerReport report;
  report.provider = provider.tag();
  report.utterances.resize(items.size());
  const int workers = std::max(1, std::min(opts.workers, provider.max_concurrency()));
  nn::parallel_for(items.size(), workers, [&](std::size_t i) {
    std::string hyp;
    bool failed = false;
    std::string failure;
    try {
      hyp = provider.transcribe(items[i]);
    } catch (const std::exception& e) {
      failed = true;
      failure = e.what();
    }
    WerEntry e = word_error_rate(refs[i], normalize_text(hyp, opts.normalize));
    e.id = items[i].id;
    e.reference = items[i].reference;
    e.hypothesis = hyp;
    e.provider_failed = failed;
    e.failure = failure;
    report.utterances[i] = std::move(e);
  });
  return report;
}

}  // namespace emgvoice
