#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace emgvoice {

using Tokens = std::vector<std::string>;

struct NormalizeOptions {
  bool hyphen_splits = false;  // "twenty-one" -> [twenty, one] instead of [twentyone]
};

// Lowercase ASCII, drop punctuation and apostrophes (including U+2018/U+2019),
// split on whitespace. Non-ASCII letters pass through untouched.
Tokens normalize_text(std::string_view text, const NormalizeOptions& opts = {});

std::size_t edit_distance(const Tokens& a, const Tokens& b);

struct WerEntry {
  std::string id;
  std::string reference;
  std::string hypothesis;
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t ref_length = 0;
  bool provider_failed = false;
  std::string failure;

  std::size_t errors() const { return substitutions + insertions + deletions; }
  double wer() const;
};

// Unit-cost word Levenshtein alignment. Throws a data error on an empty
// reference.
WerEntry word_error_rate(const Tokens& ref, const Tokens& hyp);

struct WerReport {
  std::string provider;
  std::vector<WerEntry> utterances;

  std::size_t errors() const;
  std::size_t ref_length() const;
  // Sum of errors over sum of reference lengths.
  double wer() const;
  // Mean of per-utterance rates, reported for comparison only.
  double macro_wer() const;
  std::size_t failures() const;

  nlohmann::json to_json() const;
  std::string table() const;
};

struct EvalItem {
  std::string id;
  std::filesystem::path audio;
  std::string reference;
};

class TranscriptionProvider {
public:
  virtual ~TranscriptionProvider() = default;
  virtual std::string tag() const = 0;
  // May throw; the failure is recorded against the utterance.
  virtual std::string transcribe(const EvalItem& item) = 0;
  // Upper bound on simultaneous transcribe calls.
  virtual int max_concurrency() const { return 1 << 16; }
};

// Test doubles.
class EchoProvider : public TranscriptionProvider {
public:
  std::string tag() const override { return "echo"; }
  std::string transcribe(const EvalItem& item) override { return item.reference; }
};

class EmptyProvider : public TranscriptionProvider {
public:
  std::string tag() const override { return "empty"; }
  std::string transcribe(const EvalItem&) override { return {}; }
};

// Imports transcripts written as `id<TAB>text` lines.
class FileProvider : public TranscriptionProvider {
public:
  explicit FileProvider(const std::filesystem::path& path);
  std::string tag() const override { return "file"; }
  std::string transcribe(const EvalItem& item) override;
  std::size_t size() const { return texts_.size(); }

private:
  std::map<std::string, std::string> texts_;
};

struct HttpProviderConfig {
  std::string url;  // http://host:port/path
  int max_concurrency = 4;
  int timeout_seconds = 30;
  std::string auth_token;  // sent as a bearer token when non-empty

  // EMGVOICE_ASR_URL, EMGVOICE_ASR_CONCURRENCY, EMGVOICE_ASR_TIMEOUT,
  // EMGVOICE_ASR_TOKEN.
  static HttpProviderConfig from_env();
};

// POSTs the WAV bytes with Content-Type audio/wav. Accepts a JSON body with a
// "text" field or a plain-text body.
class HttpProvider : public TranscriptionProvider {
public:
  explicit HttpProvider(HttpProviderConfig cfg);
  std::string tag() const override { return "http"; }
  std::string transcribe(const EvalItem& item) override;
  int max_concurrency() const override { return cfg_.max_concurrency; }

private:
  HttpProviderConfig cfg_;
  std::string scheme_host_;
  std::string path_;
};

std::unique_ptr<TranscriptionProvider> make_provider(const std::string& name, const std::string& arg = {});

struct EvalOptions {
  int workers = 1;
  NormalizeOptions normalize;
};

// Throws a data error when ids repeat or a reference normalizes to nothing.
WerReport evaluate_corpus(const std::vector<EvalItem>& items, TranscriptionProvider& provider,
                          const EvalOptions& opts = {});

}  // namespace emgvoice
