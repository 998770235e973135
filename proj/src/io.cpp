#include "emgvoice/io.hpp"

#include "emgvoice/error.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "binary containers assume a little-endian host");

namespace emgvoice {
namespace {

std::vector<char> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Reader {
public:
  Reader(const std::vector<char>& buf, const fs::path& path) : buf_(buf), path_(path) {}

  template <typename T>
  T get() {
    T value;
    need(sizeof(T));
    std::memcpy(&value, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string tag() {
    need(4);
    std::string s(buf_.data() + pos_, 4);
    pos_ += 4;
    return s;
  }

  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

  const char* here() const { return buf_.data() + pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw data_error("truncated file " + path_.string());
  }

  const std::vector<char>& buf_;
  fs::path path_;
  std::size_t pos_ = 0;
};

class Writer {
public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void tag(const char (&s)[5]) { buf_.insert(buf_.end(), s, s + 4); }

  void save(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot write " + path.string());
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
  }

private:
  std::vector<char> buf_;
};

}  // namespace

EmgRecording read_emg(const fs::path& path) {
  const auto buf = slurp(path);
  Reader r(buf, path);
  if (r.tag() != "EMG1") throw data_error("bad EMG magic in " + path.string());
  const auto channels = r.get<std::uint16_t>();
  const auto rate = r.get<std::uint32_t>();
  if (channels == 0) throw data_error("EMG file with zero channels: " + path.string());
  const std::size_t bytes = r.remaining();
  if (bytes % (sizeof(float) * channels) != 0)
    throw data_error("EMG payload not a whole number of frames: " + path.string());
  const auto n = static_cast<Eigen::Index>(bytes / (sizeof(float) * channels));

  EmgRecording rec;
  rec.sample_rate = rate;
  rec.samples.resize(n, channels);
  for (Eigen::Index t = 0; t < n; ++t)
    for (Eigen::Index c = 0; c < channels; ++c) rec.samples(t, c) = r.get<float>();
  return rec;
}

void write_emg(const fs::path& path, const EmgRecording& rec) {
  Writer w;
  w.tag("EMG1");
  w.put(static_cast<std::uint16_t>(rec.samples.cols()));
  w.put(rec.sample_rate);
  for (Eigen::Index t = 0; t < rec.samples.rows(); ++t)
    for (Eigen::Index c = 0; c < rec.samples.cols(); ++c)
      w.put(static_cast<float>(rec.samples(t, c)));
  w.save(path);
}

WavAudio read_wav(const fs::path& path) {
  const auto buf = slurp(path);
  Reader r(buf, path);
  if (r.tag() != "RIFF") throw data_error("not a RIFF file: " + path.string());
  r.get<std::uint32_t>();
  if (r.tag() != "WAVE") throw data_error("not a WAVE file: " + path.string());

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (r.remaining() >= 8) {
    const std::string id = r.tag();
    const auto size = r.get<std::uint32_t>();
    if (id == "fmt ") {
      format = r.get<std::uint16_t>();
      channels = r.get<std::uint16_t>();
      rate = r.get<std::uint32_t>();
      r.get<std::uint32_t>();  // byte rate
      r.get<std::uint16_t>();  // block align
      bits = r.get<std::uint16_t>();
      r.skip(size - 16 + (size & 1));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw data_error("WAV data before fmt chunk: " + path.string());
      if (format != 1 || bits != 16 || channels != 1)
        throw data_error("WAV must be 16-bit PCM mono: " + path.string());
      const std::size_t n = std::min<std::size_t>(size, r.remaining()) / 2;
      WavAudio audio;
      audio.sample_rate = rate;
      audio.samples.resize(static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i)
        audio.samples(static_cast<Eigen::Index>(i)) = r.get<std::int16_t>() / 32768.0;
      return audio;
    } else {
      r.skip(size + (size & 1));
    }
  }
  throw data_error("WAV without data chunk: " + path.string());
}

void write_wav(const fs::path& path, const WavAudio& audio) {
  const auto n = static_cast<std::uint32_t>(audio.samples.size());
  Writer w;
  w.tag("RIFF");
  w.put<std::uint32_t>(36 + 2 * n);
  w.tag("WAVE");
  w.tag("fmt ");
  w.put<std::uint32_t>(16);
  w.put<std::uint16_t>(1);
  w.put<std::uint16_t>(1);
  w.put(audio.sample_rate);
  w.put<std::uint32_t>(audio.sample_rate * 2);
  w.put<std::uint16_t>(2);
  w.put<std::uint16_t>(16);
  w.tag("data");
  w.put<std::uint32_t>(2 * n);
  for (Eigen::Index i = 0; i < audio.samples.size(); ++i) {
    const double x = std::clamp(audio.samples(i), -1.0, 1.0);
    w.put(static_cast<std::int16_t>(std::clamp(std::lround(x * 32768.0), -32768L, 32767L)));
  }
  w.save(path);
}

FeatureFile read_feature_file(const fs::path& path) {
  const auto buf = slurp(path);
  Reader r(buf, path);
  if (r.tag() != "FEA1") throw data_error("bad feature magic in " + path.string());
  const auto dim = r.get<std::uint16_t>();
  r.get<std::uint32_t>();
  FeatureFile f;
  const auto kind = r.get<std::uint8_t>();
  if (kind > 1) throw data_error("unknown feature kind in " + path.string());
  f.kind = static_cast<FeatureKind>(kind);
  f.normalized = r.get<std::uint8_t>() != 0;
  f.provenance = r.get<std::uint64_t>();
  if (dim == 0 || r.remaining() % (sizeof(float) * dim) != 0)
    throw data_error("feature payload size mismatch: " + path.string());
  const auto frames = static_cast<Eigen::Index>(r.remaining() / (sizeof(float) * dim));
  f.data.resize(frames, dim);
  for (Eigen::Index t = 0; t < frames; ++t)
    for (Eigen::Index d = 0; d < dim; ++d) f.data(t, d) = r.get<float>();
  return f;
}

void write_feature_file(const fs::path& path, const FeatureFile& file) {
  Writer w;
  w.tag("FEA1");
  w.put(static_cast<std::uint16_t>(file.data.cols()));
  w.put<std::uint32_t>(100);
  w.put(static_cast<std::uint8_t>(file.kind));
  w.put<std::uint8_t>(file.normalized ? 1 : 0);
  w.put(file.provenance);
  for (Eigen::Index t = 0; t < file.data.rows(); ++t)
    for (Eigen::Index d = 0; d < file.data.cols(); ++d)
      w.put(static_cast<float>(file.data(t, d)));
  w.save(path);
}

}  // namespace emgvoice
