#include "emgvoice/checkpoint.hpp"

#include "emgvoice/error.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace emgvoice {

namespace {
constexpr char kMagic[8] = {'E', 'M', 'G', 'V', 'C', 'K', 'P', 'T'};
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string header = ckpt.header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot write " + path.string());
  const std::uint64_t header_len = header.size();
  const std::uint64_t count = static_cast<std::uint64_t>(ckpt.params.size());
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);
  out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  out.write(reinterpret_cast<const char*>(ckpt.params.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!out) throw data_error("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path, const std::string& expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open checkpoint " + path.string());
  const std::vector<char> buf{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > buf.size()) throw data_error("truncated checkpoint " + path.string());
  };
  auto get = [&](void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf.data() + pos, n);
    pos += n;
  };

  char magic[8];
  get(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw data_error(path.string() + " is not a checkpoint");
  std::uint32_t version = 0;
  get(&version, sizeof version);
  if (version != kCheckpointVersion)
    throw data_error("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  std::uint64_t header_len = 0;
  get(&header_len, sizeof header_len);
  need(header_len);
  Checkpoint ckpt;
  try {
    ckpt.header = nlohmann::json::parse(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                                        buf.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw data_error("bad checkpoint header in " + path.string() + ": " + e.what());
  }
  pos += header_len;
  const std::string kind = ckpt.header.value("kind", "");
  if (kind != expected_kind)
    throw data_error(path.string() + " holds a '" + kind + "' checkpoint, expected '" + expected_kind + "'");
  std::uint64_t count = 0;
  get(&count, sizeof count);
  if (count > buf.size() / sizeof(double)) throw data_error("truncated checkpoint " + path.string());
  ckpt.params.resize(static_cast<Eigen::Index>(count));
  get(ckpt.params.data(), count * sizeof(double));
  if (pos != buf.size()) throw data_error("trailing bytes in checkpoint " + path.string());
  return ckpt;
}

}  // namespace emgvoice
