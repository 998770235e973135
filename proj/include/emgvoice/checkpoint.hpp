#pragma once

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace emgvoice {

// Container layout: "EMGVCKPT", u32 version, u64 header length, JSON header,
// u64 parameter count, float64 parameters. The header's "kind" field names
// the model family.
struct Checkpoint {
  nlohmann::json header;
  Eigen::VectorXd params;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

// Throws when the file is malformed or its kind differs from `expected_kind`.
Checkpoint read_checkpoint(const std::filesystem::path& path, const std::string& expected_kind);

}  // namespace emgvoice
