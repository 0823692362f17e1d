#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "fab/flow.hpp"

namespace fab {

// Binary layout:
//   "FABFLOW\0"                      8-byte magic
//   uint32 format_version            little-endian
//   uint32 header_size               bytes of the JSON architecture header
//   header_size bytes                architecture descriptor as JSON
//   uint64 n_params                  little-endian
//   n_params float64                 little-endian IEEE-754
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

void write_checkpoint(std::ostream& out, const FlowModel& model);
FlowModel read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const FlowModel& model);
FlowModel load_checkpoint(const std::filesystem::path& path);

}  // namespace fab
