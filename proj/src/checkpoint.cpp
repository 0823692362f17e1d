#include "fab/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "fab/errors.hpp"

namespace fab {

namespace {

constexpr std::array<char, 8> kMagic = {'F', 'A', 'B', 'F', 'L', 'O', 'W', '\0'};

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bytes[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  static_assert(std::is_integral_v<T>);
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T)))
    throw ConfigError("checkpoint truncated");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

void write_checkpoint(std::ostream& out, const FlowModel& model) {
  const std::string header = model.architecture().to_json().dump();
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  const Eigen::VectorXd& p = model.params();
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(p.size()));
  for (Eigen::Index i = 0; i < p.size(); ++i)
    put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(p[i]));
  if (!out) throw Error("failed writing checkpoint");
}

FlowModel read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic)
    throw ConfigError("not a flow checkpoint (bad magic)");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointFormatVersion)
    throw ConfigError("unsupported checkpoint format version " +
                      std::to_string(version));
  const auto header_size = get_le<std::uint32_t>(in);
  std::string header(header_size, '\0');
  if (!in.read(header.data(), header_size))
    throw ConfigError("checkpoint truncated");
  FlowArchitecture arch;
  try {
    arch = FlowArchitecture::from_json(nlohmann::json::parse(header));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad checkpoint header: ") + e.what());
  }
  const auto n = get_le<std::uint64_t>(in);
  Eigen::VectorXd params(static_cast<Eigen::Index>(n));
  for (std::uint64_t i = 0; i < n; ++i)
    params[static_cast<Eigen::Index>(i)] =
        std::bit_cast<double>(get_le<std::uint64_t>(in));
  return FlowModel(std::move(arch), std::move(params));
}

void save_checkpoint(const std::filesystem::path& path, const FlowModel& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_checkpoint(out, model);
}

FlowModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace fab
