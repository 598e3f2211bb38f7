#pragma once

#include <cstdint>
#include <filesystem>

#include "lipdd/network.hpp"

namespace lipdd {

/// Binary checkpoint container:
///
///   bytes 0..7    magic "LIPDDCK1"
///   u32 LE        format version (currently 1)
///   u64 LE        header length N
///   N bytes       UTF-8 JSON header {version, arch, seed, epoch, param_count, layers}
///   param_count × f64 LE raw weights in layer order
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ArchSpec arch;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  ParamVector weights;

  static Checkpoint capture(const Network& net, std::uint64_t seed, std::size_t epoch);
  Network restore() const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lipdd
