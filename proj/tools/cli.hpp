#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lipdd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;

/// Keeps freed training buffers in the heap instead of returning them to the
/// OS after every batch (glibc only; a no-op elsewhere). Call once from main.
void configure_allocator();

/// Entry point behind the `lipdd` binary; `args` excludes the program name. Payloads go to `out`, logs and
/// usage text to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lipdd::cli
