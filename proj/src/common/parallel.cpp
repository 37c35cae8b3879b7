#include "parscale/common/parallel.hpp"

#include <cstdlib>
#include <string>

namespace parscale {

bool deterministic_mode() {
  const char* env = std::getenv("PARSCALE_DETERMINISTIC");
  return env != nullptr && std::string(env) == "1";
}

std::size_t thread_limit() {
  if (deterministic_mode()) return 1;
  std::size_t limit = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("PARSCALE_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) limit = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      // Unparsable value: keep the hardware default.
    }
  }
  return limit;
}

}  // namespace parscale
