#include "pvmdnn/rng.hpp"

namespace pvmdnn {

std::uint64_t derive_seed(std::uint64_t base, std::string_view stream) {
  // FNV-1a over the stream label, mixed with the base seed.
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  Rng mix(base ^ h);
  return mix.next_u64();
}

}  // namespace pvmdnn
