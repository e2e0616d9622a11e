#pragma once

#include <map>
#include <string>
#include <vector>

#include "core/graph.hpp"

namespace bmil {

// Checkpoint file: magic "BMILCKPT", version u32, JSON header (u32 length +
// UTF-8), tensor count u32, then per tensor: name (u32 + bytes), rank u32,
// dims (i32 each), raw little-endian 64-bit floats.
inline constexpr char kCkptMagic[8] = {'B', 'M', 'I', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCkptVersion = 1;

struct Checkpoint {
  std::string header_json;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const std::string& path, const std::vector<Param*>& params,
                     const std::string& header_json);
Checkpoint load_checkpoint(const std::string& path);

// Strict application: every param must be present with matching shape, and
// every stored tensor must land somewhere.
void apply_checkpoint(const Checkpoint& ckpt, const std::vector<Param*>& params);

}  // namespace bmil
