#pragma once

#include <filesystem>
#include <string>

#include "scnn/graph.hpp"

namespace scnn {

// Single-file checkpoint: "SCNN" magic, version, a declarative architecture
// descriptor (structured text, never executed), 32-bit little-endian
// parameter blobs in graph-topological order, and a trailing CRC-32.
// Byte layout is documented in docs/FORMAT.md; output is byte-deterministic
// and written atomically (temp file + rename).
void save_model(const NetworkGraph<float>& net,
                const std::filesystem::path& path);

NetworkGraph<float> load_model(const std::filesystem::path& path);

// Architecture descriptor text (also embedded in the model file).
std::string describe_architecture(const NetworkGraph<float>& net);
NetworkGraph<float> architecture_from_description(const std::string& text);

std::uint32_t crc32(const unsigned char* data, std::size_t len,
                    std::uint32_t seed = 0);

}  // namespace scnn
