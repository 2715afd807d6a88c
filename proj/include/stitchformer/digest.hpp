#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace stitchformer {

// SHA-256 of a byte buffer, lowercase hex.
std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_hex(const std::string& data);

}  // namespace stitchformer
