#include "stitchformer/digest.hpp"

#include <openssl/evp.h>

#include <array>

namespace stitchformer {

std::string sha256_hex(const void* data, std::size_t size) {
    std::array<unsigned char, 32> md{};
    unsigned int len = 0;
    EVP_Digest(data, size, md.data(), &len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

std::string sha256_hex(const std::string& data) { return sha256_hex(data.data(), data.size()); }

}  // namespace stitchformer
