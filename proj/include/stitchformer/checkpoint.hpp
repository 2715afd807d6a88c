#pragma once

#include <map>
#include <string>
#include <vector>

#include "stitchformer/tensor.hpp"

namespace stitchformer {

struct NamedParam {
    std::string name;
    Tensor tensor;
};

struct CheckpointLoadResult {
    Precision stored_precision = Precision::kF64;
    std::map<std::string, std::string> meta;
    // Non-empty when stored values were converted to the session precision.
    std::string precision_note;
};

// Single-file binary checkpoint: magic, format version, precision flag,
// metadata strings, a manifest of (name, shape, offset) entries, a SHA-256 of
// the blob section, then raw little-endian value blobs. Round-trips at the
// writing precision are bit-exact.
void save_checkpoint(const std::string& path, const std::vector<NamedParam>& params,
                     const std::map<std::string, std::string>& meta);

// Loads values into the given tensors, matching by name and validating
// shapes. Throws FormatError on bad magic/version, CorruptionError on
// truncation or digest mismatch, ContractError on name/shape mismatch.
CheckpointLoadResult load_checkpoint(const std::string& path, std::vector<NamedParam>& params);

// Reads only the metadata section (for config validation before building
// models).
CheckpointLoadResult peek_checkpoint(const std::string& path);

}  // namespace stitchformer
