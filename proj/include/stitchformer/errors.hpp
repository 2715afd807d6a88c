#pragma once

#include <stdexcept>
#include <string>

namespace stitchformer {

// Precondition or shape-contract violation by the caller.
struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Non-finite value produced by a forward or backward pass.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// File has an unknown version or malformed structure.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// File content does not match its integrity check (hash, size, truncation).
struct CorruptionError : std::runtime_error {
    explicit CorruptionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dataset generation plan cannot be satisfied.
struct GenerationError : std::runtime_error {
    explicit GenerationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad command line or config file input; message names the offending field.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace stitchformer
