#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace kvq {

// Invalid configuration: bad flag combinations, unsupported bitwidths,
// malformed distribution parameters.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// Violated operation precondition: shape mismatches, empty inputs.
class domain_error : public std::runtime_error {
public:
    explicit domain_error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed file content. Carries the byte offset at which parsing failed.
class format_error : public std::runtime_error {
public:
    format_error(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

}  // namespace kvq
