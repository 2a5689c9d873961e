#pragma once

#include <stdexcept>
#include <string>

namespace blocksplat {

// Error categories for the binary container and wire formats. Tests match on
// the code, not the message text.
enum class FormatErrorCode {
    BadMagic,
    UnsupportedVersion,
    TruncatedSection,
    UnknownSection,
    TruncatedBuffer,
    CountOverflow,
    NonMonotoneIds,
    BadHeader,
};

class FormatError : public std::runtime_error {
public:
    FormatError(FormatErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    FormatErrorCode code() const noexcept { return code_; }

private:
    FormatErrorCode code_;
};

// Contract violations on in-memory data (shape mismatches, misaligned IDs).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

} // namespace blocksplat
