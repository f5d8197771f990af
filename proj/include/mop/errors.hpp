#pragma once

#include <stdexcept>
#include <string>

namespace mop {

// Failure taxonomy shared by every module. Tests match on kind(), messages
// are for humans.
enum class ErrorKind {
    dimension,     // incompatible tensor shapes
    index,         // out-of-range index (layer, head, token id)
    config,        // invalid configuration value
    data,          // empty/insufficient dataset
    contract,      // precondition or state violation
    input,         // bad runtime input (overlong sequence, bad token)
    degenerate,    // degenerate numeric input (zero vector)
    engine,        // pruning loop cannot proceed
    io,            // file open/read/write failure
    io_version,    // checkpoint format version mismatch
    io_integrity,  // checkpoint manifest/payload inconsistency
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

  private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
    throw Error(kind, msg);
}

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
    if (!cond) fail(kind, msg);
}

}  // namespace mop
