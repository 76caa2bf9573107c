#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace hairseg {

enum class ErrorKind {
    Shape,           // tensor dimension / extent mismatch
    Param,           // invalid parameter or configuration value
    Data,            // bad dataset content, out-of-range labels, empty inputs
    Io,              // missing / unreadable / unwritable files
    VersionMismatch, // serialized format version differs
    ConfigMismatch,  // config hash in a file does not match the active config
    Corrupt,         // truncated or checksum-failing payload
    Contract,        // API misuse (non-scalar backward root, update after stop, ...)
    Usage,           // bad CLI arguments or config keys
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string message)
        : std::runtime_error(std::move(message)), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

const char* to_string(ErrorKind kind) noexcept;

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

} // namespace hairseg

// Check macros build the message lazily; the stream expression is only
// evaluated on failure.
#define HS_CHECK(cond, kind, msg_expr)                                  \
    do {                                                                \
        if (!(cond)) {                                                  \
            std::ostringstream hs_check_os_;                            \
            hs_check_os_ << msg_expr;                                   \
            ::hairseg::raise((kind), hs_check_os_.str());               \
        }                                                               \
    } while (0)

#define HS_CHECK_SHAPE(cond, msg_expr) HS_CHECK(cond, ::hairseg::ErrorKind::Shape, msg_expr)
#define HS_CHECK_PARAM(cond, msg_expr) HS_CHECK(cond, ::hairseg::ErrorKind::Param, msg_expr)
#define HS_CHECK_DATA(cond, msg_expr) HS_CHECK(cond, ::hairseg::ErrorKind::Data, msg_expr)
#define HS_CHECK_CONTRACT(cond, msg_expr) HS_CHECK(cond, ::hairseg::ErrorKind::Contract, msg_expr)
