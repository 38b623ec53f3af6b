#pragma once

#include <stdexcept>
#include <string>

namespace hpnp {

enum class Errc {
    unsupported_format,
    unsupported_depth,
    non_grayscale,
    truncated_file,
    io,
    dimension_mismatch,
    invalid_argument,
    numerical,
    protocol,
    process,
    timeout,
};

inline const char* errc_name(Errc code)
{
    switch (code) {
    case Errc::unsupported_format: return "unsupported format";
    case Errc::unsupported_depth: return "unsupported depth";
    case Errc::non_grayscale: return "non-grayscale image";
    case Errc::truncated_file: return "truncated file";
    case Errc::io: return "i/o error";
    case Errc::dimension_mismatch: return "dimension mismatch";
    case Errc::invalid_argument: return "invalid argument";
    case Errc::numerical: return "numerical error";
    case Errc::protocol: return "protocol error";
    case Errc::process: return "process error";
    case Errc::timeout: return "timeout";
    }
    return "unknown error";
}

/// Every failure raised by the library carries one of the Errc categories so
/// callers can branch on the kind without parsing messages.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code)
    {
    }

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

} // namespace hpnp
