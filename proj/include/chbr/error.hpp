#pragma once

#include <stdexcept>
#include <string>

namespace chbr {

enum class ErrorKind {
    precondition,
    shape,
    template_error,
    degenerate_input,
    lookup,
    numeric,
    provider,
    parse,
    store_format,
};

class Error : public std::runtime_error {
   public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

   private:
    ErrorKind kind_;
};

inline void require(bool ok, const std::string& what, ErrorKind kind = ErrorKind::precondition) {
    if (!ok) throw Error(kind, what);
}

// Exit code mapping used by the command line tool.
inline int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::provider:
            return 3;
        case ErrorKind::parse:
        case ErrorKind::store_format:
            return 4;
        default:
            return 2;
    }
}

}  // namespace chbr
