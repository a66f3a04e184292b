#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace posebridge {

// Exit-code discipline: validation/contract failures map to 1, I/O failures to 2.
enum class ErrorKind : uint8_t { validation, io };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return kind_ == ErrorKind::io ? 2 : 1; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(const std::string& msg) {
    throw Error(ErrorKind::validation, msg);
}

[[noreturn]] inline void fail_io(const std::string& msg) {
    throw Error(ErrorKind::io, msg);
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

}  // namespace posebridge
