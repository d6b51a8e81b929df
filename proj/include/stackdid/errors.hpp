#pragma once

#include <stdexcept>
#include <string>

namespace stackdid {

/// Exit/status codes shared by the library and the command line tool.
/// 0 means success; these are the failure categories.
enum class errc : int {
    io_error = 1,          ///< unreadable, unparseable, or unwritable files
    validation_error = 2,  ///< structurally valid input that violates a contract
};

/// Base class for all errors thrown by this library.
class error : public std::runtime_error {
public:
    error(errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

    [[nodiscard]] errc code() const noexcept { return code_; }
    [[nodiscard]] int exit_code() const noexcept { return static_cast<int>(code_); }

private:
    errc code_;
};

/// File and parse failures.
class io_error : public error {
public:
    explicit io_error(const std::string& what) : error(errc::io_error, what) {}
};

/// Contract violations: bad parameters, inconsistent counts, degenerate inputs.
class validation_error : public error {
public:
    explicit validation_error(const std::string& what) : error(errc::validation_error, what) {}
};

}  // namespace stackdid
