#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace syncdiff {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
    /// Short machine-readable category used by the CLI error JSON.
    virtual const char* kind() const noexcept { return "error"; }
};

/// Malformed mesh file. Carries either a 1-based line number (text formats)
/// or a byte offset (binary formats).
class ParseError : public Error {
public:
    ParseError(const std::string& msg, std::size_t line, std::size_t byte_offset = 0)
        : Error(msg), line_(line), byte_offset_(byte_offset) {}
    std::size_t line() const noexcept { return line_; }
    std::size_t byte_offset() const noexcept { return byte_offset_; }
    const char* kind() const noexcept override { return "parse_error"; }

private:
    std::size_t line_;
    std::size_t byte_offset_;
};

class MeshError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "mesh_error"; }
};

class SolverError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "solver_error"; }
};

class ConfigError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "config_error"; }
};

} // namespace syncdiff
