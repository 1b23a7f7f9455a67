#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace uamsa {

// Base for everything thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operand shapes incompatible; message names both shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Spatial geometry impossible (non-integral conv output, upsample shrink, ...).
class GeometryError : public Error {
public:
    using Error::Error;
};

// Bad scalar argument to an operation (p >= 1, T < 1, empty input, ...).
class ParamError : public Error {
public:
    using Error::Error;
};

// Config file / flag problems. CLI maps this to exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

// On-disk format violation. Carries the byte offset where parsing failed.
class FormatError : public Error {
public:
    FormatError(const std::string& msg, std::uint64_t byte_offset)
        : Error(msg + " (at byte " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    explicit FormatError(const std::string& msg) : Error(msg), offset(0) {}
    std::uint64_t offset;
};

// Checkpoint parameter-name set does not match the model schema.
class SchemaError : public Error {
public:
    SchemaError(const std::string& msg,
                std::vector<std::string> missing_names,
                std::vector<std::string> unexpected_names)
        : Error(msg), missing(std::move(missing_names)), unexpected(std::move(unexpected_names)) {}
    std::vector<std::string> missing;
    std::vector<std::string> unexpected;
};

// Non-finite value detected. CLI maps this to exit code 4.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace uamsa
