#ifndef DIME_CORE_ERRORS_HPP
#define DIME_CORE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace dime {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// A path could not be read or written.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// File contents are not in a format we handle (bad magic, interlacing,
// palette images, corrupt chunks...).
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Decoded image does not have exactly 3 channels.
class ChannelError : public Error {
public:
    explicit ChannelError(const std::string& msg) : Error(msg) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Bad configuration key or value.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class CheckpointError : public Error {
public:
    enum class Kind { CorruptHeader, Truncated, UnknownSchema, ConfigMismatch };
    CheckpointError(Kind kind, const std::string& msg) : Error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

// Raised when the training loop has to halt (non-finite loss or gradient).
class TrainingError : public Error {
public:
    explicit TrainingError(const std::string& msg) : Error(msg) {}
};

}  // namespace dime

#endif
