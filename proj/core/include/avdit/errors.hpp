#pragma once

#include <stdexcept>
#include <string>

namespace avdit {

/// Base of every error thrown by the library. `kind()` is a stable short tag
/// ("dimension", "parse", ...) used by the CLI for its one-line error report.
class Error : public std::runtime_error {
   public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

   private:
    std::string kind_;
};

class DimensionError : public Error {
   public:
    explicit DimensionError(const std::string& message) : Error("dimension", message) {}
};

class DomainError : public Error {
   public:
    explicit DomainError(const std::string& message) : Error("domain", message) {}
};

class InputError : public Error {
   public:
    explicit InputError(const std::string& message) : Error("input", message) {}
};

class ParseError : public Error {
   public:
    explicit ParseError(const std::string& message) : Error("parse", message) {}
};

/// CTC target cannot be emitted in the available number of frames.
class AlignmentError : public Error {
   public:
    explicit AlignmentError(const std::string& message) : Error("alignment", message) {}
};

class UsageError : public Error {
   public:
    explicit UsageError(const std::string& message) : Error("usage", message) {}
};

}  // namespace avdit
