#pragma once

#include <stdexcept>
#include <string>

namespace remul {

// Base of every error the library raises. `kind()` is the stable,
// machine-readable name written into CLI error records.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define REMUL_DEFINE_ERROR(Name)                                               \
    class Name : public Error {                                                \
    public:                                                                    \
        explicit Name(const std::string& message) : Error(#Name, message) {}   \
    }

REMUL_DEFINE_ERROR(MalformedTrace);
REMUL_DEFINE_ERROR(EmptyTrace);
REMUL_DEFINE_ERROR(SpanOutOfBounds);
REMUL_DEFINE_ERROR(ShapeMismatch);
REMUL_DEFINE_ERROR(NonFiniteLoss);
REMUL_DEFINE_ERROR(CountMismatch);
REMUL_DEFINE_ERROR(UnknownDataset);
REMUL_DEFINE_ERROR(TransportError);
REMUL_DEFINE_ERROR(ConfigError);
REMUL_DEFINE_ERROR(PreconditionError);
REMUL_DEFINE_ERROR(UnknownRun);

#undef REMUL_DEFINE_ERROR

class SchemaError : public Error {
public:
    SchemaError(const std::string& message, std::size_t line)
        : Error("SchemaError", "line " + std::to_string(line) + ": " + message), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace remul
