#pragma once

#include <stdexcept>
#include <string>

namespace segdino {

/// Base for every error raised by the library. `kind()` names the category
/// so the CLI can map failures onto stable exit codes.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual const char* kind() const noexcept = 0;
};

#define SEGDINO_DEFINE_ERROR(Name, Label)                                   \
    class Name : public Error {                                             \
    public:                                                                 \
        explicit Name(const std::string& what) : Error(what) {}             \
        const char* kind() const noexcept override { return Label; }        \
    };

SEGDINO_DEFINE_ERROR(ShapeError, "shape")
SEGDINO_DEFINE_ERROR(ParameterError, "parameter")
SEGDINO_DEFINE_ERROR(NumericError, "numeric")
SEGDINO_DEFINE_ERROR(DataError, "data")
SEGDINO_DEFINE_ERROR(DomainError, "domain")
SEGDINO_DEFINE_ERROR(FormatError, "format")
SEGDINO_DEFINE_ERROR(UsageError, "usage")
SEGDINO_DEFINE_ERROR(IoError, "io")
SEGDINO_DEFINE_ERROR(ValidationError, "validation")

#undef SEGDINO_DEFINE_ERROR

}  // namespace segdino
