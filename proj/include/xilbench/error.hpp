#pragma once

#include <stdexcept>
#include <string>

namespace xilbench {

/// Base of every error the library throws. `kind()` is a stable short tag
/// used by the CLI and HTTP layers to map failures onto exit/status codes.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define XILBENCH_ERROR(Name, tag)                                      \
    class Name : public Error {                                        \
    public:                                                            \
        explicit Name(const std::string& what) : Error(tag, what) {}   \
    protected:                                                         \
        Name(std::string kind, const std::string& what)                \
            : Error(std::move(kind), what) {}                          \
    };

XILBENCH_ERROR(DimensionError, "dimension")
XILBENCH_ERROR(ParameterError, "parameter")
XILBENCH_ERROR(DataError, "data")
XILBENCH_ERROR(FormatError, "format")
XILBENCH_ERROR(CountError, "count")
XILBENCH_ERROR(WorkflowError, "workflow")
XILBENCH_ERROR(NameCollisionError, "name-collision")
XILBENCH_ERROR(DegeneracyError, "degeneracy")
XILBENCH_ERROR(UnsupportedError, "unsupported")

#undef XILBENCH_ERROR

class ChannelError : public DimensionError {
public:
    explicit ChannelError(const std::string& what) : DimensionError("channel", what) {}
};

}  // namespace xilbench
