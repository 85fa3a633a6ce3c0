#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lexroute {

// Closed set of failure kinds. The HTTP layer maps each one to a status code
// and reports the snake_case name as the machine-readable error code.
enum class ErrorCode {
    BadRequest,
    Validation,
    Parse,
    Dimension,
    Normalization,
    Numeric,
    Lookup,
    Conflict,
    IndexEmpty,
    DegenerateInput,
    Routing,
    Aggregation,
    Grounding,
    BackendUnreachable,
    Backend,
    IllegalTransition,
    Unauthorized,
    Forbidden,
    NotFound,
    Template,
    Mapping,
    Configuration,
    Checksum,
    Version,
    UnsupportedMediaType,
    UndefinedMetric,
    Io,
    Internal,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace lexroute
