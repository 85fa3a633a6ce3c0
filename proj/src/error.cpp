#include "lexroute/error.hpp"

namespace lexroute {

std::string_view error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::BadRequest: return "bad_request";
        case ErrorCode::Validation: return "validation_error";
        case ErrorCode::Parse: return "parse_error";
        case ErrorCode::Dimension: return "dimension_error";
        case ErrorCode::Normalization: return "normalization_error";
        case ErrorCode::Numeric: return "numeric_error";
        case ErrorCode::Lookup: return "lookup_error";
        case ErrorCode::Conflict: return "conflict";
        case ErrorCode::IndexEmpty: return "index_empty";
        case ErrorCode::DegenerateInput: return "degenerate_input";
        case ErrorCode::Routing: return "routing_error";
        case ErrorCode::Aggregation: return "aggregation_error";
        case ErrorCode::Grounding: return "grounding_error";
        case ErrorCode::BackendUnreachable: return "backend_unreachable";
        case ErrorCode::Backend: return "backend_error";
        case ErrorCode::IllegalTransition: return "illegal_transition";
        case ErrorCode::Unauthorized: return "unauthorized";
        case ErrorCode::Forbidden: return "forbidden";
        case ErrorCode::NotFound: return "not_found";
        case ErrorCode::Template: return "template_error";
        case ErrorCode::Mapping: return "mapping_error";
        case ErrorCode::Configuration: return "configuration_error";
        case ErrorCode::Checksum: return "checksum_error";
        case ErrorCode::Version: return "version_error";
        case ErrorCode::UnsupportedMediaType: return "unsupported_media_type";
        case ErrorCode::UndefinedMetric: return "undefined_metric";
        case ErrorCode::Io: return "io_error";
        case ErrorCode::Internal: return "internal_error";
    }
    return "internal_error";
}

}  // namespace lexroute
