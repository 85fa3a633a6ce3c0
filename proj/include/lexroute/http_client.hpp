#pragma once

#include <chrono>
#include <memory>
#include <string>

#include <json.hpp>

namespace lexroute {

/// Minimal JSON-over-HTTP client used by every external adapter (embedders,
/// generation backends, expert handlers). Connection failures throw
/// BackendUnreachable, timeouts and non-2xx replies throw Backend.
class HttpClient {
public:
    virtual ~HttpClient() = default;
    virtual nlohmann::json post_json(const std::string& url, const nlohmann::json& body,
                                     std::chrono::milliseconds timeout) = 0;
};

std::shared_ptr<HttpClient> make_default_http_client();

}  // namespace lexroute
