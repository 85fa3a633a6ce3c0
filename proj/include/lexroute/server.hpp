#pragma once

#include <memory>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "lexroute/engine.hpp"
#include "lexroute/error.hpp"

namespace httplib {
class Server;
}

namespace lexroute {

/// HTTP status used for each error code.
int http_status(ErrorCode code);

/// {"error": <code name>, "message": ...}
nlohmann::json error_body(ErrorCode code, const std::string& message);

/// JSON API over an Engine. Endpoints are listed in docs/api.md.
class ApiServer {
public:
    explicit ApiServer(Engine& engine);
    ~ApiServer();

    ApiServer(const ApiServer&) = delete;
    ApiServer& operator=(const ApiServer&) = delete;

    /// Binds without serving. Port 0 picks a free port. Returns the bound
    /// port; throws Io when the address cannot be bound.
    int bind(const std::string& host, int port);
    /// Serves on the bound socket until stop(). Blocks.
    void serve();
    /// bind() then serve() on a background thread; returns the port.
    int start(const std::string& host, int port);
    void stop();

    /// Role for a bearer token, or nullopt when it is unknown.
    std::optional<AuthRole> authenticate(const std::string& authorization_header) const;

private:
    void routes();

    Engine& engine_;
    std::unique_ptr<httplib::Server> http_;
    std::thread thread_;
};

}  // namespace lexroute
