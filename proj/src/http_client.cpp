#include "lexroute/http_client.hpp"

#include <httplib.h>

#include <regex>

#include "lexroute/error.hpp"

namespace lexroute {
namespace {

struct ParsedUrl {
    std::string origin;  // scheme://host:port
    std::string path;
};

ParsedUrl split_url(const std::string& url) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) {
        throw Error(ErrorCode::Configuration, "malformed endpoint URL: " + url);
    }
    return {m[1].str(), m[2].matched ? m[2].str() : std::string("/")};
}

class HttplibClient final : public HttpClient {
public:
    nlohmann::json post_json(const std::string& url, const nlohmann::json& body,
                             std::chrono::milliseconds timeout) override {
        auto [origin, path] = split_url(url);
        httplib::Client cli(origin);
        cli.set_connection_timeout(timeout);
        cli.set_read_timeout(timeout);
        cli.set_write_timeout(timeout);
        auto res = cli.Post(path, body.dump(), "application/json");
        if (!res) {
            auto err = res.error();
            if (err == httplib::Error::Read || err == httplib::Error::Write) {
                throw Error(ErrorCode::Backend, "timeout or transport failure talking to " + url);
            }
            throw Error(ErrorCode::BackendUnreachable,
                        "backend unreachable: " + url + " (" + httplib::to_string(err) + ")");
        }
        if (res->status < 200 || res->status >= 300) {
            throw Error(ErrorCode::Backend, "backend " + url + " returned HTTP " + std::to_string(res->status));
        }
        try {
            return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::Backend, "backend " + url + " returned invalid JSON: " + e.what());
        }
    }
};

}  // namespace

std::shared_ptr<HttpClient> make_default_http_client() {
    return std::make_shared<HttplibClient>();
}

}  // namespace lexroute
