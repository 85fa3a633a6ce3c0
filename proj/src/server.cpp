#include "lexroute/server.hpp"

#include <httplib.h>

#include <chrono>

namespace lexroute {

int http_status(ErrorCode code) {
    switch (code) {
        case ErrorCode::BadRequest:
        case ErrorCode::Validation:
        case ErrorCode::Parse:
        case ErrorCode::Dimension:
        case ErrorCode::Normalization:
        case ErrorCode::DegenerateInput:
        case ErrorCode::Template:
        case ErrorCode::Mapping:
        case ErrorCode::UndefinedMetric: return 400;
        case ErrorCode::Unauthorized: return 401;
        case ErrorCode::Forbidden: return 403;
        case ErrorCode::NotFound:
        case ErrorCode::Lookup: return 404;
        case ErrorCode::Conflict:
        case ErrorCode::IllegalTransition:
        case ErrorCode::IndexEmpty: return 409;
        case ErrorCode::UnsupportedMediaType: return 415;
        case ErrorCode::Grounding: return 422;
        case ErrorCode::Backend: return 502;
        case ErrorCode::BackendUnreachable: return 503;
        case ErrorCode::Numeric:
        case ErrorCode::Routing:
        case ErrorCode::Aggregation:
        case ErrorCode::Configuration:
        case ErrorCode::Checksum:
        case ErrorCode::Version:
        case ErrorCode::Io:
        case ErrorCode::Internal: return 500;
    }
    return 500;
}

nlohmann::json error_body(ErrorCode code, const std::string& message) {
    return {{"error", std::string(error_code_name(code))}, {"message", message}};
}

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
    send_json(res, http_status(code), error_body(code, message));
}

nlohmann::json parse_body(const httplib::Request& req) {
    const std::string ct = req.get_header_value("Content-Type");
    if (ct.rfind("application/json", 0) != 0) {
        throw Error(ErrorCode::UnsupportedMediaType, "request body must be application/json");
    }
    try {
        nlohmann::json j = nlohmann::json::parse(req.body);
        if (!j.is_object()) throw Error(ErrorCode::BadRequest, "request body must be a JSON object");
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Parse, std::string("malformed JSON body: ") + e.what());
    }
}

std::string string_field(const nlohmann::json& j, const char* key, bool required, const std::string& fallback = {}) {
    if (!j.contains(key) || j[key].is_null()) {
        if (required) throw Error(ErrorCode::Validation, std::string("missing field '") + key + "'");
        return fallback;
    }
    if (!j[key].is_string()) throw Error(ErrorCode::Validation, std::string("field '") + key + "' must be a string");
    return j[key].get<std::string>();
}

void only_keys(const nlohmann::json& j, std::initializer_list<const char*> keys) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : keys) ok = ok || it.key() == k;
        if (!ok) throw Error(ErrorCode::Validation, "unknown field '" + it.key() + "'");
    }
}

ActorRole actor_role(AuthRole r) {
    switch (r) {
        case AuthRole::Consultant: return ActorRole::Consultant;
        case AuthRole::Researcher: return ActorRole::Researcher;
        case AuthRole::Advisor: return ActorRole::Advisor;
        case AuthRole::Paralegal: return ActorRole::Paralegal;
        case AuthRole::Admin: return ActorRole::System;
    }
    return ActorRole::System;
}

std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

}  // namespace

ApiServer::ApiServer(Engine& engine) : engine_(engine), http_(std::make_unique<httplib::Server>()) { routes(); }

ApiServer::~ApiServer() { stop(); }

std::optional<AuthRole> ApiServer::authenticate(const std::string& header) const {
    const std::string prefix = "Bearer ";
    if (header.rfind(prefix, 0) != 0) return std::nullopt;
    const auto& tokens = engine_.config().tokens;
    auto it = tokens.find(header.substr(prefix.size()));
    if (it == tokens.end()) return std::nullopt;
    return it->second;
}

void ApiServer::routes() {
    using httplib::Request;
    using httplib::Response;

    // Resolves the caller's role. Without configured tokens the server runs
    // open and takes the role from X-Role (default consultant).
    auto caller = [this](const Request& req) -> AuthRole {
        if (engine_.config().tokens.empty()) {
            const std::string r = req.get_header_value("X-Role");
            return r.empty() ? AuthRole::Consultant : parse_auth_role(r);
        }
        auto role = authenticate(req.get_header_value("Authorization"));
        if (!role) throw Error(ErrorCode::Unauthorized, "missing or unknown bearer token");
        return *role;
    };
    auto require = [](AuthRole have, std::initializer_list<AuthRole> allowed) {
        for (AuthRole r : allowed) {
            if (r == have) return;
        }
        throw Error(ErrorCode::Forbidden, "role " + std::string(auth_role_name(have)) + " may not do this");
    };
    auto guarded = [](auto fn) {
        return [fn](const Request& req, Response& res) {
            try {
                fn(req, res);
            } catch (const Error& e) {
                send_error(res, e.code(), e.what());
            } catch (const std::exception& e) {
                send_error(res, ErrorCode::Internal, e.what());
            }
        };
    };

    http_->set_error_handler([](const Request&, Response& res) {
        if (res.body.empty()) {
            const ErrorCode code = res.status == 404 ? ErrorCode::NotFound : ErrorCode::BadRequest;
            send_json(res, res.status, error_body(code, "no such endpoint"));
        }
    });

    http_->Get("/v1/healthz", guarded([this](const Request&, Response& res) {
                   send_json(res, 200, {{"status", "ok"},
                                        {"documents", engine_.index()->size()},
                                        {"policy_version", engine_.gating().version}});
               }));

    http_->Post("/v1/query", guarded([=, this](const Request& req, Response& res) {
                    caller(req);
                    auto body = parse_body(req);
                    only_keys(body, {"text", "case_id"});
                    const std::string text = string_field(body, "text", true);
                    QueryResult r = engine_.query(text, string_field(body, "case_id", false));
                    send_json(res, 200, query_result_to_json(r));
                }));

    http_->Get(R"(/v1/cases/([^/]+))", guarded([=, this](const Request& req, Response& res) {
                   caller(req);
                   send_json(res, 200, engine_.get_case(req.matches[1]).to_json());
               }));

    http_->Post(R"(/v1/cases/([^/]+)/review)", guarded([=, this](const Request& req, Response& res) {
                    AuthRole role = caller(req);
                    require(role, {AuthRole::Advisor});
                    auto body = parse_body(req);
                    only_keys(body, {"verdict", "notes", "reviewer"});
                    const Verdict v = parse_verdict(string_field(body, "verdict", true));
                    Actor actor{ActorRole::Advisor, string_field(body, "reviewer", false, "advisor")};
                    const std::string id = req.matches[1];
                    CaseState s = engine_.review(id, v, string_field(body, "notes", false), actor);
                    send_json(res, 200, {{"case_id", id}, {"state", std::string(case_state_name(s))}});
                }));

    http_->Post(R"(/v1/cases/([^/]+)/finalize)", guarded([=, this](const Request& req, Response& res) {
                    AuthRole role = caller(req);
                    require(role, {AuthRole::Paralegal});
                    auto body = parse_body(req);
                    only_keys(body, {"template_id", "signer"});
                    Actor actor{ActorRole::Paralegal, string_field(body, "signer", false, "paralegal")};
                    FinalDocument d =
                        engine_.finalize(req.matches[1], string_field(body, "template_id", false, "default"), actor);
                    send_json(res, 200,
                              {{"case_id", d.case_id},
                               {"state", "Released"},
                               {"text", d.text},
                               {"rendered", d.rendered},
                               {"citations", d.citations},
                               {"template_id", d.template_id},
                               {"advisor_approval", {{"actor", d.advisor_approval.actor},
                                                     {"timestamp_ms", d.advisor_approval.timestamp_ms}}},
                               {"paralegal_signoff", {{"actor", d.paralegal_signoff.actor},
                                                      {"timestamp_ms", d.paralegal_signoff.timestamp_ms}}}});
                }));

    http_->Post("/v1/feedback", guarded([=, this](const Request& req, Response& res) {
                    AuthRole role = caller(req);
                    require(role, {AuthRole::Advisor, AuthRole::Paralegal});
                    auto body = parse_body(req);
                    if (body.contains("role") && body["role"].is_string() &&
                        parse_actor_role(body["role"].get<std::string>()) != actor_role(role)) {
                        throw Error(ErrorCode::Forbidden, "feedback role does not match the caller's token");
                    }
                    body["role"] = std::string(actor_role_name(actor_role(role)));
                    if (!body.contains("timestamp_ms")) body["timestamp_ms"] = now_ms();
                    FeedbackRecord rec = feedback_from_json(body);
                    FeedbackOutcome out = engine_.submit_feedback(std::move(rec));
                    send_json(res, 200, {{"reward", out.reward},
                                         {"trajectories", out.trajectories},
                                         {"buffered", out.buffered},
                                         {"policy_version", engine_.gating().version}});
                }));

    http_->Get("/v1/review/queue", guarded([=, this](const Request& req, Response& res) {
                   caller(req);
                   const std::string filter = req.get_param_value("state");
                   auto index = engine_.index();
                   const std::int64_t now = now_ms();
                   nlohmann::json items = nlohmann::json::array();
                   for (const Case& c : engine_.review_queue()) {
                       if (!filter.empty() && filter != case_state_name(c.state())) continue;
                       nlohmann::json docs = nlohmann::json::array();
                       for (const auto& r : c.research()) {
                           for (const auto& d : r.documents) {
                               nlohmann::json item{{"id", d.document_id}, {"score", d.score}};
                               if (auto rec = index->find(d.document_id)) {
                                   item["title"] = rec->title;
                                   item["preview"] = rec->text.substr(0, 160);
                               }
                               docs.push_back(std::move(item));
                           }
                       }
                       nlohmann::json gates = nlohmann::json::array();
                       for (const auto& r : c.routing()) {
                           gates.push_back({{"active", r.active}, {"gates_used", r.gates_used}, {"g", r.gates}});
                       }
                       items.push_back({{"case_id", c.id()},
                                        {"state", std::string(case_state_name(c.state()))},
                                        {"queries", c.queries()},
                                        {"answer", c.aggregated_text()},
                                        {"citations", c.citations()},
                                        {"documents", docs},
                                        {"gate", gates},
                                        {"age_ms", std::max<std::int64_t>(0, now - c.opened_at())}});
                   }
                   send_json(res, 200, {{"items", items}});
               }));

    http_->Get("/v1/experts", guarded([=, this](const Request& req, Response& res) {
                   caller(req);
                   send_json(res, 200, {{"experts", engine_.experts_json()}});
               }));

    http_->Post("/v1/admin/update-policy", guarded([=, this](const Request& req, Response& res) {
                    require(caller(req), {AuthRole::Admin});
                    if (!req.body.empty()) parse_body(req);
                    UpdateOutcome u = engine_.update_policy();
                    send_json(res, 200, {{"applied", u.applied},
                                         {"policy_version", u.policy_version},
                                         {"batch", u.batch},
                                         {"baseline", u.baseline},
                                         {"message", u.message}});
                }));

    http_->Get("/v1/metrics", guarded([=, this](const Request& req, Response& res) {
                   caller(req);
                   send_json(res, 200, metrics_to_json(engine_.metrics()));
               }));
}

int ApiServer::bind(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = http_->bind_to_any_port(host);
        if (bound < 0) throw Error(ErrorCode::Io, "cannot bind " + host);
    } else if (!http_->bind_to_port(host, port)) {
        throw Error(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
    }
    return bound;
}

void ApiServer::serve() { http_->listen_after_bind(); }

int ApiServer::start(const std::string& host, int port) {
    const int bound = bind(host, port);
    thread_ = std::thread([this] { serve(); });
    http_->wait_until_ready();
    return bound;
}

void ApiServer::stop() {
    if (http_) http_->stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace lexroute
