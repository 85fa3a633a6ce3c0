#include "lexroute/moe.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <numeric>

#include "lexroute/error.hpp"
#include "random_util.hpp"

namespace lexroute {

GatingNetwork GatingNetwork::zeros(std::size_t experts, std::size_t dim) {
    GatingNetwork net;
    net.experts = experts;
    net.dim = dim;
    net.weights.assign(experts * dim, 0.0);
    net.bias.assign(experts, 0.0);
    return net;
}

GatingNetwork GatingNetwork::random(std::size_t experts, std::size_t dim, std::uint64_t seed, double scale) {
    GatingNetwork net = zeros(experts, dim);
    std::mt19937_64 rng(seed);
    for (double& x : net.weights) x = scale * (2.0 * detail::uniform01(rng) - 1.0);
    return net;
}

void GatingNetwork::validate() const {
    if (experts == 0 || dim == 0) throw Error(ErrorCode::Configuration, "gating network needs N > 0 and d > 0");
    if (weights.size() != experts * dim || bias.size() != experts) {
        throw Error(ErrorCode::Dimension, "gating parameter shapes do not match N x d");
    }
    for (double x : weights) {
        if (!std::isfinite(x)) throw Error(ErrorCode::Numeric, "non-finite gating weight");
    }
    for (double x : bias) {
        if (!std::isfinite(x)) throw Error(ErrorCode::Numeric, "non-finite gating bias");
    }
}

std::vector<double> gate_logits(const Vector& query, const GatingNetwork& net) {
    if (query.dim() != net.dim) {
        throw Error(ErrorCode::Dimension,
                    "query dim " + std::to_string(query.dim()) + " != gate dim " + std::to_string(net.dim));
    }
    if (net.weights.size() != net.experts * net.dim || net.bias.size() != net.experts) {
        throw Error(ErrorCode::Dimension, "gating parameter shapes do not match N x d");
    }
    std::vector<double> logits(net.experts);
    for (std::size_t i = 0; i < net.experts; ++i) {
        double s = net.bias[i];
        for (std::size_t j = 0; j < net.dim; ++j) s += net.w(i, j) * query[j];
        logits[i] = s;
    }
    return logits;
}

GatingDistribution softmax(std::span<const double> logits) {
    if (logits.empty()) throw Error(ErrorCode::Dimension, "softmax over zero experts");
    double m = -std::numeric_limits<double>::infinity();
    for (double z : logits) {
        if (!std::isfinite(z)) throw Error(ErrorCode::Numeric, "non-finite gating logit");
        m = std::max(m, z);
    }
    GatingDistribution g;
    g.probs.resize(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        g.probs[i] = std::exp(logits[i] - m);
        sum += g.probs[i];
    }
    for (double& p : g.probs) p = std::max(p / sum, std::numeric_limits<double>::min());
    return g;
}

GatingDistribution gate(const Vector& query, const GatingNetwork& net) {
    auto logits = gate_logits(query, net);
    return softmax(logits);
}

RoutingDecision top_k(const GatingDistribution& g, std::size_t k, bool renormalize) {
    if (k == 0) throw Error(ErrorCode::Validation, "K must be at least 1");
    std::vector<std::size_t> order(g.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return g[a] > g[b]; });
    const std::size_t n = std::min(k, g.size());

    RoutingDecision d;
    d.k = k;
    d.renormalized = renormalize;
    double mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        d.active.push_back(static_cast<ExpertId>(order[i] + 1));
        d.gates_used.push_back(g[order[i]]);
        mass += g[order[i]];
    }
    if (renormalize) {
        for (double& w : d.gates_used) w /= mass;
    }
    return d;
}

// ---------------------------------------------------------------------------

void ExpertRegistry::add(ExpertProfile profile, std::shared_ptr<const ExpertHandler> handler) {
    for (const auto& p : profiles_) {
        if (p.id == profile.id) throw Error(ErrorCode::Conflict, "duplicate expert id " + std::to_string(profile.id));
    }
    if (handler) handlers_[profile.id] = std::move(handler);
    profiles_.push_back(std::move(profile));
    std::sort(profiles_.begin(), profiles_.end(),
              [](const ExpertProfile& a, const ExpertProfile& b) { return a.id < b.id; });
}

const ExpertProfile& ExpertRegistry::profile(ExpertId id) const {
    for (const auto& p : profiles_) {
        if (p.id == id) return p;
    }
    throw Error(ErrorCode::NotFound, "no expert with id " + std::to_string(id));
}

std::shared_ptr<const ExpertHandler> ExpertRegistry::handler(ExpertId id) const {
    auto it = handlers_.find(id);
    return it == handlers_.end() ? nullptr : it->second;
}

void ExpertRegistry::validate() const {
    if (profiles_.empty()) throw Error(ErrorCode::Configuration, "expert registry is empty");
    for (std::size_t i = 0; i < profiles_.size(); ++i) {
        const auto& p = profiles_[i];
        if (p.id != static_cast<ExpertId>(i + 1)) {
            throw Error(ErrorCode::Configuration, "expert ids must be contiguous from 1");
        }
        for (Task t : p.tasks) {
            if (role_for_task(t) != p.role) {
                throw Error(ErrorCode::Configuration, "expert " + std::to_string(p.id) + ": task '" +
                                                          std::string(task_name(t)) + "' does not belong to role " +
                                                          std::string(role_name(p.role)));
            }
        }
    }
}

ExecutionReport execute(const RoutingDecision& decision, const ExpertQuery& query, const ExpertRegistry& registry,
                        bool parallel) {
    if (decision.active.empty()) throw Error(ErrorCode::Internal, "routing decision selected no experts");
    std::vector<ExpertId> ids = decision.active;
    std::sort(ids.begin(), ids.end());
    std::vector<std::shared_ptr<const ExpertHandler>> handlers;
    for (ExpertId id : ids) {
        auto h = registry.handler(id);
        if (!h) throw Error(ErrorCode::Routing, "no handler registered for expert " + std::to_string(id));
        handlers.push_back(std::move(h));
    }

    auto run_one = [&](std::size_t i) -> std::pair<std::optional<ExpertOutput>, std::string> {
        try {
            ExpertOutput out = handlers[i]->run(ids[i], query);
            out.expert = ids[i];
            return {std::move(out), {}};
        } catch (const std::exception& e) {
            return {std::nullopt, e.what()};
        }
    };

    std::vector<std::pair<std::optional<ExpertOutput>, std::string>> results(ids.size());
    if (parallel && ids.size() > 1) {
        std::vector<std::future<std::pair<std::optional<ExpertOutput>, std::string>>> futures;
        for (std::size_t i = 0; i < ids.size(); ++i) futures.push_back(std::async(std::launch::async, run_one, i));
        for (std::size_t i = 0; i < ids.size(); ++i) results[i] = futures[i].get();
    } else {
        for (std::size_t i = 0; i < ids.size(); ++i) results[i] = run_one(i);
    }

    ExecutionReport report;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (results[i].first) {
            report.outputs.push_back(std::move(*results[i].first));
        } else {
            report.failures.push_back({ids[i], results[i].second});
        }
    }
    return report;
}

std::string AggregatedOutput::text() const {
    std::vector<std::string> kept;
    for (const auto& c : contributions) {
        if (c.payload.empty()) continue;
        auto covers = [&](const std::string& s) { return s.find(c.payload) != std::string::npos; };
        if (std::any_of(kept.begin(), kept.end(), covers)) continue;
        // a longer draft replaces the first one it contains, in that slot
        auto inside = std::find_if(kept.begin(), kept.end(),
                                   [&](const std::string& s) { return c.payload.find(s) != std::string::npos; });
        if (inside != kept.end()) {
            *inside = c.payload;
            kept.erase(std::remove_if(std::next(inside), kept.end(),
                                      [&](const std::string& s) { return c.payload.find(s) != std::string::npos; }),
                       kept.end());
        } else {
            kept.push_back(c.payload);
        }
    }
    std::string out;
    for (const auto& k : kept) {
        if (!out.empty()) out += "\n\n";
        out += k;
    }
    return out;
}

AggregatedOutput aggregate(const GatingDistribution& g, std::span<const ExpertOutput> outputs, bool renormalize) {
    if (outputs.empty()) throw Error(ErrorCode::Aggregation, "no expert outputs to aggregate");
    std::vector<const ExpertOutput*> sorted;
    for (const auto& o : outputs) {
        if (o.expert < 1 || static_cast<std::size_t>(o.expert) > g.size()) {
            throw Error(ErrorCode::Aggregation, "output from unknown expert " + std::to_string(o.expert));
        }
        sorted.push_back(&o);
    }
    std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) { return a->expert < b->expert; });
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i]->expert == sorted[i - 1]->expert) {
            throw Error(ErrorCode::Aggregation, "duplicate output for expert " + std::to_string(sorted[i]->expert));
        }
    }

    std::vector<double> weights;
    double mass = 0.0;
    for (const auto* o : sorted) {
        weights.push_back(g[static_cast<std::size_t>(o->expert - 1)]);
        mass += weights.back();
    }
    if (renormalize) {
        for (double& w : weights) w /= mass;
    }

    const std::size_t with_vectors =
        static_cast<std::size_t>(std::count_if(sorted.begin(), sorted.end(), [](const auto* o) { return o->vector.has_value(); }));
    AggregatedOutput out;
    if (with_vectors != 0) {
        if (with_vectors != sorted.size()) {
            throw Error(ErrorCode::Aggregation, "some expert outputs carry vectors and some do not");
        }
        const std::size_t dim = sorted.front()->vector->dim();
        std::vector<double> sum(dim, 0.0);
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            const Vector& h = *sorted[i]->vector;
            if (h.dim() != dim) throw Error(ErrorCode::Aggregation, "expert output vectors differ in dimension");
            for (std::size_t j = 0; j < dim; ++j) sum[j] += weights[i] * h[j];
        }
        out.combined = Vector(std::move(sum));
    }
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        out.contributions.push_back({sorted[i]->expert, weights[i], sorted[i]->payload});
    }
    std::stable_sort(out.contributions.begin(), out.contributions.end(),
                     [](const Contribution& a, const Contribution& b) { return a.weight > b.weight; });
    return out;
}

// ---------------------------------------------------------------------------

ExpertOutput EchoHandler::run(ExpertId id, const ExpertQuery& query) const {
    ExpertOutput out;
    out.expert = id;
    out.payload = "[" + std::string(role_name(role_)) + " #" + std::to_string(id) + "] " + query.question;
    out.vector = query.query_vector;
    return out;
}

namespace {

void replace_all(std::string& s, std::string_view from, std::string_view to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
}

}  // namespace

ExpertOutput TemplateHandler::run(ExpertId id, const ExpertQuery& query) const {
    std::string text = template_;
    replace_all(text, "{{question}}", query.question);
    replace_all(text, "{{role}}", role_name(role_));
    replace_all(text, "{{top_document}}", query.documents.empty() ? "" : query.documents.front().document->id);
    replace_all(text, "{{top_title}}", query.documents.empty() ? "" : query.documents.front().document->title);
    ExpertOutput out;
    out.expert = id;
    out.payload = std::move(text);
    return out;
}

GenerationHandler::GenerationHandler(std::shared_ptr<const GenerationBackend> backend,
                                     std::shared_ptr<const Embedder> embedder, std::size_t max_tokens)
    : backend_(std::move(backend)), embedder_(std::move(embedder)), max_tokens_(max_tokens) {
    if (!backend_ || !embedder_) throw Error(ErrorCode::Configuration, "generation handler needs backend and embedder");
}

ExpertOutput GenerationHandler::run(ExpertId id, const ExpertQuery& query) const {
    GenerationRequest req;
    req.query = query.question;
    req.documents = query.documents;
    req.kg_context = query.kg_context;
    req.max_tokens = max_tokens_;
    ResponseDraft draft = generate(req, *backend_);
    ExpertOutput out;
    out.expert = id;
    out.payload = draft.text();
    out.vector = embedder_->embed(out.payload);
    out.citations = draft.citations;
    return out;
}

std::shared_ptr<const ExpertHandler> make_handler(const ExpertProfile& p, const HandlerContext& ctx) {
    const auto& params = p.handler_params;
    auto get_size = [&](const char* key, std::size_t fallback) {
        return params.contains(key) ? params[key].get<std::size_t>() : fallback;
    };
    if (p.handler_kind == "echo") return std::make_shared<EchoHandler>(p.role);
    if (p.handler_kind == "template") {
        if (!params.contains("template") || !params["template"].is_string()) {
            throw Error(ErrorCode::Configuration, "template expert needs handler_params.template");
        }
        return std::make_shared<TemplateHandler>(p.role, params["template"].get<std::string>());
    }
    if (p.handler_kind == "extractive_mock") {
        auto backend = std::make_shared<ExtractiveMockBackend>(ctx.embedder, get_size("sentences", 3));
        return std::make_shared<GenerationHandler>(backend, ctx.embedder, get_size("max_tokens", 256));
    }
    if (p.handler_kind == "external_http") {
        if (!params.contains("url") || !params["url"].is_string()) {
            throw Error(ErrorCode::Configuration, "external_http expert needs handler_params.url");
        }
        auto backend = std::make_shared<ExternalHttpBackend>(
            params["url"].get<std::string>(), std::chrono::milliseconds(get_size("timeout_ms", 5000)),
            ctx.http ? ctx.http : make_default_http_client());
        return std::make_shared<GenerationHandler>(backend, ctx.embedder, get_size("max_tokens", 256));
    }
    throw Error(ErrorCode::Configuration, "unknown handler_kind '" + p.handler_kind + "'");
}

std::vector<ExpertProfile> parse_expert_profiles(const nlohmann::json& j) {
    if (!j.is_array()) throw Error(ErrorCode::Configuration, "expert registry must be a JSON array");
    std::vector<ExpertProfile> out;
    for (const auto& e : j) {
        if (!e.is_object()) throw Error(ErrorCode::Configuration, "expert entry must be an object");
        for (auto it = e.begin(); it != e.end(); ++it) {
            const auto& k = it.key();
            if (k != "id" && k != "role" && k != "tasks" && k != "handler_kind" && k != "handler_params") {
                throw Error(ErrorCode::Configuration, "unknown expert field '" + k + "'");
            }
        }
        try {
            ExpertProfile p;
            p.id = e.at("id").get<int>();
            p.role = parse_role(e.at("role").get<std::string>());
            for (const auto& t : e.at("tasks")) p.tasks.insert(parse_task(t.get<std::string>()));
            p.handler_kind = e.at("handler_kind").get<std::string>();
            if (e.contains("handler_params")) p.handler_params = e["handler_params"];
            out.push_back(std::move(p));
        } catch (const nlohmann::json::exception& ex) {
            throw Error(ErrorCode::Configuration, std::string("bad expert entry: ") + ex.what());
        }
    }
    return out;
}

nlohmann::json expert_profiles_to_json(const std::vector<ExpertProfile>& profiles) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : profiles) {
        nlohmann::json tasks = nlohmann::json::array();
        for (Task t : p.tasks) tasks.push_back(task_name(t));
        arr.push_back({{"id", p.id},
                       {"role", role_name(p.role)},
                       {"tasks", tasks},
                       {"handler_kind", p.handler_kind},
                       {"handler_params", p.handler_params}});
    }
    return arr;
}

ExpertRegistry build_registry(const std::vector<ExpertProfile>& profiles, const HandlerContext& ctx) {
    ExpertRegistry reg;
    for (const auto& p : profiles) reg.add(p, make_handler(p, ctx));
    reg.validate();
    return reg;
}

std::vector<ExpertProfile> default_expert_profiles() {
    std::vector<ExpertProfile> out;
    ExpertId id = 1;
    for (Role r : kAllRoles) {
        ExpertProfile p;
        p.id = id++;
        p.role = r;
        for (Task t : kAllTasks) {
            if (role_for_task(t) == r) p.tasks.insert(t);
        }
        p.handler_kind = "extractive_mock";
        p.handler_params = {{"sentences", r == Role::Researcher || r == Role::Advisor ? 3 : 2}};
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace lexroute
