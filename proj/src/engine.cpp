#include "lexroute/engine.hpp"

#include <zlib.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "lexroute/error.hpp"
#include "lexroute/generation.hpp"

namespace lexroute {

std::string_view auth_role_name(AuthRole r) {
    switch (r) {
        case AuthRole::Consultant: return "consultant";
        case AuthRole::Researcher: return "researcher";
        case AuthRole::Advisor: return "advisor";
        case AuthRole::Paralegal: return "paralegal";
        case AuthRole::Admin: return "admin";
    }
    return "consultant";
}

AuthRole parse_auth_role(std::string_view s) {
    for (AuthRole r : {AuthRole::Consultant, AuthRole::Researcher, AuthRole::Advisor, AuthRole::Paralegal,
                       AuthRole::Admin}) {
        if (fold_text(s) == auth_role_name(r)) return r;
    }
    throw Error(ErrorCode::Configuration, "unknown role '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

// Strict object reader: every key must be consumed, types are checked.
class Section {
public:
    Section(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw Error(ErrorCode::Configuration, name_ + " must be an object");
    }

    template <typename T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw Error(ErrorCode::Configuration, name_ + "." + key + " has the wrong type");
        }
    }

    const nlohmann::json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) {
                throw Error(ErrorCode::Configuration, "unknown key '" + it.key() + "' in " + name_);
            }
        }
    }

private:
    const nlohmann::json& j_;
    std::string name_;
    std::set<std::string> seen_;
};

}  // namespace

void ApiConfig::validate() const {
    if (port < 0 || port > 65535) throw Error(ErrorCode::Configuration, "port outside 0..65535");
    if (embedder.kind != "hash" && embedder.kind != "http") {
        throw Error(ErrorCode::Configuration, "embedder.kind must be hash or http");
    }
    if (embedder.dim == 0) throw Error(ErrorCode::Configuration, "embedder.dim must be positive");
    if (embedder.kind == "http" && embedder.url.empty()) {
        throw Error(ErrorCode::Configuration, "embedder.url is required for the http embedder");
    }
    retrieval.validate();
    if (moe.top_k == 0) throw Error(ErrorCode::Configuration, "moe.top_k must be >= 1");
    if (!(moe.gate_scale >= 0.0)) throw Error(ErrorCode::Configuration, "moe.gate_scale must be >= 0");
    ppo.validate();
    reward.validate();
    transe.validate();
    if (experts.empty()) throw Error(ErrorCode::Configuration, "at least one expert is required");
    for (const auto& t : eval_tasks) t.validate();
    if (abstention_window == 0) throw Error(ErrorCode::Configuration, "abstention_window must be positive");
}

std::string ApiConfig::resolve(const std::string& path) const {
    if (path.empty()) return path;
    std::filesystem::path p(path);
    return p.is_absolute() ? path : (base_dir / p).lexically_normal().string();
}

ApiConfig parse_api_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    ApiConfig cfg;
    cfg.base_dir = base_dir;
    Section top(j, "config");
    top.read("host", cfg.host);
    top.read("port", cfg.port);
    top.read("snapshot", cfg.snapshot);
    top.read("journal", cfg.journal);
    top.read("audit_dir", cfg.audit_dir);
    top.read("abstention_window", cfg.abstention_window);

    if (auto* e = top.child("embedder")) {
        Section s(*e, "embedder");
        s.read("kind", cfg.embedder.kind);
        s.read("dim", cfg.embedder.dim);
        s.read("ngram", cfg.embedder.ngram);
        s.read("seed", cfg.embedder.seed);
        s.read("url", cfg.embedder.url);
        s.read("timeout_ms", cfg.embedder.timeout_ms);
        s.finish();
    }
    if (auto* e = top.child("retrieval")) {
        Section s(*e, "retrieval");
        s.read("theta", cfg.retrieval.theta);
        s.read("alpha", cfg.retrieval.alpha);
        s.read("beta", cfg.retrieval.beta);
        s.read("max_results", cfg.retrieval.max_results);
        std::string mode(fusion_mode_name(cfg.retrieval.fusion_mode));
        s.read("fusion_mode", mode);
        cfg.retrieval.fusion_mode = parse_fusion_mode(mode);
        s.finish();
    }
    if (auto* e = top.child("moe")) {
        Section s(*e, "moe");
        s.read("top_k", cfg.moe.top_k);
        s.read("renormalize", cfg.moe.renormalize);
        s.read("parallel", cfg.moe.parallel);
        s.read("gate_seed", cfg.moe.gate_seed);
        s.read("gate_scale", cfg.moe.gate_scale);
        s.read("kg_context_limit", cfg.moe.kg_context_limit);
        s.finish();
    }
    if (auto* e = top.child("ppo")) {
        Section s(*e, "ppo");
        s.read("learning_rate", cfg.ppo.learning_rate);
        s.read("clip", cfg.ppo.clip);
        s.read("batch_threshold", cfg.ppo.batch_threshold);
        s.read("epochs", cfg.ppo.epochs);
        s.read("seed", cfg.ppo.seed);
        s.read("plateau_tolerance", cfg.ppo.plateau_tolerance);
        s.read("plateau_min_records", cfg.ppo.plateau_min_records);
        s.read("auto_update", cfg.auto_update);
        s.finish();
    }
    if (auto* e = top.child("reward")) {
        Section s(*e, "reward");
        if (auto* w = s.child("weights")) {
            Section ws(*w, "reward.weights");
            for (FeedbackComponent c : kAllComponents) {
                ws.read(std::string(component_name(c)).c_str(), cfg.reward.weights[static_cast<std::size_t>(c)]);
            }
            ws.finish();
        }
        if (auto* m = s.child("role_multiplier")) {
            if (!m->is_object()) throw Error(ErrorCode::Configuration, "reward.role_multiplier must be an object");
            for (auto it = m->begin(); it != m->end(); ++it) {
                if (!it.value().is_number()) {
                    throw Error(ErrorCode::Configuration, "reward.role_multiplier values must be numbers");
                }
                cfg.reward.role_multiplier[parse_actor_role(it.key())] = it.value().get<double>();
            }
        }
        s.finish();
    }
    if (auto* e = top.child("transe")) {
        Section s(*e, "transe");
        s.read("dim", cfg.transe.dim);
        s.read("margin", cfg.transe.margin);
        s.read("learning_rate", cfg.transe.learning_rate);
        s.read("epochs", cfg.transe.epochs);
        s.read("negatives_per_positive", cfg.transe.negatives_per_positive);
        s.read("seed", cfg.transe.seed);
        s.read("train_on_load", cfg.train_kg_on_load);
        s.finish();
    }
    if (auto* e = top.child("experts")) {
        if (e->is_string()) {
            std::ifstream in(cfg.resolve(e->get<std::string>()));
            if (!in) throw Error(ErrorCode::Io, "cannot open experts file " + e->get<std::string>());
            nlohmann::json ej;
            try {
                ej = nlohmann::json::parse(in);
            } catch (const nlohmann::json::exception& ex) {
                throw Error(ErrorCode::Parse, std::string("experts file: ") + ex.what());
            }
            cfg.experts = parse_expert_profiles(ej);
        } else {
            cfg.experts = parse_expert_profiles(*e);
        }
    }
    if (auto* e = top.child("auth")) {
        Section s(*e, "auth");
        if (auto* t = s.child("tokens")) {
            if (!t->is_object()) throw Error(ErrorCode::Configuration, "auth.tokens must map token -> role");
            for (auto it = t->begin(); it != t->end(); ++it) {
                if (!it.value().is_string()) throw Error(ErrorCode::Configuration, "auth.tokens values must be roles");
                if (it.key().empty()) throw Error(ErrorCode::Configuration, "empty auth token");
                cfg.tokens[it.key()] = parse_auth_role(it.value().get<std::string>());
            }
        }
        s.finish();
    }
    if (auto* e = top.child("templates")) {
        if (!e->is_object()) throw Error(ErrorCode::Configuration, "templates must map id -> text");
        for (auto it = e->begin(); it != e->end(); ++it) {
            if (!it.value().is_string()) throw Error(ErrorCode::Configuration, "template bodies must be strings");
            cfg.templates[it.key()] = it.value().get<std::string>();
        }
    }
    if (auto* e = top.child("eval_tasks")) {
        if (!e->is_array()) throw Error(ErrorCode::Configuration, "eval_tasks must be an array");
        for (const auto& t : *e) {
            EvalTask task = eval_task_from_json(t);
            task.dataset = cfg.resolve(task.dataset);
            cfg.eval_tasks.push_back(std::move(task));
        }
    }
    if (auto* e = top.child("data")) {
        Section s(*e, "data");
        s.read("documents", cfg.data.documents);
        s.read("triples", cfg.data.triples);
        s.read("gazetteer", cfg.data.gazetteer);
        s.finish();
    }
    top.finish();
    cfg.data.documents = cfg.resolve(cfg.data.documents);
    cfg.data.triples = cfg.resolve(cfg.data.triples);
    cfg.data.gazetteer = cfg.resolve(cfg.data.gazetteer);
    cfg.snapshot = cfg.resolve(cfg.snapshot);
    cfg.journal = cfg.resolve(cfg.journal);
    cfg.audit_dir = cfg.resolve(cfg.audit_dir);
    cfg.validate();
    return cfg;
}

ApiConfig load_api_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open config " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Parse, "config " + path + ": " + e.what());
    }
    return parse_api_config(j, std::filesystem::path(path).parent_path());
}

std::shared_ptr<Embedder> make_embedder(const EmbedderConfig& cfg, std::shared_ptr<HttpClient> http) {
    if (cfg.kind == "hash") return std::make_shared<HashEmbedder>(cfg.dim, cfg.ngram, cfg.seed);
    if (cfg.kind == "http") {
        return std::make_shared<HttpEmbedder>(cfg.url, cfg.dim, std::chrono::milliseconds(cfg.timeout_ms),
                                              http ? http : make_default_http_client());
    }
    throw Error(ErrorCode::Configuration, "unknown embedder kind '" + cfg.kind + "'");
}

// ---------------------------------------------------------------------------
// JSON views

nlohmann::json query_result_to_json(const QueryResult& r) {
    nlohmann::json qs = nlohmann::json::array();
    for (const auto& q : r.questions) {
        nlohmann::json docs = nlohmann::json::array();
        for (const auto& d : q.documents) docs.push_back({{"id", d.document_id}, {"score", d.score}});
        qs.push_back({{"question", q.question},
                      {"abstained", q.abstained},
                      {"best_score", q.best_score},
                      {"documents", docs},
                      {"gate", {{"g", q.gates}, {"active", q.active}, {"gates_used", q.gates_used}}}});
    }
    nlohmann::json scores = nlohmann::json::array();
    nlohmann::json gate = nullptr;
    if (!r.questions.empty()) {
        for (const auto& d : r.questions.front().documents) scores.push_back({{"id", d.document_id}, {"score", d.score}});
        const auto& q = r.questions.front();
        gate = {{"g", q.gates}, {"active", q.active}, {"gates_used", q.gates_used}};
    }
    nlohmann::json j{{"case_id", r.case_id},
                     {"state", std::string(case_state_name(r.state))},
                     {"answer", r.answer},
                     {"citations", r.citations},
                     {"abstained", r.abstained},
                     {"scores", scores},
                     {"gate", gate},
                     {"questions", qs}};
    if (!r.diagnostics.empty()) j["diagnostics"] = r.diagnostics;
    return j;
}

nlohmann::json metrics_to_json(const EngineMetrics& m) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"n_feedback", m.n_feedback},
            {"mean_reward", opt(m.mean_reward)},
            {"policy_version", m.policy_version},
            {"abstention_rate_window", opt(m.abstention_rate_window)},
            {"buffered", m.buffered},
            {"documents", m.documents},
            {"triples", m.triples},
            {"cases", m.cases}};
}

// ---------------------------------------------------------------------------
// Engine

Engine::Engine(ApiConfig config, std::shared_ptr<HttpClient> http) : cfg_(std::move(config)), http_(std::move(http)) {
    cfg_.validate();
    if (!http_) http_ = make_default_http_client();
    embedder_ = make_embedder(cfg_.embedder, http_);
    registry_ = std::make_shared<ExpertRegistry>(build_registry(cfg_.experts, HandlerContext{embedder_, http_}));
    index_ = std::make_shared<const DocumentIndex>(embedder_->dim());
    graph_ = std::make_shared<const KnowledgeGraph>();
    gazetteer_ = std::make_shared<const Gazetteer>();
    gate_ = std::make_shared<const GatingNetwork>(
        GatingNetwork::random(registry_->size(), embedder_->dim(), cfg_.moe.gate_seed, cfg_.moe.gate_scale));
    workflow_ = std::make_unique<Workflow>();
    for (const auto& [id, text] : cfg_.templates) workflow_->set_template(id, text);
}

void Engine::bootstrap() {
    if (!cfg_.data.gazetteer.empty()) load_gazetteer_file(cfg_.data.gazetteer);
    if (!cfg_.data.triples.empty()) ingest_triples_file(cfg_.data.triples);
    if (!cfg_.data.documents.empty()) ingest_documents_file(cfg_.data.documents);
    if (cfg_.train_kg_on_load && graph().triple_count() > 0) train_kg();
}

std::uint64_t Engine::journal(const std::string& op, const nlohmann::json& body) {
    std::lock_guard lock(journal_mu_);
    const std::uint64_t seq = ++journal_seq_;
    if (cfg_.journal.empty()) return seq;
    std::ofstream out(cfg_.journal, std::ios::app);
    if (!out) throw Error(ErrorCode::Io, "cannot append to journal " + cfg_.journal);
    const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
    out << nlohmann::json{{"seq", seq}, {"ts", now}, {"op", op}, {"body", body}}.dump() << '\n';
    out.flush();
    if (!out) throw Error(ErrorCode::Io, "journal write failed");
    return seq;
}

namespace {

// Runs a mutation after its journal record; a failure appends an abort marker.
template <typename F>
auto journaled(Engine& e, const std::string& op, const nlohmann::json& body, F&& f) {
    const std::uint64_t seq = e.journal(op, body);
    try {
        return f();
    } catch (const Error& err) {
        e.journal("abort", {{"ref", seq}, {"error", std::string(error_code_name(err.code()))}});
        throw;
    }
}

}  // namespace

std::size_t Engine::ingest_documents(const std::vector<DocumentFields>& docs) {
    std::shared_lock engine_lock(engine_mu_);
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& d : docs) ids.push_back(d.id);
    return journaled(*this, "ingest_documents", {{"ids", ids}}, [&] {
        std::lock_guard w(index_write_mu_);
        std::shared_ptr<const DocumentIndex> cur;
        std::shared_ptr<const Gazetteer> gaz;
        {
            std::lock_guard l(ptr_mu_);
            cur = index_;
            gaz = gazetteer_;
        }
        auto next = std::make_shared<DocumentIndex>(*cur);
        for (const auto& d : docs) next->add(d, *embedder_, *gaz);
        std::lock_guard l(ptr_mu_);
        index_ = std::move(next);
        return docs.size();
    });
}

std::size_t Engine::ingest_documents_file(const std::string& path) {
    return ingest_documents(load_documents_jsonl(path));
}

IngestReport Engine::ingest_triples(std::istream& in) {
    std::shared_lock engine_lock(engine_mu_);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    return journaled(*this, "ingest_triples", {{"bytes", text.size()}}, [&] {
        std::lock_guard w(kg_write_mu_);
        KnowledgeGraph next = graph();
        std::istringstream src(text);
        IngestReport rep = lexroute::ingest_triples(src, next);
        std::lock_guard l(ptr_mu_);
        graph_ = std::make_shared<const KnowledgeGraph>(std::move(next));
        if (rep.new_triples > 0) kg_.reset();  // stale until retrained
        return rep;
    });
}

IngestReport Engine::ingest_triples_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open triples file " + path);
    return ingest_triples(in);
}

void Engine::relink_locked(const Gazetteer& g) {
    std::shared_ptr<const DocumentIndex> cur;
    {
        std::lock_guard l(ptr_mu_);
        cur = index_;
    }
    auto next = std::make_shared<DocumentIndex>(cur->dim());
    for (const auto& d : cur->documents()) {
        DocumentRecord r = *d;
        r.links = link_entities(r.text, g, r.id);
        next->add_record(std::move(r));
    }
    std::lock_guard l(ptr_mu_);
    index_ = std::move(next);
}

void Engine::set_gazetteer(Gazetteer gazetteer) {
    std::shared_lock engine_lock(engine_mu_);
    journaled(*this, "set_gazetteer", {{"aliases", gazetteer.size()}}, [&] {
        std::lock_guard wi(index_write_mu_);
        std::lock_guard wk(kg_write_mu_);
        KnowledgeGraph g = graph();
        for (const auto& id : gazetteer.entity_ids()) g.register_entity(id);
        auto gaz = std::make_shared<const Gazetteer>(std::move(gazetteer));
        {
            std::lock_guard l(ptr_mu_);
            gazetteer_ = gaz;
            graph_ = std::make_shared<const KnowledgeGraph>(std::move(g));
            kg_.reset();
        }
        relink_locked(*gaz);
        return 0;
    });
}

void Engine::load_gazetteer_file(const std::string& path) { set_gazetteer(Gazetteer::load(path)); }

std::vector<double> Engine::train_kg() {
    std::shared_lock engine_lock(engine_mu_);
    return journaled(*this, "train_kg", {{"epochs", cfg_.transe.epochs}}, [&] {
        std::lock_guard w(kg_write_mu_);
        KnowledgeGraph g = graph();
        std::shared_ptr<const Gazetteer> gaz;
        {
            std::lock_guard l(ptr_mu_);
            gaz = gazetteer_;
        }
        for (const auto& id : gaz->entity_ids()) g.register_entity(id);
        std::vector<double> losses;
        auto emb = std::make_shared<const KGEmbeddings>(train_transe(g, cfg_.transe, &losses));
        std::lock_guard l(ptr_mu_);
        graph_ = std::make_shared<const KnowledgeGraph>(std::move(g));
        kg_ = std::move(emb);
        return losses;
    });
}

PipelineContext Engine::context(const std::shared_ptr<const DocumentIndex>& index,
                                const std::shared_ptr<const KGEmbeddings>& kg,
                                const std::shared_ptr<const GatingNetwork>& gate) const {
    PipelineContext ctx;
    ctx.embedder = embedder_.get();
    ctx.index = index.get();
    ctx.kg = kg.get();
    ctx.gating = gate.get();
    ctx.experts = registry_.get();
    ctx.retrieval = cfg_.retrieval;
    ctx.top_k = cfg_.moe.top_k;
    ctx.renormalize = cfg_.moe.renormalize;
    ctx.parallel_experts = cfg_.moe.parallel;
    ctx.kg_context_limit = cfg_.moe.kg_context_limit;
    return ctx;
}

QueryResult Engine::query(const std::string& text, const std::string& requested_id) {
    std::shared_lock engine_lock(engine_mu_);
    std::shared_ptr<const DocumentIndex> index;
    std::shared_ptr<const KGEmbeddings> kg;
    std::shared_ptr<const GatingNetwork> gate;
    std::shared_ptr<const Gazetteer> gaz;
    std::shared_ptr<const KnowledgeGraph> graph;
    {
        std::lock_guard l(ptr_mu_);
        index = index_;
        kg = kg_;
        gate = gate_;
        gaz = gazetteer_;
        graph = graph_;
    }
    if (index->empty()) throw Error(ErrorCode::IndexEmpty, "no documents have been ingested");
    PipelineContext ctx = context(index, kg, gate);
    ctx.gazetteer = gaz.get();
    ctx.graph = graph.get();

    return journaled(*this, "query", {{"text", text}, {"case_id", requested_id}}, [&] {
        QueryResult out;
        out.case_id = workflow_->open_case(requested_id);
        workflow_->consultant_formulate(out.case_id, text, {ActorRole::Consultant, "intake"});
        auto research = workflow_->researcher_retrieve(out.case_id, ctx, {ActorRole::Researcher, "retriever"});
        Case c = workflow_->get(out.case_id);
        const bool all_abstained = c.state() == CaseState::Abstained;
        RouteReport route;
        if (!all_abstained) {
            route = workflow_->route_and_answer(out.case_id, ctx);
            if (route.ok) workflow_->submit_for_review(out.case_id);
            c = workflow_->get(out.case_id);
        }
        out.state = c.state();
        out.abstained = all_abstained;
        out.answer = route.ok ? route.y_aggregated : std::string();
        out.citations = c.citations();
        out.diagnostics = route.diagnostics;
        for (std::size_t i = 0; i < c.queries().size(); ++i) {
            QuestionScores q;
            q.question = c.queries()[i];
            if (i < research.size()) {
                q.abstained = research[i].abstained;
                q.best_score = research[i].best_score;
                q.documents = research[i].documents;
            }
            if (i < c.routing().size()) {
                q.gates = c.routing()[i].gates;
                q.active = c.routing()[i].active;
                q.gates_used = c.routing()[i].gates_used;
            }
            out.questions.push_back(std::move(q));
        }
        std::lock_guard s(stats_mu_);
        if (!route.traces.empty()) traces_[out.case_id] = route.traces;
        abstention_window_.push_back(all_abstained);
        while (abstention_window_.size() > cfg_.abstention_window) abstention_window_.pop_front();
        return out;
    });
}

RetrievalResult Engine::retrieve(const std::string& text) const {
    std::shared_lock engine_lock(engine_mu_);
    std::shared_ptr<const DocumentIndex> index;
    std::shared_ptr<const KGEmbeddings> kg;
    std::shared_ptr<const Gazetteer> gaz;
    {
        std::lock_guard l(ptr_mu_);
        index = index_;
        kg = kg_;
        gaz = gazetteer_;
    }
    RetrievalResult r = index->retrieve(text, cfg_.retrieval, *embedder_, *gaz, kg.get());
    return r;
}

GatingDistribution Engine::gate_vector(const Vector& v) const {
    return gate(v, gating());
}

GatingDistribution Engine::gate_text(const std::string& text) const { return gate_vector(embedder_->embed(text)); }

Case Engine::get_case(const std::string& case_id) const {
    std::shared_lock engine_lock(engine_mu_);
    return workflow_->get(case_id);
}

CaseState Engine::review(const std::string& case_id, Verdict verdict, const std::string& notes, const Actor& actor) {
    std::shared_lock engine_lock(engine_mu_);
    const char* v = verdict == Verdict::Approve ? "approve" : verdict == Verdict::Revise ? "revise" : "reject";
    return journaled(*this, "review",
                     {{"case_id", case_id}, {"verdict", v}, {"notes", notes}, {"actor", actor.name}},
                     [&] { return workflow_->advisor_review(case_id, verdict, notes, actor); });
}

FinalDocument Engine::finalize(const std::string& case_id, const std::string& template_id, const Actor& actor) {
    std::shared_lock engine_lock(engine_mu_);
    return journaled(*this, "finalize", {{"case_id", case_id}, {"template_id", template_id}, {"actor", actor.name}},
                     [&] { return workflow_->paralegal_finalize(case_id, template_id, actor); });
}

std::vector<Case> Engine::review_queue() const {
    std::shared_lock engine_lock(engine_mu_);
    auto cases = workflow_->cases_in({CaseState::AdvisorReview, CaseState::Aggregated, CaseState::ParalegalFinalize});
    std::sort(cases.begin(), cases.end(), [](const Case& a, const Case& b) {
        if (a.opened_at() != b.opened_at()) return a.opened_at() < b.opened_at();
        return a.id() < b.id();
    });
    return cases;
}

FeedbackOutcome Engine::submit_feedback(FeedbackRecord record) {
    if (!record.policy_affecting()) {
        throw Error(ErrorCode::Forbidden, "only Advisor and Paralegal feedback is accepted");
    }
    static const QualitativeScale scale = QualitativeScale::defaults();
    record = apply_qualitative(std::move(record), scale);
    FeedbackOutcome out;
    {
        std::shared_lock engine_lock(engine_mu_);
        workflow_->get(record.case_id);  // NotFound for unknown cases
        out = journaled(*this, "feedback", feedback_to_json(record), [&] {
            FeedbackOutcome o;
            o.reward = compute_reward(record, cfg_.reward).reward;
            std::vector<RoutingTrace> traces;
            {
                std::lock_guard s(stats_mu_);
                ++n_feedback_;
                reward_sum_ += o.reward;
                auto it = traces_.find(record.case_id);
                if (it != traces_.end()) traces = it->second;
            }
            for (const auto& t : traces) buffer_.push({t.query_vector, t.gates, t.action, o.reward});
            o.trajectories = traces.size();
            return o;
        });
    }
    if (cfg_.auto_update && out.trajectories > 0 && should_update(buffer_.rewards(), cfg_.ppo)) {
        UpdateOutcome u = update_policy();
        (void)u;
    }
    out.buffered = buffer_.size();
    return out;
}

UpdateOutcome Engine::update_policy() {
    std::shared_lock engine_lock(engine_mu_);
    std::lock_guard w(policy_write_mu_);
    UpdateOutcome out;
    auto batch = buffer_.drain();
    out.batch = batch.size();
    const GatingNetwork current = gating();
    out.policy_version = current.version;
    if (batch.empty()) {
        out.message = "feedback buffer is empty";
        return out;
    }
    std::optional<double> base;
    {
        std::lock_guard s(stats_mu_);
        base = baseline_;
    }
    return journaled(*this, "update_policy", {{"batch", batch.size()}, {"from_version", current.version}}, [&] {
        PpoResult r = ppo_update(current, batch, cfg_.ppo, base);
        out.applied = r.applied;
        out.baseline = r.baseline;
        out.message = r.alert;
        if (r.applied) {
            out.policy_version = r.policy.version;
            {
                std::lock_guard l(ptr_mu_);
                gate_ = std::make_shared<const GatingNetwork>(std::move(r.policy));
            }
            std::lock_guard s(stats_mu_);
            baseline_ = r.baseline;
        }
        return out;
    });
}

void Engine::push_trajectories(const std::vector<Trajectory>& batch) {
    for (const auto& t : batch) buffer_.push(t);
}

EngineMetrics Engine::metrics() const {
    std::shared_lock engine_lock(engine_mu_);
    EngineMetrics m;
    {
        std::lock_guard s(stats_mu_);
        m.n_feedback = n_feedback_;
        if (n_feedback_ > 0) m.mean_reward = reward_sum_ / static_cast<double>(n_feedback_);
        if (!abstention_window_.empty()) {
            const auto n = std::count(abstention_window_.begin(), abstention_window_.end(), true);
            m.abstention_rate_window = static_cast<double>(n) / static_cast<double>(abstention_window_.size());
        }
    }
    m.policy_version = gating().version;
    m.buffered = buffer_.size();
    m.documents = index()->size();
    m.triples = graph().triple_count();
    m.cases = workflow_->case_ids().size();
    return m;
}

nlohmann::json Engine::experts_json() const { return expert_profiles_to_json(registry_->profiles()); }

GatingNetwork Engine::gating() const {
    std::lock_guard l(ptr_mu_);
    return *gate_;
}

void Engine::set_gating(GatingNetwork net) {
    net.validate();
    if (net.experts != registry_->size() || net.dim != embedder_->dim()) {
        throw Error(ErrorCode::Dimension, "gating network shape does not match experts x embedder dim");
    }
    std::lock_guard l(ptr_mu_);
    gate_ = std::make_shared<const GatingNetwork>(std::move(net));
}

std::optional<double> Engine::baseline() const {
    std::lock_guard s(stats_mu_);
    return baseline_;
}

std::shared_ptr<const DocumentIndex> Engine::index() const {
    std::lock_guard l(ptr_mu_);
    return index_;
}

std::shared_ptr<const KGEmbeddings> Engine::kg_embeddings() const {
    std::lock_guard l(ptr_mu_);
    return kg_;
}

KnowledgeGraph Engine::graph() const {
    std::lock_guard l(ptr_mu_);
    return *graph_;
}

MetricReport Engine::evaluate(const EvalTask& task, std::span<const EvalRecord> records) {
    auto backend = std::make_shared<ExtractiveMockBackend>(embedder_, 1);
    EvalPipeline pipeline = [&](const EvalRecord& rec) {
        RetrievalResult r = retrieve(rec.input);
        EvalPrediction p;
        if (r.abstained) {
            p.abstained = true;
            return p;
        }
        GenerationRequest req;
        req.query = rec.input;
        req.documents = r.documents;
        p.text = generate(req, *backend).text();
        return p;
    };
    MetricReport rep = run_eval(task, records, pipeline);
    if (!cfg_.audit_dir.empty()) {
        std::filesystem::create_directories(cfg_.audit_dir);
        std::ofstream out(std::filesystem::path(cfg_.audit_dir) / (task.name + ".pairs.jsonl"));
        for (const auto& p : metric_report_to_json(rep)["pairs"]) out << p.dump() << '\n';
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Snapshot

std::string encode_snapshot(const std::string& body, int version) {
    const uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
    char header[96];
    std::snprintf(header, sizeof header, "LEXROUTE-SNAPSHOT v%d crc32=%08lx bytes=%zu\n", version,
                  static_cast<unsigned long>(crc), body.size());
    return std::string(header) + body;
}

std::string decode_snapshot(const std::string& data, int expected_version) {
    const auto nl = data.find('\n');
    if (nl == std::string::npos) throw Error(ErrorCode::Checksum, "snapshot header is truncated");
    const std::string header = data.substr(0, nl);
    int version = 0;
    unsigned long crc = 0;
    std::size_t bytes = 0;
    if (std::sscanf(header.c_str(), "LEXROUTE-SNAPSHOT v%d crc32=%8lx bytes=%zu", &version, &crc, &bytes) != 3) {
        throw Error(ErrorCode::Checksum, "snapshot header is malformed");
    }
    if (version != expected_version) {
        throw Error(ErrorCode::Version, "snapshot format v" + std::to_string(version) + " is not supported (expected v" +
                                            std::to_string(expected_version) + ")");
    }
    std::string body = data.substr(nl + 1);
    if (body.size() != bytes) {
        throw Error(ErrorCode::Checksum, "snapshot body has " + std::to_string(body.size()) + " bytes, header says " +
                                             std::to_string(bytes));
    }
    const uLong actual = crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
    if (actual != crc) throw Error(ErrorCode::Checksum, "snapshot checksum mismatch");
    return body;
}

namespace {

nlohmann::json vec_json(const Vector& v) { return std::vector<double>(v.values().begin(), v.values().end()); }

nlohmann::json links_json(const EntityLinkSet& l) {
    nlohmann::json ms = nlohmann::json::array();
    for (const auto& m : l.mentions) ms.push_back({m.entity_id, m.begin, m.end});
    return {{"source_id", l.source_id}, {"mentions", ms}};
}

EntityLinkSet links_from(const nlohmann::json& j) {
    EntityLinkSet l;
    l.source_id = j.at("source_id").get<std::string>();
    for (const auto& m : j.at("mentions")) {
        l.mentions.push_back({m.at(0).get<std::string>(), m.at(1).get<std::size_t>(), m.at(2).get<std::size_t>()});
    }
    return l;
}

nlohmann::json gate_json(const GatingNetwork& g) {
    return {{"experts", g.experts}, {"dim", g.dim}, {"weights", g.weights}, {"bias", g.bias}, {"version", g.version}};
}

GatingNetwork gate_from(const nlohmann::json& j) {
    GatingNetwork g;
    g.experts = j.at("experts").get<std::size_t>();
    g.dim = j.at("dim").get<std::size_t>();
    g.weights = j.at("weights").get<std::vector<double>>();
    g.bias = j.at("bias").get<std::vector<double>>();
    g.version = j.at("version").get<std::uint64_t>();
    g.validate();
    return g;
}

}  // namespace

nlohmann::json Engine::snapshot_json() const {
    std::shared_ptr<const DocumentIndex> index;
    std::shared_ptr<const KnowledgeGraph> graph;
    std::shared_ptr<const Gazetteer> gaz;
    std::shared_ptr<const KGEmbeddings> kg;
    std::shared_ptr<const GatingNetwork> gate;
    {
        std::lock_guard l(ptr_mu_);
        index = index_;
        graph = graph_;
        gaz = gazetteer_;
        kg = kg_;
        gate = gate_;
    }
    nlohmann::json docs = nlohmann::json::array();
    for (const auto& d : index->documents()) {
        docs.push_back({{"id", d->id},
                        {"title", d->title},
                        {"text", d->text},
                        {"tags", d->tags},
                        {"vector", vec_json(d->vector)},
                        {"links", links_json(d->links)}});
    }
    nlohmann::json triples = nlohmann::json::array();
    for (const auto& t : graph->indexed_triples()) triples.push_back({t.head, t.relation, t.tail});
    nlohmann::json kgj = nullptr;
    if (kg) {
        nlohmann::json ents = nlohmann::json::array(), rels = nlohmann::json::array();
        for (std::size_t i = 0; i < kg->entity_ids().size(); ++i) {
            ents.push_back({kg->entity_ids()[i], vec_json(kg->entity_vectors()[i])});
        }
        for (std::size_t i = 0; i < kg->relation_ids().size(); ++i) {
            rels.push_back({kg->relation_ids()[i], vec_json(kg->relation_vectors()[i])});
        }
        kgj = {{"dim", kg->dim()}, {"trained_epoch", kg->trained_epoch()}, {"entities", ents}, {"relations", rels}};
    }
    nlohmann::json buffer = nlohmann::json::array();
    for (const auto& t : buffer_.contents()) buffer.push_back(trajectory_to_json(t));
    nlohmann::json cases = nlohmann::json::object();
    for (const auto& [id, events] : workflow_->export_logs()) {
        nlohmann::json evs = nlohmann::json::array();
        for (const auto& e : events) evs.push_back(case_event_to_json(e));
        cases[id] = evs;
    }
    nlohmann::json traces = nlohmann::json::object();
    nlohmann::json stats;
    {
        std::lock_guard s(stats_mu_);
        for (const auto& [id, ts] : traces_) {
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& t : ts) arr.push_back({{"query", t.query_vector}, {"gates", t.gates}, {"action", t.action}});
            traces[id] = arr;
        }
        stats = {{"n_feedback", n_feedback_},
                 {"reward_sum", reward_sum_},
                 {"baseline", baseline_ ? nlohmann::json(*baseline_) : nlohmann::json(nullptr)},
                 {"abstention_window", std::vector<bool>(abstention_window_.begin(), abstention_window_.end())}};
    }
    return {{"format_version", kSnapshotFormatVersion},
            {"embedder", {{"name", embedder_->name()}, {"dim", embedder_->dim()}}},
            {"documents", docs},
            {"graph", {{"entities", graph->entities()}, {"relations", graph->relations()}, {"triples", triples}}},
            {"gazetteer", gaz->to_json()},
            {"kg_embeddings", kgj},
            {"gating", gate_json(*gate)},
            {"experts", expert_profiles_to_json(registry_->profiles())},
            {"buffer", buffer},
            {"traces", traces},
            {"cases", cases},
            {"templates", workflow_->templates()},
            {"stats", stats}};
}

void Engine::save_snapshot(const std::string& path) const {
    std::string data;
    {
        std::unique_lock engine_lock(engine_mu_);  // quiesce writers
        data = encode_snapshot(snapshot_json().dump());
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::Io, "cannot write snapshot " + tmp);
        out << data;
        out.flush();
        if (!out) throw Error(ErrorCode::Io, "snapshot write failed");
    }
    std::filesystem::rename(tmp, path);
}

void Engine::load_snapshot(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open snapshot " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string body = decode_snapshot(buf.str());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Checksum, std::string("snapshot body is not valid JSON: ") + e.what());
    }
    restore_snapshot_json(j);
}

void Engine::restore_snapshot_json(const nlohmann::json& j) {
    // Build everything first; publish only once the whole body has parsed.
    try {
        if (j.at("format_version").get<int>() != kSnapshotFormatVersion) {
            throw Error(ErrorCode::Version, "snapshot body format_version mismatch");
        }
        const auto& ej = j.at("embedder");
        if (ej.at("name").get<std::string>() != embedder_->name() || ej.at("dim").get<std::size_t>() != embedder_->dim()) {
            throw Error(ErrorCode::Configuration, "snapshot was written with a different embedder");
        }
        auto index = std::make_shared<DocumentIndex>(embedder_->dim());
        for (const auto& d : j.at("documents")) {
            index->add_record(DocumentRecord{d.at("id").get<std::string>(), d.at("title").get<std::string>(),
                                             d.at("text").get<std::string>(),
                                             d.at("tags").get<std::set<std::string>>(),
                                             Vector(d.at("vector").get<std::vector<double>>()),
                                             links_from(d.at("links"))});
        }
        auto graph = std::make_shared<KnowledgeGraph>();
        const auto& gj = j.at("graph");
        const auto ents = gj.at("entities").get<std::vector<std::string>>();
        const auto rels = gj.at("relations").get<std::vector<std::string>>();
        for (const auto& e : ents) graph->register_entity(e);
        for (const auto& r : rels) graph->register_relation(r);
        for (const auto& t : gj.at("triples")) {
            graph->add({ents.at(t.at(0).get<std::size_t>()), rels.at(t.at(1).get<std::size_t>()),
                        ents.at(t.at(2).get<std::size_t>())});
        }
        auto gaz = std::make_shared<const Gazetteer>(Gazetteer::from_json(j.at("gazetteer")));
        std::shared_ptr<const KGEmbeddings> kg;
        if (!j.at("kg_embeddings").is_null()) {
            const auto& kj = j.at("kg_embeddings");
            std::vector<std::string> eids, rids;
            std::vector<std::vector<double>> evs, rvs;
            for (const auto& e : kj.at("entities")) {
                eids.push_back(e.at(0).get<std::string>());
                evs.push_back(e.at(1).get<std::vector<double>>());
            }
            for (const auto& r : kj.at("relations")) {
                rids.push_back(r.at(0).get<std::string>());
                rvs.push_back(r.at(1).get<std::vector<double>>());
            }
            kg = std::make_shared<const KGEmbeddings>(kj.at("dim").get<std::size_t>(), std::move(eids), std::move(evs),
                                                      std::move(rids), std::move(rvs),
                                                      kj.at("trained_epoch").get<int>());
        }
        auto gate = std::make_shared<const GatingNetwork>(gate_from(j.at("gating")));
        if (gate->experts != registry_->size() || gate->dim != embedder_->dim()) {
            throw Error(ErrorCode::Configuration, "snapshot gating network does not match the configured experts");
        }
        std::vector<Trajectory> buffer;
        for (const auto& t : j.at("buffer")) buffer.push_back(trajectory_from_json(t));
        auto workflow = std::make_unique<Workflow>();
        for (const auto& [id, text] : j.at("templates").get<std::map<std::string, std::string>>()) {
            workflow->set_template(id, text);
        }
        for (auto it = j.at("cases").begin(); it != j.at("cases").end(); ++it) {
            std::vector<CaseEvent> events;
            for (const auto& e : it.value()) events.push_back(case_event_from_json(e));
            workflow->restore(it.key(), events);
        }
        std::map<std::string, std::vector<RoutingTrace>> traces;
        for (auto it = j.at("traces").begin(); it != j.at("traces").end(); ++it) {
            auto& dst = traces[it.key()];
            for (const auto& t : it.value()) {
                dst.push_back({t.at("query").get<std::vector<double>>(), t.at("gates").get<std::vector<double>>(),
                               t.at("action").get<ExpertId>()});
            }
        }
        const auto& st = j.at("stats");
        const auto n_feedback = st.at("n_feedback").get<std::size_t>();
        const auto reward_sum = st.at("reward_sum").get<double>();
        std::optional<double> baseline;
        if (!st.at("baseline").is_null()) baseline = st.at("baseline").get<double>();
        const auto window = st.at("abstention_window").get<std::vector<bool>>();

        std::unique_lock engine_lock(engine_mu_);
        {
            std::lock_guard l(ptr_mu_);
            index_ = std::move(index);
            graph_ = std::move(graph);
            gazetteer_ = std::move(gaz);
            kg_ = std::move(kg);
            gate_ = std::move(gate);
        }
        workflow_ = std::move(workflow);
        buffer_.drain();
        for (auto& t : buffer) buffer_.push(std::move(t));
        std::lock_guard s(stats_mu_);
        traces_ = std::move(traces);
        n_feedback_ = n_feedback;
        reward_sum_ = reward_sum;
        baseline_ = baseline;
        abstention_window_.assign(window.begin(), window.end());
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Parse, std::string("snapshot body is malformed: ") + e.what());
    }
}

}  // namespace lexroute
