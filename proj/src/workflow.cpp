#include "lexroute/workflow.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <set>
#include <sstream>

#include "lexroute/error.hpp"

namespace lexroute {

std::string_view case_state_name(CaseState s) {
    switch (s) {
        case CaseState::Intake: return "Intake";
        case CaseState::Formulated: return "Formulated";
        case CaseState::Researched: return "Researched";
        case CaseState::Routed: return "Routed";
        case CaseState::Aggregated: return "Aggregated";
        case CaseState::AdvisorReview: return "AdvisorReview";
        case CaseState::Revise: return "Revise";
        case CaseState::ParalegalFinalize: return "ParalegalFinalize";
        case CaseState::Released: return "Released";
        case CaseState::Abstained: return "Abstained";
        case CaseState::Rejected: return "Rejected";
    }
    return "Intake";
}

CaseState parse_case_state(std::string_view s) {
    for (CaseState c : kAllCaseStates) {
        if (case_state_name(c) == s) return c;
    }
    throw Error(ErrorCode::Parse, "unknown case state '" + std::string(s) + "'");
}

std::string_view case_event_name(CaseEventKind e) {
    switch (e) {
        case CaseEventKind::Formulate: return "formulate";
        case CaseEventKind::Research: return "research";
        case CaseEventKind::Abstain: return "abstain";
        case CaseEventKind::Route: return "route";
        case CaseEventKind::Aggregate: return "aggregate";
        case CaseEventKind::RoutingFailed: return "routing_failed";
        case CaseEventKind::SubmitForReview: return "submit_for_review";
        case CaseEventKind::Approve: return "approve";
        case CaseEventKind::RequestRevision: return "request_revision";
        case CaseEventKind::Reject: return "reject";
        case CaseEventKind::Finalize: return "finalize";
    }
    return "formulate";
}

CaseEventKind parse_case_event(std::string_view s) {
    for (CaseEventKind e : kAllCaseEvents) {
        if (case_event_name(e) == s) return e;
    }
    throw Error(ErrorCode::Parse, "unknown case event '" + std::string(s) + "'");
}

std::string_view actor_role_name(ActorRole r) {
    switch (r) {
        case ActorRole::Consultant: return "Consultant";
        case ActorRole::Researcher: return "Researcher";
        case ActorRole::Advisor: return "Advisor";
        case ActorRole::Paralegal: return "Paralegal";
        case ActorRole::System: return "System";
    }
    return "System";
}

ActorRole parse_actor_role(std::string_view s) {
    for (ActorRole r : {ActorRole::Consultant, ActorRole::Researcher, ActorRole::Advisor, ActorRole::Paralegal,
                        ActorRole::System}) {
        if (fold_text(actor_role_name(r)) == fold_text(s)) return r;
    }
    throw Error(ErrorCode::Validation, "unknown actor role '" + std::string(s) + "'");
}

std::optional<CaseState> next_state(CaseState from, CaseEventKind event) {
    using S = CaseState;
    using E = CaseEventKind;
    switch (event) {
        case E::Formulate:
            if (from == S::Intake || from == S::Revise) return S::Formulated;
            break;
        case E::Research:
            if (from == S::Formulated) return S::Researched;
            break;
        case E::Abstain:
            if (from == S::Researched) return S::Abstained;
            break;
        case E::Route:
            if (from == S::Researched) return S::Routed;
            break;
        case E::Aggregate:
            if (from == S::Routed) return S::Aggregated;
            break;
        case E::RoutingFailed:
            if (from == S::Routed) return S::Revise;
            break;
        case E::SubmitForReview:
            if (from == S::Aggregated) return S::AdvisorReview;
            break;
        case E::Approve:
            if (from == S::Aggregated || from == S::AdvisorReview) return S::ParalegalFinalize;
            break;
        case E::RequestRevision:
            if (from == S::Aggregated || from == S::AdvisorReview) return S::Revise;
            break;
        case E::Reject:
            if (from == S::Aggregated || from == S::AdvisorReview) return S::Rejected;
            break;
        case E::Finalize:
            if (from == S::ParalegalFinalize) return S::Released;
            break;
    }
    return std::nullopt;
}

ActorRole required_role(CaseEventKind event) {
    switch (event) {
        case CaseEventKind::Formulate: return ActorRole::Consultant;
        case CaseEventKind::Research:
        case CaseEventKind::Abstain: return ActorRole::Researcher;
        case CaseEventKind::Route:
        case CaseEventKind::Aggregate:
        case CaseEventKind::RoutingFailed:
        case CaseEventKind::SubmitForReview: return ActorRole::System;
        case CaseEventKind::Approve:
        case CaseEventKind::RequestRevision:
        case CaseEventKind::Reject: return ActorRole::Advisor;
        case CaseEventKind::Finalize: return ActorRole::Paralegal;
    }
    return ActorRole::System;
}

bool is_terminal(CaseState s) {
    return s == CaseState::Released || s == CaseState::Abstained || s == CaseState::Rejected;
}

Verdict parse_verdict(std::string_view s) {
    if (s == "approve") return Verdict::Approve;
    if (s == "revise") return Verdict::Revise;
    if (s == "reject") return Verdict::Reject;
    throw Error(ErrorCode::Validation, "verdict must be approve, revise or reject");
}

// ---------------------------------------------------------------------------
// JSON helpers for payloads

namespace {

nlohmann::json contributions_json(const std::vector<Contribution>& cs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : cs) arr.push_back({{"expert", c.expert}, {"weight", c.weight}, {"payload", c.payload}});
    return arr;
}

std::vector<Contribution> contributions_from(const nlohmann::json& j) {
    std::vector<Contribution> out;
    for (const auto& c : j) {
        out.push_back({c.at("expert").get<ExpertId>(), c.at("weight").get<double>(), c.at("payload").get<std::string>()});
    }
    return out;
}

nlohmann::json failures_json(const std::vector<ExpertFailure>& fs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& f : fs) arr.push_back({{"expert", f.expert}, {"message", f.message}});
    return arr;
}

std::vector<ExpertFailure> failures_from(const nlohmann::json& j) {
    std::vector<ExpertFailure> out;
    for (const auto& f : j) out.push_back({f.at("expert").get<ExpertId>(), f.at("message").get<std::string>()});
    return out;
}

nlohmann::json stamp_json(const Stamp& s) {
    return {{"actor", s.actor}, {"timestamp_ms", s.timestamp_ms}};
}

}  // namespace

nlohmann::json case_event_to_json(const CaseEvent& e) {
    return {{"seq", e.seq},
            {"timestamp_ms", e.timestamp_ms},
            {"actor", {{"role", actor_role_name(e.actor.role)}, {"name", e.actor.name}}},
            {"kind", case_event_name(e.kind)},
            {"payload", e.payload}};
}

CaseEvent case_event_from_json(const nlohmann::json& j) {
    CaseEvent e;
    try {
        e.seq = j.at("seq").get<std::uint64_t>();
        e.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
        e.actor.role = parse_actor_role(j.at("actor").at("role").get<std::string>());
        e.actor.name = j.at("actor").at("name").get<std::string>();
        e.kind = parse_case_event(j.at("kind").get<std::string>());
        e.payload = j.at("payload");
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::Parse, std::string("malformed case event: ") + ex.what());
    }
    return e;
}

// ---------------------------------------------------------------------------

Case Case::replay(const std::string& id, const std::vector<CaseEvent>& events) {
    Case c(id);
    for (const auto& e : events) c.apply(e);
    return c;
}

void Case::apply(const CaseEvent& event) {
    if (event.actor.role != required_role(event.kind)) {
        throw Error(ErrorCode::Forbidden, std::string(actor_role_name(event.actor.role)) + " may not " +
                                              std::string(case_event_name(event.kind)) + " (requires " +
                                              std::string(actor_role_name(required_role(event.kind))) + ")");
    }
    auto next = next_state(state_, event.kind);
    if (!next) {
        throw Error(ErrorCode::IllegalTransition, "case " + id_ + ": cannot " + std::string(case_event_name(event.kind)) +
                                                      " from state " + std::string(case_state_name(state_)));
    }
    if (!history_.empty() && (event.seq <= history_.back().seq || event.timestamp_ms < history_.back().timestamp_ms)) {
        throw Error(ErrorCode::Validation, "case " + id_ + ": event out of order");
    }

    const auto& p = event.payload;
    try {
        switch (event.kind) {
            case CaseEventKind::Formulate:
                objectives_ = p.at("objectives").get<std::string>();
                queries_ = p.at("queries").get<std::vector<std::string>>();
                research_.clear();
                routing_.clear();
                aggregated_.clear();
                citations_.clear();
                advisor_text_.clear();
                advisor_approval_.reset();
                break;
            case CaseEventKind::Research:
                research_.clear();
                for (const auto& q : p.at("questions")) {
                    QuestionResearch r;
                    r.abstained = q.at("abstained").get<bool>();
                    r.best_score = q.at("best_score").get<double>();
                    for (const auto& d : q.at("documents")) {
                        r.documents.push_back({d.at("id").get<std::string>(), d.at("score").get<double>()});
                    }
                    research_.push_back(std::move(r));
                }
                break;
            case CaseEventKind::Route:
                routing_.clear();
                for (const auto& q : p.at("questions")) {
                    QuestionRouting r;
                    r.abstained = q.at("abstained").get<bool>();
                    r.gates = q.at("gates").get<std::vector<double>>();
                    r.active = q.at("active").get<std::vector<ExpertId>>();
                    r.gates_used = q.at("gates_used").get<std::vector<double>>();
                    routing_.push_back(std::move(r));
                }
                break;
            case CaseEventKind::Aggregate: {
                const auto& qs = p.at("questions");
                if (qs.size() != routing_.size()) throw Error(ErrorCode::Validation, "aggregate/route size mismatch");
                for (std::size_t i = 0; i < qs.size(); ++i) {
                    routing_[i].contributions = contributions_from(qs[i].at("contributions"));
                    routing_[i].failures = failures_from(qs[i].at("failures"));
                    routing_[i].text = qs[i].at("text").get<std::string>();
                }
                aggregated_ = p.at("y_aggregated").get<std::string>();
                citations_ = p.at("citations").get<std::vector<std::string>>();
                break;
            }
            case CaseEventKind::RoutingFailed: {
                const auto& qs = p.at("questions");
                for (std::size_t i = 0; i < qs.size() && i < routing_.size(); ++i) {
                    routing_[i].failures = failures_from(qs[i].at("failures"));
                }
                notes_.push_back(p.at("diagnostics").get<std::string>());
                break;
            }
            case CaseEventKind::Approve:
                advisor_text_ = p.at("text").get<std::string>();
                advisor_approval_ = Stamp{event.actor.name, event.timestamp_ms};
                if (p.contains("notes") && !p["notes"].get<std::string>().empty()) {
                    notes_.push_back(p["notes"].get<std::string>());
                }
                break;
            case CaseEventKind::RequestRevision:
            case CaseEventKind::Reject:
                notes_.push_back(p.value("notes", std::string()));
                break;
            case CaseEventKind::Finalize: {
                FinalDocument doc;
                doc.case_id = id_;
                doc.text = p.at("text").get<std::string>();
                doc.rendered = p.at("rendered").get<std::string>();
                doc.template_id = p.at("template_id").get<std::string>();
                doc.citations = citations_;
                doc.advisor_approval = advisor_approval_.value_or(Stamp{});
                doc.paralegal_signoff = Stamp{event.actor.name, event.timestamp_ms};
                final_ = std::move(doc);
                break;
            }
            case CaseEventKind::Abstain:
            case CaseEventKind::SubmitForReview:
                break;
        }
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::Validation, "case " + id_ + ": malformed " + std::string(case_event_name(event.kind)) +
                                               " payload: " + ex.what());
    }
    state_ = *next;
    history_.push_back(event);
}

nlohmann::json Case::to_json() const {
    nlohmann::json j;
    j["id"] = id_;
    j["state"] = case_state_name(state_);
    j["objectives"] = objectives_;
    j["queries"] = queries_;
    j["research"] = nlohmann::json::array();
    for (const auto& r : research_) {
        nlohmann::json docs = nlohmann::json::array();
        for (const auto& d : r.documents) docs.push_back({{"id", d.document_id}, {"score", d.score}});
        j["research"].push_back({{"abstained", r.abstained}, {"best_score", r.best_score}, {"documents", docs}});
    }
    j["routing"] = nlohmann::json::array();
    for (const auto& r : routing_) {
        j["routing"].push_back({{"abstained", r.abstained},
                                {"gates", r.gates},
                                {"active", r.active},
                                {"gates_used", r.gates_used},
                                {"contributions", contributions_json(r.contributions)},
                                {"failures", failures_json(r.failures)},
                                {"text", r.text}});
    }
    j["y_aggregated"] = aggregated_;
    j["citations"] = citations_;
    j["advisor_text"] = advisor_text_;
    j["notes"] = notes_;
    j["advisor_approval"] = advisor_approval_ ? stamp_json(*advisor_approval_) : nlohmann::json(nullptr);
    if (final_) {
        j["final_document"] = {{"case_id", final_->case_id},
                               {"text", final_->text},
                               {"rendered", final_->rendered},
                               {"citations", final_->citations},
                               {"advisor_approval", stamp_json(final_->advisor_approval)},
                               {"paralegal_signoff", stamp_json(final_->paralegal_signoff)},
                               {"template_id", final_->template_id}};
    } else {
        j["final_document"] = nullptr;
    }
    j["history"] = nlohmann::json::array();
    for (const auto& e : history_) j["history"].push_back(case_event_to_json(e));
    return j;
}

// ---------------------------------------------------------------------------

std::string render_release_template(const std::string& tmpl, const std::string& body,
                                    const std::vector<std::string>& citations, const std::string& case_id) {
    std::string cites;
    for (const auto& c : citations) {
        if (!cites.empty()) cites += ", ";
        cites += c;
    }
    std::string out;
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl.compare(i, 2, "{{") == 0) {
            std::size_t close = tmpl.find("}}", i + 2);
            if (close != std::string::npos) {
                std::string key = tmpl.substr(i + 2, close - i - 2);
                if (key == "body") {
                    out += body;
                    i = close + 2;
                    continue;
                }
                if (key == "citations") {
                    out += cites;
                    i = close + 2;
                    continue;
                }
                if (key == "case_id") {
                    out += case_id;
                    i = close + 2;
                    continue;
                }
            }
        }
        out.push_back(tmpl[i++]);
    }
    return out;
}

Workflow::Workflow(Clock clock) : clock_(std::move(clock)) {
    if (!clock_) {
        clock_ = [] {
            return std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                .count();
        };
    }
    templates_["default"] = "Case {{case_id}}\n\n{{body}}\n\nSources: {{citations}}\n";
}

void Workflow::set_template(const std::string& id, std::string text) {
    if (id.empty()) throw Error(ErrorCode::Template, "template id must be nonempty");
    std::lock_guard lock(mu_);
    templates_[id] = std::move(text);
}

bool Workflow::has_template(const std::string& id) const {
    std::lock_guard lock(mu_);
    return templates_.count(id) > 0;
}

std::string Workflow::open_case(std::string id) {
    std::lock_guard lock(mu_);
    if (id.empty()) {
        do {
            id = "case-" + std::to_string(next_case_++);
        } while (cases_.count(id));
    } else if (cases_.count(id)) {
        throw Error(ErrorCode::Conflict, "case '" + id + "' already exists");
    }
    cases_.emplace(id, std::make_shared<Slot>(id));
    return id;
}

std::shared_ptr<Workflow::Slot> Workflow::slot(const std::string& case_id) const {
    std::lock_guard lock(mu_);
    auto it = cases_.find(case_id);
    if (it == cases_.end()) throw Error(ErrorCode::NotFound, "no case '" + case_id + "'");
    return it->second;
}

void Workflow::emit(Slot& s, CaseEventKind kind, const Actor& actor, nlohmann::json payload) {
    CaseEvent e;
    const auto& hist = s.c.history();
    e.seq = hist.empty() ? 1 : hist.back().seq + 1;
    e.timestamp_ms = clock_();
    if (!hist.empty()) e.timestamp_ms = std::max(e.timestamp_ms, hist.back().timestamp_ms);
    e.actor = actor;
    e.kind = kind;
    e.payload = std::move(payload);
    s.c.apply(e);
}

namespace {

void require_transition(const Case& c, CaseEventKind kind, const Actor& actor) {
    if (actor.role != required_role(kind)) {
        throw Error(ErrorCode::Forbidden, std::string(actor_role_name(actor.role)) + " may not " +
                                              std::string(case_event_name(kind)));
    }
    if (!next_state(c.state(), kind)) {
        throw Error(ErrorCode::IllegalTransition, "case " + c.id() + ": cannot " + std::string(case_event_name(kind)) +
                                                      " from state " + std::string(case_state_name(c.state())));
    }
}

std::string trim_copy(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

const Actor kSystem{ActorRole::System, "system"};

}  // namespace

std::vector<std::string> Workflow::consultant_formulate(const std::string& case_id, const std::string& objectives,
                                                        const Actor& actor) {
    auto s = slot(case_id);
    std::lock_guard lock(s->mu);
    require_transition(s->c, CaseEventKind::Formulate, actor);
    std::vector<std::string> queries;
    std::istringstream in(objectives);
    std::string line;
    while (std::getline(in, line)) {
        std::string q = trim_copy(line);
        if (!q.empty()) queries.push_back(std::move(q));
    }
    if (queries.empty()) throw Error(ErrorCode::Validation, "objectives contain no questions");
    emit(*s, CaseEventKind::Formulate, actor, {{"objectives", objectives}, {"queries", queries}});
    return queries;
}

std::vector<QuestionResearch> Workflow::researcher_retrieve(const std::string& case_id, const PipelineContext& ctx,
                                                            const Actor& actor) {
    auto s = slot(case_id);
    std::lock_guard lock(s->mu);
    require_transition(s->c, CaseEventKind::Research, actor);
    if (!ctx.index || ctx.index->empty()) throw Error(ErrorCode::IndexEmpty, "document index is empty");

    nlohmann::json questions = nlohmann::json::array();
    bool all_abstained = true;
    for (const auto& q : s->c.queries()) {
        RetrievalResult r = ctx.index->retrieve(q, ctx.retrieval, *ctx.embedder, *ctx.gazetteer, ctx.kg);
        nlohmann::json docs = nlohmann::json::array();
        for (const auto& d : r.documents) docs.push_back({{"id", d.document->id}, {"score", d.score}});
        questions.push_back({{"abstained", r.abstained}, {"best_score", r.best_score}, {"documents", docs}});
        all_abstained = all_abstained && r.abstained;
    }
    emit(*s, CaseEventKind::Research, actor, {{"questions", questions}});
    if (all_abstained) emit(*s, CaseEventKind::Abstain, actor, nlohmann::json::object());
    return s->c.research();
}

RouteReport Workflow::route_and_answer(const std::string& case_id, const PipelineContext& ctx) {
    auto s = slot(case_id);
    std::lock_guard lock(s->mu);
    require_transition(s->c, CaseEventKind::Route, kSystem);
    if (!ctx.embedder || !ctx.gating || !ctx.experts || !ctx.index) {
        throw Error(ErrorCode::Configuration, "pipeline context is incomplete");
    }

    const auto queries = s->c.queries();
    const auto research = s->c.research();
    RouteReport report;

    struct Pending {
        ExpertQuery query;
        GatingDistribution g;
        RoutingDecision decision;
        bool abstained = false;
    };
    std::vector<Pending> pending;
    nlohmann::json route_questions = nlohmann::json::array();
    for (std::size_t i = 0; i < queries.size(); ++i) {
        Pending p;
        p.abstained = i >= research.size() || research[i].abstained;
        p.query.question = queries[i];
        Vector v = ctx.embedder->embed(queries[i]);
        p.g = gate(v, *ctx.gating);
        p.decision = top_k(p.g, ctx.top_k, ctx.renormalize);
        if (!p.abstained) {
            for (const auto& ref : research[i].documents) {
                if (auto doc = ctx.index->find(ref.document_id)) p.query.documents.push_back({doc, ref.score, 0.0, 0.0});
            }
            p.query.links = link_entities(queries[i], *ctx.gazetteer, "q" + std::to_string(i + 1));
            if (ctx.graph) {
                auto ents = p.query.links.entities();
                for (const auto& t : ctx.graph->triples()) {
                    if (p.query.kg_context.size() >= ctx.kg_context_limit) break;
                    if (std::binary_search(ents.begin(), ents.end(), t.head) ||
                        std::binary_search(ents.begin(), ents.end(), t.tail)) {
                        p.query.kg_context.push_back(t);
                    }
                }
            }
            report.traces.push_back({std::vector<double>(v.values().begin(), v.values().end()), p.g.probs,
                                     p.decision.active.front()});
        }
        p.query.query_vector = std::move(v);
        route_questions.push_back({{"abstained", p.abstained},
                                   {"gates", p.g.probs},
                                   {"active", p.decision.active},
                                   {"gates_used", p.decision.gates_used}});
        pending.push_back(std::move(p));
    }
    emit(*s, CaseEventKind::Route, kSystem, {{"questions", route_questions}});

    nlohmann::json agg_questions = nlohmann::json::array();
    std::vector<std::string> sections;
    std::vector<std::string> citations;
    std::string diagnostics;
    for (std::size_t i = 0; i < pending.size(); ++i) {
        auto& p = pending[i];
        if (p.abstained) {
            std::string text = "No document met the similarity threshold for: " + p.query.question;
            agg_questions.push_back({{"contributions", nlohmann::json::array()},
                                     {"failures", nlohmann::json::array()},
                                     {"text", text}});
            sections.push_back(std::move(text));
            continue;
        }
        ExecutionReport exec = execute(p.decision, p.query, *ctx.experts, ctx.parallel_experts);
        if (exec.outputs.empty()) {
            diagnostics += "question " + std::to_string(i + 1) + ": every active expert failed";
            for (const auto& f : exec.failures) diagnostics += "; expert " + std::to_string(f.expert) + ": " + f.message;
            diagnostics += "\n";
            agg_questions.push_back({{"contributions", nlohmann::json::array()},
                                     {"failures", failures_json(exec.failures)},
                                     {"text", ""}});
            continue;
        }
        AggregatedOutput agg = aggregate(p.g, exec.outputs, ctx.renormalize);
        for (const auto& c : agg.contributions) {
            for (const auto& o : exec.outputs) {
                if (o.expert != c.expert) continue;
                for (const auto& cite : o.citations) {
                    if (std::find(citations.begin(), citations.end(), cite.document_id) == citations.end()) {
                        citations.push_back(cite.document_id);
                    }
                }
            }
        }
        std::string text = agg.text();
        agg_questions.push_back({{"contributions", contributions_json(agg.contributions)},
                                 {"failures", failures_json(exec.failures)},
                                 {"text", text}});
        sections.push_back(std::move(text));
    }

    if (!diagnostics.empty()) {
        emit(*s, CaseEventKind::RoutingFailed, kSystem, {{"diagnostics", diagnostics}, {"questions", agg_questions}});
        report.ok = false;
        report.diagnostics = diagnostics;
        report.traces.clear();
        return report;
    }

    std::string y;
    for (const auto& sec : sections) {
        if (!y.empty()) y += "\n\n";
        y += sec;
    }
    emit(*s, CaseEventKind::Aggregate, kSystem,
         {{"questions", agg_questions}, {"y_aggregated", y}, {"citations", citations}});
    report.ok = true;
    report.y_aggregated = std::move(y);
    return report;
}

void Workflow::submit_for_review(const std::string& case_id) {
    auto s = slot(case_id);
    std::lock_guard lock(s->mu);
    require_transition(s->c, CaseEventKind::SubmitForReview, kSystem);
    emit(*s, CaseEventKind::SubmitForReview, kSystem, nlohmann::json::object());
}

CaseState Workflow::advisor_review(const std::string& case_id, Verdict verdict, const std::string& notes,
                                   const Actor& actor, const TextTransform& advisor) {
    auto s = slot(case_id);
    std::lock_guard lock(s->mu);
    switch (verdict) {
        case Verdict::Approve: {
            require_transition(s->c, CaseEventKind::Approve, actor);
            std::string text = advisor ? advisor(s->c.aggregated_text()) : s->c.aggregated_text();
            emit(*s, CaseEventKind::Approve, actor, {{"notes", notes}, {"text", text}});
            break;
        }
        case Verdict::Revise:
            require_transition(s->c, CaseEventKind::RequestRevision, actor);
            emit(*s, CaseEventKind::RequestRevision, actor, {{"notes", notes}});
            break;
        case Verdict::Reject:
            require_transition(s->c, CaseEventKind::Reject, actor);
            emit(*s, CaseEventKind::Reject, actor, {{"notes", notes}});
            break;
    }
    return s->c.state();
}

FinalDocument Workflow::paralegal_finalize(const std::string& case_id, const std::string& template_id,
                                           const Actor& actor, const TextTransform& paralegal) {
    auto s = slot(case_id);
    FinalDocument doc;
    {
        std::lock_guard lock(s->mu);
        require_transition(s->c, CaseEventKind::Finalize, actor);
        std::string tmpl;
        {
            std::lock_guard tl(mu_);
            auto it = templates_.find(template_id);
            if (it == templates_.end()) throw Error(ErrorCode::Template, "no release template '" + template_id + "'");
            tmpl = it->second;
        }
        std::string text = paralegal ? paralegal(s->c.advisor_text()) : s->c.advisor_text();
        std::string rendered = render_release_template(tmpl, text, s->c.citations(), case_id);
        emit(*s, CaseEventKind::Finalize, actor,
             {{"template_id", template_id}, {"text", text}, {"rendered", rendered}});
        doc = *s->c.final_document();
    }
    if (release_hook_) release_hook_(doc);
    return doc;
}

Case Workflow::get(const std::string& case_id) const {
    auto s = slot(case_id);
    std::lock_guard lock(s->mu);
    return s->c;
}

std::vector<std::string> Workflow::case_ids() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> ids;
    for (const auto& [id, _] : cases_) ids.push_back(id);
    return ids;
}

std::vector<Case> Workflow::cases_in(std::initializer_list<CaseState> states) const {
    std::vector<std::shared_ptr<Slot>> slots;
    {
        std::lock_guard lock(mu_);
        for (const auto& [id, s] : cases_) slots.push_back(s);
    }
    std::vector<Case> out;
    for (const auto& s : slots) {
        std::lock_guard lock(s->mu);
        if (std::find(states.begin(), states.end(), s->c.state()) != states.end()) out.push_back(s->c);
    }
    return out;
}

void Workflow::restore(const std::string& case_id, const std::vector<CaseEvent>& events) {
    Case c = Case::replay(case_id, events);
    auto s = std::make_shared<Slot>(case_id);
    s->c = std::move(c);
    std::lock_guard lock(mu_);
    cases_[case_id] = std::move(s);
}

std::map<std::string, std::vector<CaseEvent>> Workflow::export_logs() const {
    std::vector<std::pair<std::string, std::shared_ptr<Slot>>> slots;
    {
        std::lock_guard lock(mu_);
        for (const auto& [id, s] : cases_) slots.emplace_back(id, s);
    }
    std::map<std::string, std::vector<CaseEvent>> out;
    for (const auto& [id, s] : slots) {
        std::lock_guard lock(s->mu);
        out[id] = s->c.history();
    }
    return out;
}

}  // namespace lexroute
