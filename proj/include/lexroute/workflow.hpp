#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lexroute/embedder.hpp"
#include "lexroute/kg.hpp"
#include "lexroute/moe.hpp"
#include "lexroute/retriever.hpp"
#include "lexroute/transe.hpp"

namespace lexroute {

enum class CaseState {
    Intake,
    Formulated,
    Researched,
    Routed,
    Aggregated,
    AdvisorReview,
    Revise,
    ParalegalFinalize,
    Released,
    Abstained,
    Rejected,
};

inline constexpr std::array<CaseState, 11> kAllCaseStates{
    CaseState::Intake,        CaseState::Formulated, CaseState::Researched,        CaseState::Routed,
    CaseState::Aggregated,    CaseState::AdvisorReview, CaseState::Revise,         CaseState::ParalegalFinalize,
    CaseState::Released,      CaseState::Abstained,  CaseState::Rejected,
};

enum class CaseEventKind {
    Formulate,
    Research,
    Abstain,
    Route,
    Aggregate,
    RoutingFailed,
    SubmitForReview,
    Approve,
    RequestRevision,
    Reject,
    Finalize,
};

inline constexpr std::array<CaseEventKind, 11> kAllCaseEvents{
    CaseEventKind::Formulate,      CaseEventKind::Research,        CaseEventKind::Abstain,
    CaseEventKind::Route,          CaseEventKind::Aggregate,       CaseEventKind::RoutingFailed,
    CaseEventKind::SubmitForReview, CaseEventKind::Approve,        CaseEventKind::RequestRevision,
    CaseEventKind::Reject,         CaseEventKind::Finalize,
};

enum class ActorRole { Consultant, Researcher, Advisor, Paralegal, System };

std::string_view case_state_name(CaseState s);
CaseState parse_case_state(std::string_view s);
std::string_view case_event_name(CaseEventKind e);
CaseEventKind parse_case_event(std::string_view s);
std::string_view actor_role_name(ActorRole r);
ActorRole parse_actor_role(std::string_view s);

/// The transition relation. nullopt means the event is illegal in `from`.
std::optional<CaseState> next_state(CaseState from, CaseEventKind event);

/// Role allowed to emit an event.
ActorRole required_role(CaseEventKind event);

bool is_terminal(CaseState s);

struct Actor {
    ActorRole role = ActorRole::System;
    std::string name = "system";
};

struct CaseEvent {
    std::uint64_t seq = 0;
    std::int64_t timestamp_ms = 0;
    Actor actor;
    CaseEventKind kind = CaseEventKind::Formulate;
    nlohmann::json payload = nlohmann::json::object();
};

struct RetrievedRef {
    std::string document_id;
    double score = 0.0;
};

struct QuestionResearch {
    bool abstained = true;
    double best_score = 0.0;
    std::vector<RetrievedRef> documents;
};

struct QuestionRouting {
    std::vector<double> gates;
    std::vector<ExpertId> active;
    std::vector<double> gates_used;
    std::vector<Contribution> contributions;
    std::vector<ExpertFailure> failures;
    std::string text;
    bool abstained = false;
};

struct Stamp {
    std::string actor;
    std::int64_t timestamp_ms = 0;
};

struct FinalDocument {
    std::string case_id;
    std::string text;      // Paralegal(Advisor(y_aggregated))
    std::string rendered;  // text placed into the release template
    std::vector<std::string> citations;
    Stamp advisor_approval;
    Stamp paralegal_signoff;
    std::string template_id;
};

/// A case is a pure fold over its event log: every field below is derived
/// by apply(), so replaying the log rebuilds it exactly.
class Case {
public:
    explicit Case(std::string id) : id_(std::move(id)) {}

    static Case replay(const std::string& id, const std::vector<CaseEvent>& events);

    /// Validates role and transition, then records the event. Throws
    /// Forbidden or IllegalTransition without changing anything.
    void apply(const CaseEvent& event);

    const std::string& id() const { return id_; }
    CaseState state() const { return state_; }
    const std::string& objectives() const { return objectives_; }
    const std::vector<std::string>& queries() const { return queries_; }
    const std::vector<QuestionResearch>& research() const { return research_; }
    const std::vector<QuestionRouting>& routing() const { return routing_; }
    const std::string& aggregated_text() const { return aggregated_; }
    const std::vector<std::string>& citations() const { return citations_; }
    const std::string& advisor_text() const { return advisor_text_; }
    const std::vector<std::string>& revision_notes() const { return notes_; }
    const std::optional<Stamp>& advisor_approval() const { return advisor_approval_; }
    const std::optional<FinalDocument>& final_document() const { return final_; }
    const std::vector<CaseEvent>& history() const { return history_; }
    std::int64_t opened_at() const { return history_.empty() ? 0 : history_.front().timestamp_ms; }

    nlohmann::json to_json() const;

private:
    std::string id_;
    CaseState state_ = CaseState::Intake;
    std::string objectives_;
    std::vector<std::string> queries_;
    std::vector<QuestionResearch> research_;
    std::vector<QuestionRouting> routing_;
    std::string aggregated_;
    std::vector<std::string> citations_;
    std::string advisor_text_;
    std::vector<std::string> notes_;
    std::optional<Stamp> advisor_approval_;
    std::optional<FinalDocument> final_;
    std::vector<CaseEvent> history_;
};

nlohmann::json case_event_to_json(const CaseEvent& e);
CaseEvent case_event_from_json(const nlohmann::json& j);

/// Read-only view of the engine pieces a case needs to research and route.
struct PipelineContext {
    const Embedder* embedder = nullptr;
    const DocumentIndex* index = nullptr;
    const Gazetteer* gazetteer = nullptr;
    const KnowledgeGraph* graph = nullptr;
    const KGEmbeddings* kg = nullptr;  // may be null
    const GatingNetwork* gating = nullptr;
    const ExpertRegistry* experts = nullptr;
    RetrievalConfig retrieval;
    std::size_t top_k = 2;
    bool renormalize = true;
    bool parallel_experts = false;
    std::size_t kg_context_limit = 5;
};

/// What RLHF needs from a routed question: the query vector, the full gate
/// distribution at decision time and the top-1 expert.
struct RoutingTrace {
    std::vector<double> query_vector;
    std::vector<double> gates;
    ExpertId action = 0;
};

struct RouteReport {
    bool ok = false;
    std::string y_aggregated;
    std::vector<RoutingTrace> traces;
    std::string diagnostics;
};

enum class Verdict { Approve, Revise, Reject };
Verdict parse_verdict(std::string_view s);

using TextTransform = std::function<std::string(const std::string&)>;

/// Case registry and the role operations over it. Distinct cases can be
/// worked on concurrently; operations on one case hold that case's lock.
class Workflow {
public:
    using Clock = std::function<std::int64_t()>;
    using ReleaseHook = std::function<void(const FinalDocument&)>;

    explicit Workflow(Clock clock = {});

    void set_release_hook(ReleaseHook hook) { release_hook_ = std::move(hook); }
    void set_template(const std::string& id, std::string text);
    bool has_template(const std::string& id) const;

    /// Opens a case in Intake. Empty id picks the next "case-<n>".
    std::string open_case(std::string id = {});

    std::vector<std::string> consultant_formulate(const std::string& case_id, const std::string& objectives,
                                                  const Actor& actor);
    std::vector<QuestionResearch> researcher_retrieve(const std::string& case_id, const PipelineContext& ctx,
                                                      const Actor& actor);
    RouteReport route_and_answer(const std::string& case_id, const PipelineContext& ctx);
    void submit_for_review(const std::string& case_id);
    CaseState advisor_review(const std::string& case_id, Verdict verdict, const std::string& notes, const Actor& actor,
                             const TextTransform& advisor = {});
    FinalDocument paralegal_finalize(const std::string& case_id, const std::string& template_id, const Actor& actor,
                                     const TextTransform& paralegal = {});

    /// Copy of the case; throws NotFound.
    Case get(const std::string& case_id) const;
    std::vector<std::string> case_ids() const;
    std::vector<Case> cases_in(std::initializer_list<CaseState> states) const;

    /// Rebuilds a case from a persisted log (snapshot load).
    void restore(const std::string& case_id, const std::vector<CaseEvent>& events);
    std::map<std::string, std::vector<CaseEvent>> export_logs() const;
    const std::map<std::string, std::string>& templates() const { return templates_; }

private:
    struct Slot {
        std::mutex mu;
        Case c;
        explicit Slot(std::string id) : c(std::move(id)) {}
    };

    std::shared_ptr<Slot> slot(const std::string& case_id) const;
    void emit(Slot& s, CaseEventKind kind, const Actor& actor, nlohmann::json payload);

    Clock clock_;
    ReleaseHook release_hook_;
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<Slot>> cases_;
    std::map<std::string, std::string> templates_;
    std::uint64_t next_case_ = 1;
};

/// Replaces {{body}}, {{citations}} and {{case_id}}.
std::string render_release_template(const std::string& tmpl, const std::string& body,
                                    const std::vector<std::string>& citations, const std::string& case_id);

}  // namespace lexroute
