#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lexroute/embedder.hpp"
#include "lexroute/generation.hpp"
#include "lexroute/http_client.hpp"
#include "lexroute/kg.hpp"
#include "lexroute/retriever.hpp"
#include "lexroute/taxonomy.hpp"
#include "lexroute/vector.hpp"

namespace lexroute {

/// 1-based expert id; gate index is id - 1.
using ExpertId = int;

/// Linear-softmax gate: g = softmax(W v + b), W is N x d row-major.
struct GatingNetwork {
    std::size_t experts = 0;
    std::size_t dim = 0;
    std::vector<double> weights;
    std::vector<double> bias;
    std::uint64_t version = 0;

    static GatingNetwork zeros(std::size_t experts, std::size_t dim);
    /// Small seeded random initialisation (uniform in [-scale, scale]).
    static GatingNetwork random(std::size_t experts, std::size_t dim, std::uint64_t seed, double scale = 0.01);

    double& w(std::size_t expert, std::size_t j) { return weights[expert * dim + j]; }
    double w(std::size_t expert, std::size_t j) const { return weights[expert * dim + j]; }

    void validate() const;
    friend bool operator==(const GatingNetwork&, const GatingNetwork&) = default;
};

struct GatingDistribution {
    std::vector<double> probs;

    std::size_t size() const { return probs.size(); }
    double operator[](std::size_t i) const { return probs[i]; }
};

/// W v + b. Throws Dimension on a size mismatch.
std::vector<double> gate_logits(const Vector& query, const GatingNetwork& net);

/// Max-subtracted softmax. Non-finite logits throw Numeric. Entries that
/// underflow are floored at the smallest normal double so every gate stays
/// strictly positive.
GatingDistribution softmax(std::span<const double> logits);

GatingDistribution gate(const Vector& query, const GatingNetwork& net);

struct RoutingDecision {
    std::vector<ExpertId> active;      // selection order: gate descending, id ascending on ties
    std::vector<double> gates_used;    // aligned with `active`
    std::size_t k = 0;
    bool renormalized = false;
};

/// Picks the min(k, N) largest gates. With `renormalize` the selected gates
/// are rescaled to sum to one. k must be >= 1.
RoutingDecision top_k(const GatingDistribution& g, std::size_t k, bool renormalize);

struct ExpertProfile {
    ExpertId id = 0;
    Role role = Role::Consultant;
    std::set<Task> tasks;
    std::string handler_kind;
    nlohmann::json handler_params = nlohmann::json::object();
};

/// Everything an expert may look at for one question.
struct ExpertQuery {
    std::string question;
    std::optional<Vector> query_vector;
    std::vector<ScoredDocument> documents;
    EntityLinkSet links;
    std::vector<Triple> kg_context;
};

struct ExpertOutput {
    ExpertId expert = 0;
    std::string payload;
    std::optional<Vector> vector;
    std::vector<Citation> citations;
};

class ExpertHandler {
public:
    virtual ~ExpertHandler() = default;
    /// Throws on failure; the router records it against this expert only.
    virtual ExpertOutput run(ExpertId id, const ExpertQuery& query) const = 0;
};

struct ExpertFailure {
    ExpertId expert = 0;
    std::string message;
};

struct ExecutionReport {
    std::vector<ExpertOutput> outputs;    // ordered by expert id
    std::vector<ExpertFailure> failures;  // ordered by expert id
};

class ExpertRegistry {
public:
    void add(ExpertProfile profile, std::shared_ptr<const ExpertHandler> handler);

    std::size_t size() const { return profiles_.size(); }
    const std::vector<ExpertProfile>& profiles() const { return profiles_; }
    const ExpertProfile& profile(ExpertId id) const;
    /// Null if no handler is registered.
    std::shared_ptr<const ExpertHandler> handler(ExpertId id) const;

    /// Ids must be exactly 1..N and role/task pairs must follow the task table.
    void validate() const;

private:
    std::vector<ExpertProfile> profiles_;
    std::map<ExpertId, std::shared_ptr<const ExpertHandler>> handlers_;
};

/// Runs each active expert once and independently. A missing handler throws
/// Routing before anything runs; a throwing handler becomes a failure entry.
ExecutionReport execute(const RoutingDecision& decision, const ExpertQuery& query, const ExpertRegistry& registry,
                        bool parallel = false);

struct Contribution {
    ExpertId expert = 0;
    double weight = 0.0;
    std::string payload;
};

struct AggregatedOutput {
    std::optional<Vector> combined;
    std::vector<Contribution> contributions;  // weight descending, id ascending on ties

    /// Payloads in contribution order, blank-line separated. A payload that
    /// is a substring of another is dropped; the longer one keeps the
    /// earlier slot.
    std::string text() const;
};

/// Weighted combination of expert outputs. Weights are the raw gates, or
/// with `renormalize` the gates rescaled over the outputs present. The
/// vector sum is folded in expert-id order. All-or-none of the outputs must
/// carry vectors of one dimension; otherwise Aggregation is thrown, as it
/// is for an empty output list.
AggregatedOutput aggregate(const GatingDistribution& g, std::span<const ExpertOutput> outputs, bool renormalize);

// ---------------------------------------------------------------------------
// Built-in handlers

/// Payload "[<role> #id] <question>"; vector is the query vector if present.
class EchoHandler final : public ExpertHandler {
public:
    explicit EchoHandler(Role role) : role_(role) {}
    ExpertOutput run(ExpertId id, const ExpertQuery& query) const override;

private:
    Role role_;
};

/// Fills {{question}}, {{role}}, {{top_document}} and {{top_title}}.
class TemplateHandler final : public ExpertHandler {
public:
    TemplateHandler(Role role, std::string tmpl) : role_(role), template_(std::move(tmpl)) {}
    ExpertOutput run(ExpertId id, const ExpertQuery& query) const override;

private:
    Role role_;
    std::string template_;
};

/// Answers from the retrieved documents through a generation backend; the
/// output vector is the embedding of the drafted text.
class GenerationHandler final : public ExpertHandler {
public:
    GenerationHandler(std::shared_ptr<const GenerationBackend> backend, std::shared_ptr<const Embedder> embedder,
                      std::size_t max_tokens = 256);
    ExpertOutput run(ExpertId id, const ExpertQuery& query) const override;

private:
    std::shared_ptr<const GenerationBackend> backend_;
    std::shared_ptr<const Embedder> embedder_;
    std::size_t max_tokens_;
};

struct HandlerContext {
    std::shared_ptr<const Embedder> embedder;
    std::shared_ptr<HttpClient> http;
};

/// handler_kind: echo | template | extractive_mock | external_http.
std::shared_ptr<const ExpertHandler> make_handler(const ExpertProfile& profile, const HandlerContext& ctx);

/// Expert registry config: [{id, role, tasks, handler_kind, handler_params}].
std::vector<ExpertProfile> parse_expert_profiles(const nlohmann::json& j);
nlohmann::json expert_profiles_to_json(const std::vector<ExpertProfile>& profiles);
ExpertRegistry build_registry(const std::vector<ExpertProfile>& profiles, const HandlerContext& ctx);

/// One extractive expert per role, covering every task in the table.
std::vector<ExpertProfile> default_expert_profiles();

}  // namespace lexroute
