#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "lexroute/embedder.hpp"
#include "lexroute/eval.hpp"
#include "lexroute/kg.hpp"
#include "lexroute/moe.hpp"
#include "lexroute/retriever.hpp"
#include "lexroute/rlhf.hpp"
#include "lexroute/transe.hpp"
#include "lexroute/workflow.hpp"

namespace lexroute {

/// Roles a bearer token can carry. Admin may trigger policy updates.
enum class AuthRole { Consultant, Researcher, Advisor, Paralegal, Admin };

std::string_view auth_role_name(AuthRole r);
AuthRole parse_auth_role(std::string_view s);

struct EmbedderConfig {
    std::string kind = "hash";  // hash | http
    std::size_t dim = HashEmbedder::kDefaultDim;
    std::size_t ngram = 3;
    std::uint64_t seed = 0;
    std::string url;
    int timeout_ms = 5000;
};

struct MoeConfig {
    std::size_t top_k = 2;
    bool renormalize = true;
    bool parallel = false;
    std::uint64_t gate_seed = 11;
    double gate_scale = 0.01;
    std::size_t kg_context_limit = 5;
};

struct DataConfig {
    std::string documents;
    std::string triples;
    std::string gazetteer;
    std::string eval_dir;
};

/// Full engine/service configuration. Parsing rejects unknown keys at every
/// level; relative paths are resolved against `base_dir`.
struct ApiConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    EmbedderConfig embedder;
    RetrievalConfig retrieval;
    MoeConfig moe;
    PpoConfig ppo;
    bool auto_update = true;
    RewardModel reward;
    TransEConfig transe;
    bool train_kg_on_load = true;
    std::vector<ExpertProfile> experts = default_expert_profiles();
    std::map<std::string, AuthRole> tokens;
    std::map<std::string, std::string> templates;
    std::vector<EvalTask> eval_tasks;
    DataConfig data;
    std::string snapshot;
    std::string journal;
    std::string audit_dir;
    std::size_t abstention_window = 100;
    std::filesystem::path base_dir = ".";

    void validate() const;
    std::string resolve(const std::string& path) const;
};

ApiConfig parse_api_config(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
ApiConfig load_api_config(const std::string& path);

std::shared_ptr<Embedder> make_embedder(const EmbedderConfig& cfg, std::shared_ptr<HttpClient> http = nullptr);

struct QuestionScores {
    std::string question;
    bool abstained = true;
    double best_score = 0.0;
    std::vector<RetrievedRef> documents;
    std::vector<double> gates;
    std::vector<ExpertId> active;
    std::vector<double> gates_used;
};

struct QueryResult {
    std::string case_id;
    CaseState state = CaseState::Intake;
    std::string answer;
    std::vector<std::string> citations;
    bool abstained = false;
    std::string diagnostics;
    std::vector<QuestionScores> questions;
};

nlohmann::json query_result_to_json(const QueryResult& r);

struct FeedbackOutcome {
    double reward = 0.0;
    std::size_t trajectories = 0;
    std::size_t buffered = 0;
    std::optional<PpoResult> update;
};

struct UpdateOutcome {
    bool applied = false;
    std::uint64_t policy_version = 0;
    std::size_t batch = 0;
    double baseline = 0.0;
    std::string message;
};

struct EngineMetrics {
    std::size_t n_feedback = 0;
    std::optional<double> mean_reward;
    std::uint64_t policy_version = 0;
    std::optional<double> abstention_rate_window;
    std::size_t buffered = 0;
    std::size_t documents = 0;
    std::size_t triples = 0;
    std::size_t cases = 0;
};

nlohmann::json metrics_to_json(const EngineMetrics& m);

inline constexpr int kSnapshotFormatVersion = 1;

/// Owns every store. Reads go through shared pointers published under a
/// short lock, so a query keeps a consistent view while writers build and
/// swap replacements. Each store has its own writer lock; snapshot load
/// takes the engine lock exclusively.
class Engine {
public:
    explicit Engine(ApiConfig config, std::shared_ptr<HttpClient> http = nullptr);

    const ApiConfig& config() const { return cfg_; }

    /// Loads gazetteer, triples and documents named in the data section,
    /// then trains KG embeddings when configured and triples exist.
    void bootstrap();

    std::size_t ingest_documents(const std::vector<DocumentFields>& docs);
    std::size_t ingest_documents_file(const std::string& path);
    IngestReport ingest_triples_file(const std::string& path);
    IngestReport ingest_triples(std::istream& in);
    /// Replaces the gazetteer and relinks every indexed document.
    void set_gazetteer(Gazetteer gazetteer);
    void load_gazetteer_file(const std::string& path);
    /// Trains TransE on the current graph and publishes the embeddings.
    std::vector<double> train_kg();

    QueryResult query(const std::string& text, const std::string& case_id = {});
    RetrievalResult retrieve(const std::string& text) const;
    GatingDistribution gate_text(const std::string& text) const;
    GatingDistribution gate_vector(const Vector& v) const;

    Case get_case(const std::string& case_id) const;
    CaseState review(const std::string& case_id, Verdict verdict, const std::string& notes, const Actor& actor);
    FinalDocument finalize(const std::string& case_id, const std::string& template_id, const Actor& actor);
    std::vector<Case> review_queue() const;

    FeedbackOutcome submit_feedback(FeedbackRecord record);
    UpdateOutcome update_policy();
    /// Appends trajectories directly (offline gate training).
    void push_trajectories(const std::vector<Trajectory>& batch);

    EngineMetrics metrics() const;
    nlohmann::json experts_json() const;

    GatingNetwork gating() const;
    void set_gating(GatingNetwork net);
    std::optional<double> baseline() const;
    std::shared_ptr<const DocumentIndex> index() const;
    std::shared_ptr<const KGEmbeddings> kg_embeddings() const;
    KnowledgeGraph graph() const;
    const Embedder& embedder() const { return *embedder_; }
    std::shared_ptr<const Embedder> embedder_ptr() const { return embedder_; }

    /// Scores a task with the extractive pipeline over the live index.
    MetricReport evaluate(const EvalTask& task, std::span<const EvalRecord> records);

    nlohmann::json snapshot_json() const;
    void save_snapshot(const std::string& path) const;
    /// Throws Checksum or Version and leaves the engine untouched on failure.
    void load_snapshot(const std::string& path);
    void restore_snapshot_json(const nlohmann::json& body);

    /// Appends one write-ahead record; returns its sequence number.
    std::uint64_t journal(const std::string& op, const nlohmann::json& body);

private:
    PipelineContext context(const std::shared_ptr<const DocumentIndex>& index,
                            const std::shared_ptr<const KGEmbeddings>& kg,
                            const std::shared_ptr<const GatingNetwork>& gate) const;
    void relink_locked(const Gazetteer& g);

    ApiConfig cfg_;
    std::shared_ptr<HttpClient> http_;
    std::shared_ptr<Embedder> embedder_;
    std::shared_ptr<ExpertRegistry> registry_;

    mutable std::shared_mutex engine_mu_;  // exclusive for snapshot load

    mutable std::mutex ptr_mu_;  // guards the published pointers below
    std::shared_ptr<const DocumentIndex> index_;
    std::shared_ptr<const KnowledgeGraph> graph_;
    std::shared_ptr<const Gazetteer> gazetteer_;
    std::shared_ptr<const KGEmbeddings> kg_;
    std::shared_ptr<const GatingNetwork> gate_;

    std::mutex index_write_mu_;
    std::mutex kg_write_mu_;
    std::mutex policy_write_mu_;

    std::unique_ptr<Workflow> workflow_;
    FeedbackBuffer buffer_;

    mutable std::mutex stats_mu_;
    std::optional<double> baseline_;
    std::map<std::string, std::vector<RoutingTrace>> traces_;
    std::size_t n_feedback_ = 0;
    double reward_sum_ = 0.0;
    std::deque<bool> abstention_window_;

    std::mutex journal_mu_;
    std::uint64_t journal_seq_ = 0;
};

/// "LEXROUTE-SNAPSHOT v<version> crc32=<8 hex> bytes=<n>\n" followed by the body.
std::string encode_snapshot(const std::string& body, int version = kSnapshotFormatVersion);
/// Verifies header, length and checksum, and returns the body.
std::string decode_snapshot(const std::string& data, int expected_version = kSnapshotFormatVersion);

}  // namespace lexroute
