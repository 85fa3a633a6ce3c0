#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lexroute/moe.hpp"
#include "lexroute/workflow.hpp"

namespace lexroute {

enum class FeedbackComponent { Relevance = 0, Accuracy = 1, Compliance = 2, Satisfaction = 3 };

inline constexpr std::array<FeedbackComponent, 4> kAllComponents{
    FeedbackComponent::Relevance, FeedbackComponent::Accuracy, FeedbackComponent::Compliance,
    FeedbackComponent::Satisfaction};

std::string_view component_name(FeedbackComponent c);

struct FeedbackRecord {
    std::string response_id;
    std::string case_id;
    ActorRole role = ActorRole::Paralegal;
    std::array<std::optional<double>, 4> scores;  // indexed by FeedbackComponent
    std::optional<std::string> qualitative_label;
    std::optional<std::string> comment;
    std::int64_t timestamp_ms = 0;

    std::optional<double>& score(FeedbackComponent c) { return scores[static_cast<std::size_t>(c)]; }
    const std::optional<double>& score(FeedbackComponent c) const { return scores[static_cast<std::size_t>(c)]; }
    bool complete() const;
    /// Throws Validation unless complete and every score lies in [0, 1].
    std::array<double, 4> deltas() const;
    /// Only Advisor and Paralegal feedback may move the policy.
    bool policy_affecting() const { return role == ActorRole::Advisor || role == ActorRole::Paralegal; }
};

nlohmann::json feedback_to_json(const FeedbackRecord& r);
FeedbackRecord feedback_from_json(const nlohmann::json& j);

struct QualitativeMapping {
    FeedbackComponent component;
    double score;
};

/// Label -> component score table. Labels are "<level> <component>" such as
/// "high relevance"; matching ignores case and surrounding whitespace.
class QualitativeScale {
public:
    /// Levels unusable 0.0, very low 0.25, low 0.5, medium 0.75, high 1.0
    /// for each of the four components.
    static QualitativeScale defaults();

    void set(const std::string& label, FeedbackComponent component, double score);
    /// Throws Mapping for an unknown label.
    QualitativeMapping map(std::string_view label) const;
    const std::map<std::string, QualitativeMapping>& entries() const { return table_; }

private:
    std::map<std::string, QualitativeMapping> table_;
};

/// Fills the component named by the record's qualitative label. A record
/// without a label is returned unchanged; an unmapped label throws Mapping.
FeedbackRecord apply_qualitative(FeedbackRecord record, const QualitativeScale& scale);

struct RewardModel {
    std::array<double, 4> weights{0.25, 0.25, 0.25, 0.25};
    std::map<ActorRole, double> role_multiplier;  // missing roles use 1.0

    double multiplier(ActorRole role) const;
    void validate() const;
};

struct RewardSignal {
    double reward = 0.0;
    std::vector<std::string> records;
};

/// R = sum_k (m_role * w_k) * delta_k.
RewardSignal compute_reward(const FeedbackRecord& record, const RewardModel& model);

struct PpoConfig {
    double learning_rate = 1e-3;
    double clip = 0.2;
    std::size_t batch_threshold = 128;
    int epochs = 4;
    std::uint64_t seed = 7;
    double plateau_tolerance = 0.01;
    std::size_t plateau_min_records = 20;

    void validate() const;
};

/// True when the buffer has reached the batch threshold, or when it holds
/// at least plateau_min_records rewards and the means of its two most
/// recent equal halves differ by less than plateau_tolerance (relative).
bool should_update(std::span<const double> rewards, const PpoConfig& cfg);

/// One routed decision in bandit form. The behaviour-policy probabilities
/// are stored as observed at decision time.
struct Trajectory {
    std::vector<double> query;
    std::vector<double> old_probs;
    ExpertId action = 1;
    double reward = 0.0;
};

nlohmann::json trajectory_to_json(const Trajectory& t);
Trajectory trajectory_from_json(const nlohmann::json& j);

struct PolicyGradient {
    std::vector<double> weights;  // N x d row-major, matches GatingNetwork
    std::vector<double> bias;
};

/// Mean over the batch of min(r A, clip(r, 1 - eps, 1 + eps) A), with
/// r = pi(a|v) / pi_old(a|v).
double clipped_surrogate(const GatingNetwork& policy, std::span<const Trajectory> batch,
                         std::span<const double> advantages, double clip);

/// Closed-form gradient of clipped_surrogate for the linear-softmax policy.
/// A sample contributes A r (e_a - pi) v^T to dW (and A r (e_a - pi) to db)
/// unless its clipped branch is the active minimum, in which case it
/// contributes nothing.
PolicyGradient surrogate_gradient(const GatingNetwork& policy, std::span<const Trajectory> batch,
                                  std::span<const double> advantages, double clip);

struct PpoResult {
    GatingNetwork policy;
    double baseline = 0.0;
    bool applied = false;
    std::string alert;
    std::vector<double> surrogate;  // objective before each epoch's step
};

/// `epochs` steps of gradient ascent on the clipped surrogate with
/// advantages R - baseline (batch mean when no baseline exists yet). The
/// returned baseline is the batch mean. The version increments only when a
/// parameter moved. A non-finite gradient aborts the whole update and
/// returns the input policy with `applied == false`.
PpoResult ppo_update(const GatingNetwork& policy, std::span<const Trajectory> batch, const PpoConfig& cfg,
                     std::optional<double> baseline);

/// Feedback buffer with concurrent appends and an atomic drain.
class FeedbackBuffer {
public:
    void push(Trajectory t);
    std::size_t size() const;
    std::vector<double> rewards() const;
    std::vector<Trajectory> drain();
    std::vector<Trajectory> contents() const;

private:
    mutable std::mutex mu_;
    std::vector<Trajectory> items_;
};

}  // namespace lexroute
