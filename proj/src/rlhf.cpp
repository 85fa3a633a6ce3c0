#include "lexroute/rlhf.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "lexroute/error.hpp"

namespace lexroute {

std::string_view component_name(FeedbackComponent c) {
    switch (c) {
        case FeedbackComponent::Relevance: return "relevance";
        case FeedbackComponent::Accuracy: return "accuracy";
        case FeedbackComponent::Compliance: return "compliance";
        case FeedbackComponent::Satisfaction: return "satisfaction";
    }
    return "relevance";
}

bool FeedbackRecord::complete() const {
    return std::all_of(scores.begin(), scores.end(), [](const auto& s) { return s.has_value(); });
}

std::array<double, 4> FeedbackRecord::deltas() const {
    std::array<double, 4> out{};
    for (FeedbackComponent c : kAllComponents) {
        const auto& s = score(c);
        if (!s) {
            throw Error(ErrorCode::Validation, "feedback for " + response_id + " is missing " +
                                                   std::string(component_name(c)));
        }
        if (!(*s >= 0.0 && *s <= 1.0)) {
            throw Error(ErrorCode::Validation, std::string(component_name(c)) + " score must lie in [0, 1]");
        }
        out[static_cast<std::size_t>(c)] = *s;
    }
    return out;
}

nlohmann::json feedback_to_json(const FeedbackRecord& r) {
    nlohmann::json j;
    j["response_id"] = r.response_id;
    j["case_id"] = r.case_id;
    j["role"] = actor_role_name(r.role);
    for (FeedbackComponent c : kAllComponents) {
        const auto& s = r.score(c);
        j[std::string(component_name(c))] = s ? nlohmann::json(*s) : nlohmann::json(nullptr);
    }
    j["qualitative_label"] = r.qualitative_label ? nlohmann::json(*r.qualitative_label) : nlohmann::json(nullptr);
    j["comment"] = r.comment ? nlohmann::json(*r.comment) : nlohmann::json(nullptr);
    j["timestamp_ms"] = r.timestamp_ms;
    return j;
}

FeedbackRecord feedback_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(ErrorCode::Validation, "feedback must be a JSON object");
    static const std::vector<std::string> allowed{"response_id", "case_id",           "role",    "relevance",
                                                  "accuracy",    "compliance",        "satisfaction",
                                                  "qualitative_label", "comment", "timestamp_ms"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
            throw Error(ErrorCode::Validation, "unknown feedback field '" + it.key() + "'");
        }
    }
    FeedbackRecord r;
    auto str = [&](const char* key, bool required) -> std::optional<std::string> {
        if (!j.contains(key) || j[key].is_null()) {
            if (required) throw Error(ErrorCode::Validation, std::string("feedback missing '") + key + "'");
            return std::nullopt;
        }
        if (!j[key].is_string()) throw Error(ErrorCode::Validation, std::string("feedback '") + key + "' must be a string");
        return j[key].get<std::string>();
    };
    r.case_id = *str("case_id", true);
    r.response_id = str("response_id", false).value_or(r.case_id);
    if (auto role = str("role", false)) r.role = parse_actor_role(*role);
    for (FeedbackComponent c : kAllComponents) {
        std::string key(component_name(c));
        if (!j.contains(key) || j[key].is_null()) continue;
        if (!j[key].is_number()) throw Error(ErrorCode::Validation, "feedback '" + key + "' must be a number");
        double v = j[key].get<double>();
        if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::Validation, "feedback '" + key + "' must lie in [0, 1]");
        r.score(c) = v;
    }
    r.qualitative_label = str("qualitative_label", false);
    r.comment = str("comment", false);
    if (j.contains("timestamp_ms") && j["timestamp_ms"].is_number_integer()) {
        r.timestamp_ms = j["timestamp_ms"].get<std::int64_t>();
    }
    return r;
}

namespace {

std::string normalize_label(std::string_view s) {
    std::string out;
    bool space = false;
    for (unsigned char c : s) {
        if (std::isspace(c)) {
            space = !out.empty();
            continue;
        }
        if (space) out.push_back(' ');
        space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

}  // namespace

QualitativeScale QualitativeScale::defaults() {
    QualitativeScale s;
    const std::pair<const char*, double> levels[] = {
        {"unusable", 0.0}, {"very low", 0.25}, {"low", 0.5}, {"medium", 0.75}, {"high", 1.0}};
    for (FeedbackComponent c : kAllComponents) {
        for (const auto& [level, score] : levels) {
            s.set(std::string(level) + " " + std::string(component_name(c)), c, score);
        }
    }
    return s;
}

void QualitativeScale::set(const std::string& label, FeedbackComponent component, double score) {
    if (!(score >= 0.0 && score <= 1.0)) throw Error(ErrorCode::Configuration, "qualitative score outside [0, 1]");
    std::string key = normalize_label(label);
    if (key.empty()) throw Error(ErrorCode::Configuration, "empty qualitative label");
    table_[key] = {component, score};
}

QualitativeMapping QualitativeScale::map(std::string_view label) const {
    auto it = table_.find(normalize_label(label));
    if (it == table_.end()) {
        throw Error(ErrorCode::Mapping, "no mapping for qualitative label '" + std::string(label) + "'");
    }
    return it->second;
}

FeedbackRecord apply_qualitative(FeedbackRecord record, const QualitativeScale& scale) {
    if (!record.qualitative_label) return record;
    QualitativeMapping m = scale.map(*record.qualitative_label);
    record.score(m.component) = m.score;
    return record;
}

double RewardModel::multiplier(ActorRole role) const {
    auto it = role_multiplier.find(role);
    return it == role_multiplier.end() ? 1.0 : it->second;
}

void RewardModel::validate() const {
    bool any_positive = false;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorCode::Configuration, "reward weights must be >= 0");
        any_positive = any_positive || w > 0.0;
    }
    if (!any_positive) throw Error(ErrorCode::Configuration, "at least one reward weight must be positive");
    for (const auto& [role, m] : role_multiplier) {
        if (!(m >= 0.0) || !std::isfinite(m)) {
            throw Error(ErrorCode::Configuration, "role multiplier must be >= 0");
        }
    }
}

RewardSignal compute_reward(const FeedbackRecord& record, const RewardModel& model) {
    model.validate();
    const auto deltas = record.deltas();
    const double m = model.multiplier(record.role);
    double r = 0.0;
    for (std::size_t k = 0; k < deltas.size(); ++k) r += (m * model.weights[k]) * deltas[k];
    return {r, {record.response_id}};
}

void PpoConfig::validate() const {
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::Configuration, "PPO learning rate must be positive");
    if (!(clip > 0.0 && clip < 1.0)) throw Error(ErrorCode::Configuration, "PPO clip must lie in (0, 1)");
    if (batch_threshold == 0) throw Error(ErrorCode::Configuration, "PPO batch threshold must be positive");
    if (epochs < 1) throw Error(ErrorCode::Configuration, "PPO needs at least one epoch");
    if (!(plateau_tolerance >= 0.0)) throw Error(ErrorCode::Configuration, "plateau tolerance must be >= 0");
}

bool should_update(std::span<const double> rewards, const PpoConfig& cfg) {
    if (rewards.size() >= cfg.batch_threshold) return true;
    if (rewards.size() < std::max<std::size_t>(cfg.plateau_min_records, 2)) return false;
    const std::size_t half = rewards.size() / 2;
    const auto recent = rewards.subspan(rewards.size() - 2 * half);
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < half; ++i) {
        a += recent[i];
        b += recent[half + i];
    }
    a /= static_cast<double>(half);
    b /= static_cast<double>(half);
    const double scale = std::max(std::abs(a), std::abs(b));
    if (scale == 0.0) return true;
    return std::abs(b - a) / scale < cfg.plateau_tolerance;
}

nlohmann::json trajectory_to_json(const Trajectory& t) {
    return {{"query", t.query}, {"old_probs", t.old_probs}, {"action", t.action}, {"reward", t.reward}};
}

Trajectory trajectory_from_json(const nlohmann::json& j) {
    try {
        return {j.at("query").get<std::vector<double>>(), j.at("old_probs").get<std::vector<double>>(),
                j.at("action").get<ExpertId>(), j.at("reward").get<double>()};
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Parse, std::string("malformed trajectory: ") + e.what());
    }
}

namespace {

void check_batch(const GatingNetwork& policy, std::span<const Trajectory> batch, std::span<const double> adv) {
    if (batch.empty()) throw Error(ErrorCode::Validation, "PPO batch is empty");
    if (adv.size() != batch.size()) throw Error(ErrorCode::Validation, "advantage count != batch size");
    for (const auto& t : batch) {
        if (t.query.size() != policy.dim) throw Error(ErrorCode::Dimension, "trajectory query dim != gate dim");
        if (t.old_probs.size() != policy.experts) {
            throw Error(ErrorCode::Dimension, "trajectory stores the wrong number of old-policy probabilities");
        }
        if (t.action < 1 || static_cast<std::size_t>(t.action) > policy.experts) {
            throw Error(ErrorCode::Validation, "trajectory action outside the expert range");
        }
        if (!(t.old_probs[static_cast<std::size_t>(t.action - 1)] > 0.0)) {
            throw Error(ErrorCode::Validation, "old-policy probability of the taken action must be positive");
        }
    }
}

std::vector<double> policy_probs(const GatingNetwork& policy, const Trajectory& t) {
    return gate(Vector(t.query), policy).probs;
}

}  // namespace

double clipped_surrogate(const GatingNetwork& policy, std::span<const Trajectory> batch,
                         std::span<const double> advantages, double clip) {
    check_batch(policy, batch, advantages);
    double total = 0.0;
    for (std::size_t n = 0; n < batch.size(); ++n) {
        const auto& t = batch[n];
        const std::size_t a = static_cast<std::size_t>(t.action - 1);
        const double ratio = policy_probs(policy, t)[a] / t.old_probs[a];
        const double adv = advantages[n];
        total += std::min(ratio * adv, std::clamp(ratio, 1.0 - clip, 1.0 + clip) * adv);
    }
    return total / static_cast<double>(batch.size());
}

PolicyGradient surrogate_gradient(const GatingNetwork& policy, std::span<const Trajectory> batch,
                                  std::span<const double> advantages, double clip) {
    check_batch(policy, batch, advantages);
    PolicyGradient grad{std::vector<double>(policy.weights.size(), 0.0), std::vector<double>(policy.experts, 0.0)};
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (std::size_t n = 0; n < batch.size(); ++n) {
        const auto& t = batch[n];
        const double adv = advantages[n];
        if (adv == 0.0) continue;
        const std::size_t a = static_cast<std::size_t>(t.action - 1);
        const auto pi = policy_probs(policy, t);
        const double ratio = pi[a] / t.old_probs[a];
        const double unclipped = ratio * adv;
        const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip) * adv;
        if (clipped < unclipped) continue;  // flat branch
        const double coeff = scale * adv * ratio;
        for (std::size_t j = 0; j < policy.experts; ++j) {
            const double dz = coeff * ((j == a ? 1.0 : 0.0) - pi[j]);
            if (dz == 0.0) continue;
            grad.bias[j] += dz;
            for (std::size_t k = 0; k < policy.dim; ++k) grad.weights[j * policy.dim + k] += dz * t.query[k];
        }
    }
    return grad;
}

PpoResult ppo_update(const GatingNetwork& policy, std::span<const Trajectory> batch, const PpoConfig& cfg,
                     std::optional<double> baseline) {
    cfg.validate();
    policy.validate();
    if (batch.empty()) throw Error(ErrorCode::Validation, "PPO batch is empty");

    double mean = 0.0;
    for (const auto& t : batch) mean += t.reward;
    mean /= static_cast<double>(batch.size());
    const double b = baseline.value_or(mean);
    std::vector<double> adv;
    adv.reserve(batch.size());
    for (const auto& t : batch) adv.push_back(t.reward - b);

    PpoResult result;
    result.policy = policy;
    result.baseline = mean;
    GatingNetwork next = policy;
    bool moved = false;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        result.surrogate.push_back(clipped_surrogate(next, batch, adv, cfg.clip));
        PolicyGradient g = surrogate_gradient(next, batch, adv, cfg.clip);
        bool finite = std::all_of(g.weights.begin(), g.weights.end(), [](double x) { return std::isfinite(x); }) &&
                      std::all_of(g.bias.begin(), g.bias.end(), [](double x) { return std::isfinite(x); });
        if (!finite) {
            result.policy = policy;
            result.baseline = baseline.value_or(mean);
            result.applied = false;
            result.alert = "non-finite PPO gradient at epoch " + std::to_string(epoch) + "; update aborted";
            return result;
        }
        for (std::size_t i = 0; i < g.weights.size(); ++i) {
            if (g.weights[i] != 0.0) next.weights[i] += cfg.learning_rate * g.weights[i], moved = true;
        }
        for (std::size_t i = 0; i < g.bias.size(); ++i) {
            if (g.bias[i] != 0.0) next.bias[i] += cfg.learning_rate * g.bias[i], moved = true;
        }
    }
    if (moved) next.version = policy.version + 1;
    result.policy = std::move(next);
    result.applied = true;
    return result;
}

void FeedbackBuffer::push(Trajectory t) {
    std::lock_guard lock(mu_);
    items_.push_back(std::move(t));
}

std::size_t FeedbackBuffer::size() const {
    std::lock_guard lock(mu_);
    return items_.size();
}

std::vector<double> FeedbackBuffer::rewards() const {
    std::lock_guard lock(mu_);
    std::vector<double> out;
    out.reserve(items_.size());
    for (const auto& t : items_) out.push_back(t.reward);
    return out;
}

std::vector<Trajectory> FeedbackBuffer::drain() {
    std::lock_guard lock(mu_);
    std::vector<Trajectory> out;
    out.swap(items_);
    return out;
}

std::vector<Trajectory> FeedbackBuffer::contents() const {
    std::lock_guard lock(mu_);
    return items_;
}

}  // namespace lexroute
