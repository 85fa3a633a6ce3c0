#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lexroute/kg.hpp"
#include "lexroute/vector.hpp"

namespace lexroute {

struct TransEConfig {
    std::size_t dim = 64;
    double margin = 1.0;
    double learning_rate = 0.01;
    int epochs = 100;
    int negatives_per_positive = 1;
    std::uint64_t seed = 42;

    void validate() const;
};

/// Trained entity and relation vectors keyed by id.
class KGEmbeddings {
public:
    KGEmbeddings() = default;
    KGEmbeddings(std::size_t dim, std::vector<std::string> entity_ids, std::vector<std::vector<double>> entity_vectors,
                 std::vector<std::string> relation_ids, std::vector<std::vector<double>> relation_vectors,
                 int trained_epoch);

    std::size_t dim() const { return dim_; }
    int trained_epoch() const { return trained_epoch_; }
    bool empty() const { return entity_ids_.empty(); }

    bool has_entity(std::string_view id) const;
    bool has_relation(std::string_view id) const;
    /// Throws Lookup for unknown ids.
    const Vector& entity(std::string_view id) const;
    const Vector& relation(std::string_view id) const;

    const std::vector<std::string>& entity_ids() const { return entity_ids_; }
    const std::vector<std::string>& relation_ids() const { return relation_ids_; }
    const std::vector<Vector>& entity_vectors() const { return entity_vectors_; }
    const std::vector<Vector>& relation_vectors() const { return relation_vectors_; }

    friend bool operator==(const KGEmbeddings& a, const KGEmbeddings& b) {
        return a.dim_ == b.dim_ && a.trained_epoch_ == b.trained_epoch_ && a.entity_ids_ == b.entity_ids_ &&
               a.entity_vectors_ == b.entity_vectors_ && a.relation_ids_ == b.relation_ids_ &&
               a.relation_vectors_ == b.relation_vectors_;
    }

private:
    std::size_t dim_ = 0;
    int trained_epoch_ = 0;
    std::vector<std::string> entity_ids_;
    std::vector<Vector> entity_vectors_;
    std::vector<std::string> relation_ids_;
    std::vector<Vector> relation_vectors_;
    std::unordered_map<std::string, std::size_t> entity_pos_;
    std::unordered_map<std::string, std::size_t> relation_pos_;
};

/// SGD trainer for the margin ranking loss
///   sum max(0, margin + |h + r - t| - |h' + r - t'|)
/// with L2 distance. Each negative corrupts the head or the tail (equal
/// probability) with a uniformly drawn entity, rejecting corruptions that are
/// themselves known triples when an alternative exists. Entity vectors are
/// renormalised to unit length at initialisation and after every epoch;
/// relation vectors are normalised once at initialisation.
class TransETrainer {
public:
    static constexpr int kProbeNegatives = 16;

    TransETrainer(const KnowledgeGraph& graph, TransEConfig config);

    /// One pass over all triples in a seeded shuffled order, with fresh
    /// negatives for every update. Returns the mean hinge loss after the pass
    /// over a fixed corruption sample (kProbeNegatives per triple, drawn once
    /// at construction from its own stream), so epochs are comparable.
    double run_epoch();

    int epoch() const { return epoch_; }
    const std::vector<double>& loss_history() const { return losses_; }
    KGEmbeddings embeddings() const;

private:
    double distance(std::uint32_t h, std::uint32_t r, std::uint32_t t) const;
    void sgd_pair(const TripleIndex& pos, const TripleIndex& neg);
    TripleIndex corrupt(const TripleIndex& t, std::mt19937_64& rng) const;
    double probe_loss() const;

    const KnowledgeGraph& graph_;
    TransEConfig cfg_;
    std::mt19937_64 rng_;
    std::vector<std::vector<double>> ent_;
    std::vector<std::vector<double>> rel_;
    std::vector<std::size_t> order_;
    std::vector<std::pair<TripleIndex, TripleIndex>> probe_;
    std::vector<double> losses_;
    int epoch_ = 0;
};

/// Trains from a seeded initialisation for cfg.epochs epochs. Throws
/// Validation on an empty graph or invalid config.
KGEmbeddings train_transe(const KnowledgeGraph& graph, const TransEConfig& cfg,
                          std::vector<double>* loss_history = nullptr);

/// -|h + r - t|_2; 0 exactly when t == h + r.
double transe_score(const Triple& triple, const KGEmbeddings& emb);

/// Symmetric mean-max entity matching in [0, 1]: for each entity on one
/// side take its best (clamped non-negative) cosine to the other side,
/// average, and average the two directions. Identical ids match with 1.0.
/// Empty sides give 0.0. Relation vectors do not participate.
double kg_similarity(const EntityLinkSet& a, const EntityLinkSet& b, const KGEmbeddings& emb);

}  // namespace lexroute
