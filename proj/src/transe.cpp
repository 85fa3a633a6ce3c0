#include "lexroute/transe.hpp"

#include <algorithm>
#include <cmath>

#include "lexroute/error.hpp"
#include "random_util.hpp"

namespace lexroute {

void TransEConfig::validate() const {
    if (dim == 0) throw Error(ErrorCode::Validation, "TransE dim must be positive");
    if (!(margin > 0.0)) throw Error(ErrorCode::Validation, "TransE margin must be positive");
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::Validation, "TransE learning rate must be positive");
    if (epochs < 0) throw Error(ErrorCode::Validation, "TransE epochs must be non-negative");
    if (negatives_per_positive < 1) throw Error(ErrorCode::Validation, "need at least one negative per positive");
}

KGEmbeddings::KGEmbeddings(std::size_t dim, std::vector<std::string> entity_ids,
                           std::vector<std::vector<double>> entity_vectors, std::vector<std::string> relation_ids,
                           std::vector<std::vector<double>> relation_vectors, int trained_epoch)
    : dim_(dim), trained_epoch_(trained_epoch), entity_ids_(std::move(entity_ids)),
      relation_ids_(std::move(relation_ids)) {
    if (entity_ids_.size() != entity_vectors.size() || relation_ids_.size() != relation_vectors.size()) {
        throw Error(ErrorCode::Validation, "embedding id/vector count mismatch");
    }
    for (auto& v : entity_vectors) {
        if (v.size() != dim_) throw Error(ErrorCode::Dimension, "entity vector has wrong dim");
        entity_vectors_.emplace_back(std::move(v));
    }
    for (auto& v : relation_vectors) {
        if (v.size() != dim_) throw Error(ErrorCode::Dimension, "relation vector has wrong dim");
        relation_vectors_.emplace_back(std::move(v));
    }
    for (std::size_t i = 0; i < entity_ids_.size(); ++i) entity_pos_.emplace(entity_ids_[i], i);
    for (std::size_t i = 0; i < relation_ids_.size(); ++i) relation_pos_.emplace(relation_ids_[i], i);
}

bool KGEmbeddings::has_entity(std::string_view id) const {
    return entity_pos_.count(std::string(id)) > 0;
}

bool KGEmbeddings::has_relation(std::string_view id) const {
    return relation_pos_.count(std::string(id)) > 0;
}

const Vector& KGEmbeddings::entity(std::string_view id) const {
    auto it = entity_pos_.find(std::string(id));
    if (it == entity_pos_.end()) throw Error(ErrorCode::Lookup, "no embedding for entity '" + std::string(id) + "'");
    return entity_vectors_[it->second];
}

const Vector& KGEmbeddings::relation(std::string_view id) const {
    auto it = relation_pos_.find(std::string(id));
    if (it == relation_pos_.end()) {
        throw Error(ErrorCode::Lookup, "no embedding for relation '" + std::string(id) + "'");
    }
    return relation_vectors_[it->second];
}

namespace {

using detail::uniform01;
using detail::uniform_index;

void normalize_in_place(std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    s = std::sqrt(s);
    if (s == 0.0) return;
    for (double& x : v) x /= s;
}

}  // namespace

TransETrainer::TransETrainer(const KnowledgeGraph& graph, TransEConfig config)
    : graph_(graph), cfg_(config), rng_(config.seed) {
    cfg_.validate();
    if (graph_.triple_count() == 0) throw Error(ErrorCode::Validation, "cannot train TransE on an empty graph");
    for (const auto& t : graph_.indexed_triples()) {
        if (t.head >= graph_.entity_count() || t.tail >= graph_.entity_count() ||
            t.relation >= graph_.relation_count()) {
            throw Error(ErrorCode::Lookup, "triple references an unregistered id");
        }
    }
    const double bound = 6.0 / std::sqrt(static_cast<double>(cfg_.dim));
    auto init = [&](std::size_t n) {
        std::vector<std::vector<double>> m(n, std::vector<double>(cfg_.dim));
        for (auto& row : m) {
            for (double& x : row) x = -bound + 2.0 * bound * uniform01(rng_);
            normalize_in_place(row);
        }
        return m;
    };
    rel_ = init(graph_.relation_count());
    ent_ = init(graph_.entity_count());
    order_.resize(graph_.triple_count());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    std::mt19937_64 probe_rng(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
    for (const auto& t : graph_.indexed_triples()) {
        for (int k = 0; k < kProbeNegatives; ++k) probe_.emplace_back(t, corrupt(t, probe_rng));
    }
}

double TransETrainer::probe_loss() const {
    double total = 0.0;
    for (const auto& [pos, neg] : probe_) {
        total += std::max(0.0, cfg_.margin + distance(pos.head, pos.relation, pos.tail) -
                                   distance(neg.head, neg.relation, neg.tail));
    }
    return total / static_cast<double>(probe_.size());
}

double TransETrainer::distance(std::uint32_t h, std::uint32_t r, std::uint32_t t) const {
    double s = 0.0;
    for (std::size_t i = 0; i < cfg_.dim; ++i) {
        double d = ent_[h][i] + rel_[r][i] - ent_[t][i];
        s += d * d;
    }
    return std::sqrt(s);
}

TripleIndex TransETrainer::corrupt(const TripleIndex& t, std::mt19937_64& rng) const {
    const std::size_t n = graph_.entity_count();
    bool replace_head = uniform01(rng) < 0.5;
    TripleIndex neg = t;
    if (n < 2) return neg;
    for (int attempt = 0; attempt < 10; ++attempt) {
        std::uint32_t e = uniform_index(rng, n - 1);
        std::uint32_t original = replace_head ? t.head : t.tail;
        if (e >= original) ++e;  // uniform over entities other than the original
        neg = t;
        (replace_head ? neg.head : neg.tail) = e;
        if (!graph_.contains(neg)) break;
    }
    return neg;
}

void TransETrainer::sgd_pair(const TripleIndex& pos, const TripleIndex& neg) {
    const double dp = distance(pos.head, pos.relation, pos.tail);
    const double dn = distance(neg.head, neg.relation, neg.tail);
    const double lr = cfg_.learning_rate;
    std::vector<double> gp(cfg_.dim, 0.0), gn(cfg_.dim, 0.0);
    for (std::size_t i = 0; i < cfg_.dim; ++i) {
        if (dp > 0.0) gp[i] = (ent_[pos.head][i] + rel_[pos.relation][i] - ent_[pos.tail][i]) / dp;
        if (dn > 0.0) gn[i] = (ent_[neg.head][i] + rel_[neg.relation][i] - ent_[neg.tail][i]) / dn;
    }
    for (std::size_t i = 0; i < cfg_.dim; ++i) {
        ent_[pos.head][i] -= lr * gp[i];
        ent_[pos.tail][i] += lr * gp[i];
        rel_[pos.relation][i] -= lr * gp[i];
        ent_[neg.head][i] += lr * gn[i];
        ent_[neg.tail][i] -= lr * gn[i];
        rel_[neg.relation][i] += lr * gn[i];
    }
    for (std::size_t e : {pos.head, pos.tail, neg.head, neg.tail}) normalize_in_place(ent_[e]);
}

double TransETrainer::run_epoch() {
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[uniform_index(rng_, i)]);
    const auto& triples = graph_.indexed_triples();
    for (std::size_t idx : order_) {
        const TripleIndex& pos = triples[idx];
        for (int k = 0; k < cfg_.negatives_per_positive; ++k) {
            TripleIndex neg = corrupt(pos, rng_);
            double loss = cfg_.margin + distance(pos.head, pos.relation, pos.tail) -
                          distance(neg.head, neg.relation, neg.tail);
            if (loss > 0.0) sgd_pair(pos, neg);
        }
    }
    for (auto& e : ent_) normalize_in_place(e);
    ++epoch_;
    double mean = probe_loss();
    losses_.push_back(mean);
    return mean;
}

KGEmbeddings TransETrainer::embeddings() const {
    return KGEmbeddings(cfg_.dim, graph_.entities(), ent_, graph_.relations(), rel_, epoch_);
}

KGEmbeddings train_transe(const KnowledgeGraph& graph, const TransEConfig& cfg, std::vector<double>* loss_history) {
    TransETrainer trainer(graph, cfg);
    for (int e = 0; e < cfg.epochs; ++e) trainer.run_epoch();
    if (loss_history) *loss_history = trainer.loss_history();
    return trainer.embeddings();
}

double transe_score(const Triple& triple, const KGEmbeddings& emb) {
    const Vector& h = emb.entity(triple.head);
    const Vector& r = emb.relation(triple.relation);
    const Vector& t = emb.entity(triple.tail);
    double s = 0.0;
    for (std::size_t i = 0; i < emb.dim(); ++i) {
        double d = h[i] + r[i] - t[i];
        s += d * d;
    }
    return -std::sqrt(s);
}

namespace {

double directed_mean_max(const std::vector<std::string>& from, const std::vector<std::string>& to,
                         const KGEmbeddings& emb) {
    double sum = 0.0;
    for (const auto& x : from) {
        double best = 0.0;
        for (const auto& y : to) {
            double s = (x == y) ? 1.0 : std::max(0.0, cosine(emb.entity(x), emb.entity(y)));
            best = std::max(best, s);
        }
        sum += best;
    }
    return sum / static_cast<double>(from.size());
}

}  // namespace

double kg_similarity(const EntityLinkSet& a, const EntityLinkSet& b, const KGEmbeddings& emb) {
    auto ea = a.entities();
    auto eb = b.entities();
    for (const auto& id : ea) (void)emb.entity(id);
    for (const auto& id : eb) (void)emb.entity(id);
    if (ea.empty() || eb.empty()) return 0.0;
    double s = 0.5 * (directed_mean_max(ea, eb, emb) + directed_mean_max(eb, ea, emb));
    return std::clamp(s, 0.0, 1.0);
}

}  // namespace lexroute
