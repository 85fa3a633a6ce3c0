// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. Every expected value comes from an oracle written
// here, independent of the library code under test.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "lexroute/engine.hpp"
#include "lexroute/error.hpp"
#include "lexroute/eval.hpp"
#include "lexroute/generation.hpp"
#include "lexroute/moe.hpp"
#include "lexroute/retriever.hpp"
#include "lexroute/rlhf.hpp"
#include "lexroute/transe.hpp"
#include "lexroute/workflow.hpp"
#include "pipeline_support.hpp"

using namespace lexroute;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool ok = true;
    std::string detail;

    void fail(const std::string& why) {
        if (ok) detail = why;
        ok = false;
    }
};

using Check = std::function<Outcome()>;

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3g", x);
    return buf;
}

// ---------------------------------------------------------------------------

Outcome gating_normalization() {
    Outcome o;
    std::mt19937_64 rng(101);
    for (int trial = 0; trial < 10000; ++trial) {
        const std::size_t n = pick(rng, 1, 16), d = pick(rng, 1, 32);
        GatingNetwork net = GatingNetwork::zeros(n, d);
        const double scale = trial % 10 == 0 ? 200.0 : 5.0;  // some near-overflow logits
        for (double& w : net.weights) w = uniform(rng, -scale, scale);
        for (double& b : net.bias) b = uniform(rng, -scale, scale);
        std::vector<double> v(d);
        for (double& x : v) x = uniform(rng, -1.0, 1.0);
        auto g = gate(Vector(v), net);
        double sum = 0.0;
        for (double p : g.probs) {
            if (!(p > 0.0)) o.fail("non-positive gate at trial " + std::to_string(trial));
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9) o.fail("sum " + fmt(sum) + " at trial " + std::to_string(trial));
    }
    return o;
}

Outcome sparse_vs_dense() {
    Outcome o;
    std::mt19937_64 rng(202);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = pick(rng, 1, 8), d = pick(rng, 1, 16);
        std::vector<double> logits(n);
        for (double& z : logits) z = uniform(rng, -3.0, 3.0);
        GatingDistribution g = softmax(logits);
        std::vector<std::vector<double>> h(n, std::vector<double>(d));
        std::vector<ExpertOutput> outs;
        for (std::size_t i = 0; i < n; ++i) {
            for (double& x : h[i]) x = uniform(rng, -2.0, 2.0);
            ExpertOutput out;
            out.expert = static_cast<ExpertId>(i + 1);
            out.vector = Vector(h[i]);
            outs.push_back(out);
        }
        RoutingDecision dec = top_k(g, n, false);
        std::vector<ExpertOutput> active;
        for (ExpertId id : dec.active) active.push_back(outs[static_cast<std::size_t>(id - 1)]);
        AggregatedOutput agg = aggregate(g, active, false);

        std::vector<double> dense(d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) dense[j] += g.probs[i] * h[i][j];
        }
        for (std::size_t j = 0; j < d; ++j) {
            if (std::abs((*agg.combined)[j] - dense[j]) > 1e-9) o.fail("mismatch at trial " + std::to_string(trial));
        }
    }
    return o;
}

Outcome retrieval_exactness() {
    Outcome o;
    std::mt19937_64 rng(303);
    const std::size_t d = 48, topics = 10;
    std::normal_distribution<double> normal(0.0, 1.0);
    auto unit = [&](std::vector<double> v) {
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        for (double& x : v) x /= n;
        return v;
    };
    std::vector<std::vector<double>> centres;
    for (std::size_t t = 0; t < topics; ++t) {
        std::vector<double> c(d);
        for (double& x : c) x = normal(rng);
        centres.push_back(unit(c));
    }
    // Planted documents: topic centre plus noise of varying size, so the
    // cosines to a topic query spread across the threshold band.
    std::vector<std::pair<std::string, std::vector<double>>> docs;
    DocumentIndex index(d);
    for (std::size_t i = 0; i < 200; ++i) {
        const auto& c = centres[i % topics];
        const double noise = uniform(rng, 0.05, 0.6);
        std::vector<double> v(d);
        for (std::size_t j = 0; j < d; ++j) v[j] = c[j] + noise * normal(rng) / std::sqrt(static_cast<double>(d));
        char id[16];
        std::snprintf(id, sizeof id, "doc-%03zu", i);
        docs.push_back({id, v});
        index.add_record({id, "", "planted", {}, Vector(v), {}});
    }
    auto oracle_cos = [](const std::vector<double>& a, const std::vector<double>& b) {
        double ab = 0, aa = 0, bb = 0;
        for (std::size_t j = 0; j < a.size(); ++j) ab += a[j] * b[j], aa += a[j] * a[j], bb += b[j] * b[j];
        return ab / (std::sqrt(aa) * std::sqrt(bb));
    };
    const double thetas[] = {0.80, 0.85, 0.90};
    std::size_t total_hits = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto& c = centres[pick(rng, 0, topics - 1)];
        std::vector<double> q(d);
        for (std::size_t j = 0; j < d; ++j) q[j] = c[j] + 0.1 * normal(rng) / std::sqrt(static_cast<double>(d));
        RetrievalConfig cfg;
        cfg.theta = thetas[pick(rng, 0, 2)];
        cfg.fusion_mode = FusionMode::TextOnly;
        cfg.max_results = docs.size();

        std::vector<std::pair<double, std::string>> expected;
        for (const auto& [id, v] : docs) {
            double s = oracle_cos(q, v);
            if (s >= cfg.theta) expected.push_back({-s, id});
        }
        std::sort(expected.begin(), expected.end());
        auto got = index.retrieve(Vector(q), {}, cfg, nullptr);
        total_hits += expected.size();
        if (got.documents.size() != expected.size()) {
            o.fail("trial " + std::to_string(trial) + ": " + std::to_string(got.documents.size()) + " vs " +
                   std::to_string(expected.size()) + " documents");
            continue;
        }
        for (std::size_t i = 0; i < expected.size(); ++i) {
            if (got.documents[i].document->id != expected[i].second) o.fail("order differs at trial " + std::to_string(trial));
        }
        if (got.abstained != expected.empty()) o.fail("abstention flag wrong");
    }
    if (total_hits == 0) o.fail("planted corpus produced no hits");
    return o;
}

Outcome fusion_fidelity() {
    Outcome o;
    struct Row {
        FusionMode mode;
        double text, kg, alpha, beta, qn, dn, expected;
    };
    const auto A = FusionMode::Additive;
    const auto C = FusionMode::Convex;
    // Expected values worked by hand from (text*|q||d| + a*kg)/(|q||d| + a)
    // and b*text + (1 - b)*kg.
    const std::vector<Row> table{
        {A, 0.9, 1.0, 0.5, 0.5, 1, 1, 1.4 / 1.5},
        {A, 0.0, 0.0, 0.5, 0.5, 1, 1, 0.0},
        {A, 1.0, 1.0, 0.5, 0.5, 1, 1, 1.0},
        {A, 0.5, 0.0, 0.5, 0.5, 1, 1, 0.5 / 1.5},
        {A, 0.0, 1.0, 0.5, 0.5, 1, 1, 0.5 / 1.5},
        {A, -0.4, 0.2, 0.5, 0.5, 1, 1, (-0.4 + 0.1) / 1.5},
        {A, 0.5, 0.6, 0.5, 0.5, 2, 3, (3.0 + 0.3) / 6.5},
        {A, 0.8, 0.4, 0.5, 0.5, 0.5, 0.5, (0.2 + 0.2) / 0.75},
        {A, 0.7, 0.9, 0.5, 0.5, 1, 4, (2.8 + 0.45) / 4.5},
        {A, 0.25, 0.75, 0.5, 0.5, 1, 1, (0.25 + 0.375) / 1.5},
        {C, 0.8, 0.6, 0.5, 0.5, 1, 1, 0.7},
        {C, 0.8, 0.3, 0.5, 1.0, 1, 1, 0.8},
        {C, 0.8, 0.3, 0.5, 0.0, 1, 1, 0.3},
        {C, 0.0, 0.0, 0.5, 0.5, 1, 1, 0.0},
        {C, 1.0, 1.0, 0.5, 0.5, 1, 1, 1.0},
        {C, 0.9, 0.1, 0.5, 0.25, 1, 1, 0.225 + 0.075},
        {C, 0.4, 0.8, 0.5, 0.75, 1, 1, 0.3 + 0.2},
        {C, -0.2, 0.5, 0.5, 0.5, 1, 1, 0.15},
        {C, 0.6, 0.0, 0.5, 0.5, 7, 9, 0.3},
        {C, 0.35, 0.95, 2.0, 0.2, 1, 1, 0.07 + 0.76},
    };
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& r = table[i];
        RetrievalConfig cfg;
        cfg.fusion_mode = r.mode;
        cfg.alpha = r.alpha;
        cfg.beta = r.beta;
        double got = fuse_scores(r.text, r.kg, cfg, {r.qn, r.dn});
        if (std::abs(got - r.expected) > 1e-12) {
            o.fail("row " + std::to_string(i) + ": " + fmt(got) + " vs " + fmt(r.expected));
        }
    }
    return o;
}

Outcome transe_convergence() {
    Outcome o;
    std::mt19937_64 rng(505);
    KnowledgeGraph g;
    for (int i = 0; i < 50; ++i) g.register_entity("e" + std::to_string(i));
    const std::vector<std::string> rels{"cites", "applies_to", "overruled_by", "related_to"};
    // Planted geometry: hidden points and translations in 4 dimensions. Each
    // (head, relation) pair links to the entity nearest head + relation, so
    // 50 x 4 pairs give exactly 200 triples that a translation model can fit.
    const std::size_t hd = 4;
    std::vector<std::vector<double>> x(50, std::vector<double>(hd)), tr(rels.size(), std::vector<double>(hd));
    for (auto& p : x) for (double& v : p) v = uniform(rng, -1.0, 1.0);
    for (auto& p : tr) for (double& v : p) v = uniform(rng, -0.6, 0.6);
    for (std::size_t h = 0; h < x.size(); ++h) {
        for (std::size_t r = 0; r < rels.size(); ++r) {
            std::size_t best = h == 0 ? 1 : 0;
            double best_d = 1e300;
            for (std::size_t t = 0; t < x.size(); ++t) {
                if (t == h) continue;
                double d2 = 0.0;
                for (std::size_t j = 0; j < hd; ++j) d2 += (x[h][j] + tr[r][j] - x[t][j]) * (x[h][j] + tr[r][j] - x[t][j]);
                if (d2 < best_d) best_d = d2, best = t;
            }
            g.add({"e" + std::to_string(h), rels[r], "e" + std::to_string(best)});
        }
    }
    if (g.triple_count() != 200) o.fail("planted graph has " + std::to_string(g.triple_count()) + " triples");
    TransEConfig cfg;
    cfg.dim = 50;
    cfg.epochs = 200;
    cfg.learning_rate = 0.01;
    cfg.margin = 1.0;
    cfg.seed = 7;
    std::vector<double> loss;
    KGEmbeddings emb = train_transe(g, cfg, &loss);

    // Brute-force tail ranking: distance of h + r - t for every candidate.
    std::size_t hits = 0;
    for (const Triple& t : g.triples()) {
        const Vector& h = emb.entity(t.head);
        const Vector& r = emb.relation(t.relation);
        auto dist = [&](const Vector& c) {
            double s = 0.0;
            for (std::size_t j = 0; j < h.dim(); ++j) s += (h[j] + r[j] - c[j]) * (h[j] + r[j] - c[j]);
            return std::sqrt(s);
        };
        const double truth = dist(emb.entity(t.tail));
        std::size_t better = 0;
        for (const auto& id : emb.entity_ids()) {
            if (id != t.tail && dist(emb.entity(id)) < truth) ++better;
        }
        if (better < 10) ++hits;
    }
    const double hits10 = static_cast<double>(hits) / static_cast<double>(g.triple_count());
    if (hits10 < 0.8) o.fail("hits@10 " + fmt(hits10));
    for (std::size_t e = 1; e < loss.size(); ++e) {
        if (loss[e] > loss[e - 1] * 1.05) {
            o.fail("loss rose more than 5% at epoch " + std::to_string(e + 1) + ": " + fmt(loss[e - 1]) + " -> " +
                   fmt(loss[e]));
            break;
        }
    }
    o.detail = o.ok ? "hits@10 " + fmt(hits10) : o.detail;
    return o;
}

Outcome ppo_gradient() {
    Outcome o;
    std::mt19937_64 rng(606);
    const double clip = 0.2;
    int checked = 0;
    while (checked < 100) {
        const std::size_t n = pick(rng, 2, 5), d = pick(rng, 1, 4), m = pick(rng, 1, 6);
        GatingNetwork net = GatingNetwork::zeros(n, d);
        for (double& w : net.weights) w = uniform(rng, -1.0, 1.0);
        for (double& b : net.bias) b = uniform(rng, -1.0, 1.0);
        std::vector<Trajectory> batch;
        std::vector<double> adv;
        bool near_kink = false;
        for (std::size_t s = 0; s < m; ++s) {
            Trajectory t;
            t.query.resize(d);
            for (double& x : t.query) x = uniform(rng, -1.0, 1.0);
            std::vector<double> old(n);
            double tot = 0.0;
            for (double& p : old) p = uniform(rng, 0.05, 1.0), tot += p;
            for (double& p : old) p /= tot;
            t.old_probs = old;
            t.action = static_cast<ExpertId>(pick(rng, 1, n));
            batch.push_back(t);
            adv.push_back(uniform(rng, -2.0, 2.0));
            // Oracle ratio; instances within 1e-3 of a clip edge are redrawn
            // since the surrogate has a kink there.
            std::vector<double> z(n);
            double zmax = -1e300;
            for (std::size_t i = 0; i < n; ++i) {
                z[i] = net.bias[i];
                for (std::size_t j = 0; j < d; ++j) z[i] += net.weights[i * d + j] * t.query[j];
                zmax = std::max(zmax, z[i]);
            }
            double zs = 0.0;
            for (double zi : z) zs += std::exp(zi - zmax);
            const std::size_t a = static_cast<std::size_t>(t.action - 1);
            const double ratio = std::exp(z[a] - zmax) / zs / old[a];
            if (std::abs(ratio - (1 - clip)) < 1e-3 || std::abs(ratio - (1 + clip)) < 1e-3) near_kink = true;
        }
        if (near_kink) continue;
        ++checked;

        PolicyGradient g = surrogate_gradient(net, batch, adv, clip);
        const double h = 1e-6;
        std::vector<double> analytic, numeric;
        auto probe = [&](double& param, double grad) {
            const double saved = param;
            param = saved + h;
            const double up = clipped_surrogate(net, batch, adv, clip);
            param = saved - h;
            const double down = clipped_surrogate(net, batch, adv, clip);
            param = saved;
            analytic.push_back(grad);
            numeric.push_back((up - down) / (2 * h));
        };
        for (std::size_t i = 0; i < net.weights.size(); ++i) probe(net.weights[i], g.weights[i]);
        for (std::size_t i = 0; i < net.bias.size(); ++i) probe(net.bias[i], g.bias[i]);
        double diff = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
            scale = std::max(scale, std::abs(numeric[i]));
        }
        if (scale > 1e-8 && diff / scale > 1e-4) o.fail("relative error " + fmt(diff / scale));
        if (scale <= 1e-8 && diff > 1e-8) o.fail("nonzero analytic gradient where numeric is zero");
    }

    // Zero-advantage batches: every reward equals the baseline.
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = pick(rng, 2, 5), d = pick(rng, 1, 4);
        GatingNetwork net = GatingNetwork::random(n, d, 1000 + trial, 0.5);
        net.version = 3;
        std::vector<Trajectory> batch;
        const double r = uniform(rng, -1.0, 1.0);
        for (int s = 0; s < 8; ++s) {
            Trajectory t;
            t.query.resize(d);
            for (double& x : t.query) x = uniform(rng, -1.0, 1.0);
            t.old_probs.assign(n, 1.0 / static_cast<double>(n));
            t.action = static_cast<ExpertId>(pick(rng, 1, n));
            t.reward = r;
            batch.push_back(t);
        }
        PpoResult res = ppo_update(net, batch, PpoConfig{}, r);
        if (!(res.policy == net)) o.fail("zero-advantage batch changed the gate");
    }
    return o;
}

Outcome rlhf_convergence() {
    Outcome o;
    std::mt19937_64 rng(707);
    const std::size_t d = 8, experts = 4;
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<std::vector<double>> centres(4, std::vector<double>(d, 0.0));
    for (std::size_t c = 0; c < 4; ++c) centres[c][c] = 1.0;  // well separated clusters
    auto sample = [&](std::size_t c) {
        std::vector<double> v(d);
        for (std::size_t j = 0; j < d; ++j) v[j] = centres[c][j] + 0.15 * normal(rng);
        return v;
    };
    // Oracle: cluster c is best served by expert c + 1.
    auto reward = [](std::size_t cluster, ExpertId a) { return a == static_cast<ExpertId>(cluster + 1) ? 1.0 : 0.0; };

    GatingNetwork policy = GatingNetwork::random(experts, d, 11, 0.01);
    PpoConfig cfg;
    cfg.learning_rate = 0.5;
    cfg.epochs = 4;
    std::optional<double> baseline;
    auto accuracy = [&] {
        std::mt19937_64 held(9090);
        std::size_t right = 0;
        const std::size_t total = 400;
        for (std::size_t i = 0; i < total; ++i) {
            const std::size_t c = i % 4;
            std::vector<double> v(d);
            for (std::size_t j = 0; j < d; ++j) v[j] = centres[c][j] + 0.15 * std::normal_distribution<double>()(held);
            auto g = gate(Vector(v), policy);
            auto best = std::max_element(g.probs.begin(), g.probs.end()) - g.probs.begin();
            if (static_cast<std::size_t>(best) == c) ++right;
        }
        return static_cast<double>(right) / total;
    };

    int updates = 0;
    double acc = accuracy();
    while (acc < 0.9 && updates < 50) {
        std::vector<Trajectory> batch;
        for (int i = 0; i < 128; ++i) {
            const std::size_t c = pick(rng, 0, 3);
            auto v = sample(c);
            auto g = gate(Vector(v), policy);
            std::discrete_distribution<int> draw(g.probs.begin(), g.probs.end());
            const ExpertId a = draw(rng) + 1;
            batch.push_back({v, g.probs, a, reward(c, a)});
        }
        PpoResult r = ppo_update(policy, batch, cfg, baseline);
        if (!r.applied) {
            o.fail("update refused: " + r.alert);
            return o;
        }
        policy = r.policy;
        baseline = r.baseline;
        ++updates;
        acc = accuracy();
    }
    if (acc < 0.9) o.fail("held-out accuracy " + fmt(acc) + " after " + std::to_string(updates) + " updates");
    else o.detail = "accuracy " + fmt(acc) + " after " + std::to_string(updates) + " updates";
    return o;
}

Outcome reward_model() {
    Outcome o;
    struct Row {
        ActorRole role;
        std::array<double, 4> w;
        double mult;
        std::array<double, 4> delta;
        const char* label;  // qualitative label applied first, or null
        double expected;
    };
    using R = ActorRole;
    const std::array<double, 4> eq{0.25, 0.25, 0.25, 0.25};
    const std::vector<Row> table{
        {R::Advisor, eq, 1.0, {1, 1, 1, 1}, nullptr, 1.0},
        {R::Advisor, eq, 1.0, {0, 0, 0, 0}, nullptr, 0.0},
        {R::Advisor, eq, 1.0, {0.5, 0.5, 0.5, 0.5}, nullptr, 0.5},
        {R::Paralegal, eq, 1.0, {1, 0, 0, 0}, nullptr, 0.25},
        {R::Advisor, {0.4, 0.3, 0.2, 0.1}, 1.0, {1, 1, 1, 1}, nullptr, 1.0},
        {R::Advisor, {0.4, 0.3, 0.2, 0.1}, 1.0, {1, 0, 0, 0}, nullptr, 0.4},
        {R::Advisor, {0.4, 0.3, 0.2, 0.1}, 1.0, {0, 0, 0, 1}, nullptr, 0.1},
        {R::Advisor, {0.4, 0.3, 0.2, 0.1}, 2.0, {1, 0.5, 0, 1}, nullptr, 2.0 * (0.4 + 0.15 + 0.1)},
        {R::Paralegal, {0.4, 0.3, 0.2, 0.1}, 0.5, {0.2, 0.4, 0.6, 0.8}, nullptr, 0.5 * (0.08 + 0.12 + 0.12 + 0.08)},
        {R::Advisor, {1, 0, 0, 0}, 1.0, {0.7, 0.1, 0.1, 0.1}, nullptr, 0.7},
        {R::Advisor, {0, 0, 0, 2}, 1.5, {0, 0, 0, 0.3}, nullptr, 0.9},
        {R::Paralegal, {0.5, 0.5, 0, 0}, 1.0, {0.6, 0.2, 1, 1}, nullptr, 0.4},
        // Qualitative anchors: the label overrides its component.
        {R::Advisor, {1, 0, 0, 0}, 1.0, {0, 0, 0, 0}, "high relevance", 1.0},
        {R::Advisor, {0, 1, 0, 0}, 1.0, {0, 0, 0, 0}, "low accuracy", 0.5},
        {R::Advisor, eq, 1.0, {0, 0, 0, 0}, "High Relevance", 0.25},
        {R::Paralegal, eq, 1.0, {0, 0, 0, 0}, "low compliance", 0.125},
        {R::Advisor, {0, 0, 0, 1}, 2.0, {0, 0, 0, 0}, "medium satisfaction", 1.5},
        {R::Advisor, {0, 0, 1, 0}, 1.0, {0, 0, 0.9, 0}, "unusable compliance", 0.0},
        {R::Paralegal, {0.1, 0.2, 0.3, 0.4}, 1.0, {1, 1, 1, 1}, "very low satisfaction", 0.1 + 0.2 + 0.3 + 0.1},
        {R::Advisor, {0.25, 0.25, 0.25, 0.25}, 0.0, {1, 1, 1, 1}, nullptr, 0.0},
    };
    const QualitativeScale scale = QualitativeScale::defaults();
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& row = table[i];
        RewardModel model;
        model.weights = row.w;
        model.role_multiplier[row.role] = row.mult;
        FeedbackRecord rec;
        rec.response_id = rec.case_id = "c";
        rec.role = row.role;
        for (std::size_t k = 0; k < 4; ++k) rec.scores[k] = row.delta[k];
        if (row.label) {
            rec.qualitative_label = row.label;
            rec = apply_qualitative(rec, scale);
        }
        const double got = compute_reward(rec, model).reward;
        if (std::abs(got - row.expected) > 1e-12) {
            o.fail("row " + std::to_string(i) + ": " + fmt(got) + " vs " + fmt(row.expected));
        }
    }

    std::mt19937_64 rng(808);
    for (int trial = 0; trial < 1000; ++trial) {
        RewardModel model;
        for (double& w : model.weights) w = uniform(rng, 0.0, 1.0);
        model.role_multiplier[ActorRole::Advisor] = uniform(rng, 0.0, 3.0);
        FeedbackRecord a, b, sum;
        a.response_id = b.response_id = sum.response_id = "c";
        a.role = b.role = sum.role = ActorRole::Advisor;
        for (std::size_t k = 0; k < 4; ++k) {
            double x = uniform(rng, 0.0, 0.5), y = uniform(rng, 0.0, 0.5);
            a.scores[k] = x;
            b.scores[k] = y;
            sum.scores[k] = x + y;
        }
        const double lhs = compute_reward(sum, model).reward;
        const double rhs = compute_reward(a, model).reward + compute_reward(b, model).reward;
        if (std::abs(lhs - rhs) > 1e-12) o.fail("additivity broken at trial " + std::to_string(trial));
    }
    return o;
}

// Independent metric oracles -------------------------------------------------

std::vector<std::string> oracle_tokens(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string w; in >> w;) {
        for (char& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        out.push_back(w);
    }
    return out;
}

double oracle_rouge(const std::string& p, const std::string& r) {
    auto a = oracle_tokens(p), b = oracle_tokens(r);
    if (a.empty() && b.empty()) return 1.0;
    if (a.empty() || b.empty()) return 0.0;
    std::vector<std::vector<int>> dp(a.size() + 1, std::vector<int>(b.size() + 1, 0));
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            dp[i][j] = a[i - 1] == b[j - 1] ? dp[i - 1][j - 1] + 1 : std::max(dp[i - 1][j], dp[i][j - 1]);
        }
    }
    const double lcs = dp[a.size()][b.size()];
    if (lcs == 0) return 0.0;
    const double prec = lcs / a.size(), rec = lcs / b.size();
    return 2 * prec * rec / (prec + rec);
}

double oracle_bleu(const std::string& p, const std::string& r) {
    auto c = oracle_tokens(p), ref = oracle_tokens(r);
    if (c.empty()) return 0.0;
    const std::size_t orders = std::min<std::size_t>(4, c.size());
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= orders; ++n) {
        std::map<std::vector<std::string>, int> cand, refc;
        for (std::size_t i = 0; i + n <= c.size(); ++i) cand[{c.begin() + i, c.begin() + i + n}]++;
        for (std::size_t i = 0; i + n <= ref.size(); ++i) refc[{ref.begin() + i, ref.begin() + i + n}]++;
        int matched = 0, total = 0;
        for (const auto& [gram, count] : cand) {
            total += count;
            auto it = refc.find(gram);
            matched += std::min(count, it == refc.end() ? 0 : it->second);
        }
        double prec;
        if (matched == 0) {
            if (n == 1) return 0.0;
            prec = 1.0 / (total + 1.0);
        } else {
            prec = static_cast<double>(matched) / total;
        }
        log_sum += std::log(prec);
    }
    const double bp = c.size() > ref.size() ? 1.0 : std::exp(1.0 - static_cast<double>(ref.size()) / c.size());
    return bp * std::exp(log_sum / static_cast<double>(orders));
}

Outcome metrics() {
    Outcome o;
    std::mt19937_64 rng(909);
    const std::vector<std::string> vocab{"the", "court", "held", "that", "statute", "x", "applies", "to", "contract",
                                         "The", "breach", "of", "duty"};
    auto sentence = [&](std::size_t max_len) {
        std::string s;
        const std::size_t n = pick(rng, 0, max_len);
        for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + vocab[pick(rng, 0, vocab.size() - 1)];
        return s;
    };
    for (int i = 0; i < 1000; ++i) {
        auto a = sentence(15), b = sentence(15);
        if (std::abs(rouge_l(a, b) - oracle_rouge(a, b)) > 1e-9) o.fail("rouge_l mismatch on '" + a + "' / '" + b + "'");
    }
    for (int i = 0; i < 100; ++i) {
        auto a = sentence(20), b = sentence(20);
        if (i % 5 == 0) b = a;  // exercise perfect overlap
        if (std::abs(bleu(a, b) - oracle_bleu(a, b)) > 1e-9) o.fail("bleu mismatch on '" + a + "' / '" + b + "'");
    }
    for (int i = 0; i < 100; ++i) {
        const std::size_t n = pick(rng, 1, 50);
        auto flags = std::make_unique<bool[]>(n);
        std::size_t count = 0;
        for (std::size_t j = 0; j < n; ++j) {
            flags[j] = rng() % 3 == 0;
            count += flags[j] ? 1 : 0;
        }
        const double expected = static_cast<double>(count) / static_cast<double>(n);
        if (abstention_rate(std::span<const bool>(flags.get(), n)) != expected) o.fail("abstention rate mismatch");
    }
    return o;
}

Outcome workflow_checks() {
    Outcome o;
    using S = CaseState;
    using Ev = CaseEventKind;
    const std::set<std::tuple<S, Ev, S>> declared{
        {S::Intake, Ev::Formulate, S::Formulated},       {S::Revise, Ev::Formulate, S::Formulated},
        {S::Formulated, Ev::Research, S::Researched},    {S::Researched, Ev::Abstain, S::Abstained},
        {S::Researched, Ev::Route, S::Routed},           {S::Routed, Ev::Aggregate, S::Aggregated},
        {S::Routed, Ev::RoutingFailed, S::Revise},       {S::Aggregated, Ev::SubmitForReview, S::AdvisorReview},
        {S::Aggregated, Ev::Approve, S::ParalegalFinalize}, {S::AdvisorReview, Ev::Approve, S::ParalegalFinalize},
        {S::Aggregated, Ev::RequestRevision, S::Revise}, {S::AdvisorReview, Ev::RequestRevision, S::Revise},
        {S::Aggregated, Ev::Reject, S::Rejected},        {S::AdvisorReview, Ev::Reject, S::Rejected},
        {S::ParalegalFinalize, Ev::Finalize, S::Released},
    };
    std::size_t admitted = 0;
    for (S s : kAllCaseStates) {
        for (Ev e : kAllCaseEvents) {
            Case c("m");
            for (Ev k : testing::path_to(s)) c.apply(testing::make_event(c, k));
            std::optional<S> expected;
            for (const auto& [from, ev, to] : declared) {
                if (from == s && ev == e) expected = to;
            }
            try {
                c.apply(testing::make_event(c, e));
                ++admitted;
                if (!expected || c.state() != *expected) o.fail("admitted undeclared transition");
            } catch (const lexroute::Error& err) {
                if (expected || err.code() != ErrorCode::IllegalTransition || c.state() != s) {
                    o.fail("refused declared transition or wrong error");
                }
            }
        }
    }
    if (admitted != declared.size()) o.fail("admitted " + std::to_string(admitted) + " transitions");

    // Identity Advisor and Paralegal: released text equals y_aggregated.
    testing::Pipeline p(LEXROUTE_FIXTURES);
    Workflow wf;
    auto id = wf.open_case();
    wf.consultant_formulate(id, testing::kPrecedentQuery, testing::kConsultant);
    wf.researcher_retrieve(id, p.context(), testing::kResearcher);
    RouteReport rep = wf.route_and_answer(id, p.context());
    wf.submit_for_review(id);
    wf.advisor_review(id, Verdict::Approve, "", testing::kAdvisor);
    FinalDocument doc = wf.paralegal_finalize(id, "default", testing::kParalegal);
    if (!rep.ok || doc.text != rep.y_aggregated) o.fail("identity roles changed the text");

    std::mt19937_64 rng(1010);
    for (int trial = 0; trial < 100; ++trial) {
        Case c("r" + std::to_string(trial));
        const std::size_t steps = pick(rng, 1, 30);
        for (std::size_t i = 0; i < steps; ++i) {
            Ev e = kAllCaseEvents[pick(rng, 0, kAllCaseEvents.size() - 1)];
            try {
                c.apply(testing::make_event(c, e));
            } catch (const lexroute::Error&) {
            }
        }
        std::vector<CaseEvent> persisted;
        for (const auto& ev : c.history()) persisted.push_back(case_event_from_json(case_event_to_json(ev)));
        Case back = Case::replay(c.id(), persisted);
        if (back.state() != c.state() || back.to_json() != c.to_json()) o.fail("replay differs at trial " + std::to_string(trial));
    }
    return o;
}

nlohmann::json fixture_config() {
    std::ifstream in(std::string(LEXROUTE_FIXTURES) + "/config.json");
    return nlohmann::json::parse(in);
}

Outcome grounding() {
    Outcome o;
    Engine engine(parse_api_config(fixture_config(), LEXROUTE_FIXTURES));
    engine.bootstrap();
    std::vector<std::string> questions{testing::kPrecedentQuery};
    for (const auto& r : load_eval_jsonl(std::string(LEXROUTE_FIXTURES) + "/qa.jsonl")) questions.push_back(r.input);

    auto backend = std::make_shared<ExtractiveMockBackend>(engine.embedder_ptr(), 3);
    std::size_t sentences = 0;
    for (const auto& q : questions) {
        // Generation level: each sentence carries a citation to a document
        // that contains it verbatim.
        RetrievalResult r = engine.retrieve(q);
        if (r.abstained) {
            o.fail("fixture question abstained: " + q);
            continue;
        }
        GenerationRequest req;
        req.query = q;
        req.documents = r.documents;
        ResponseDraft draft = generate(req, *backend);
        std::vector<bool> cited(draft.sentences.size(), false);
        for (const auto& c : draft.citations) {
            auto doc = engine.index()->find(c.document_id);
            if (!doc || doc->text.find(draft.sentences.at(c.sentence)) == std::string::npos) {
                o.fail("sentence not found in its cited document");
            }
            cited[c.sentence] = true;
        }
        for (bool b : cited) {
            if (!b) o.fail("uncited sentence");
        }

        // Pipeline level: every sentence of the answer sits inside one of
        // the case's cited documents.
        QueryResult res = engine.query(q);
        for (auto part : split_sentences(res.answer)) {
            ++sentences;
            bool found = false;
            for (const auto& id : res.citations) {
                auto doc = engine.index()->find(id);
                found = found || (doc && doc->text.find(part) != std::string::npos);
            }
            if (!found) o.fail("answer sentence not grounded: " + std::string(part));
        }
    }
    if (o.ok) o.detail = std::to_string(sentences) + " answer sentences grounded";
    return o;
}

Outcome persistence() {
    Outcome o;
    std::mt19937_64 rng(1212);
    const fs::path dir = fs::temp_directory_path() / ("lexroute-accept-" + std::to_string(rng()));
    fs::create_directories(dir);
    const auto docs = load_documents_jsonl(std::string(LEXROUTE_FIXTURES) + "/docs.jsonl");
    const std::vector<std::string> probes{testing::kPrecedentQuery, "breach of contract damages", "statute of limitations",
                                          "arbitration clause enforcement", "negligence duty of care"};
    for (int trial = 0; trial < 20; ++trial) {
        auto j = fixture_config();
        j["retrieval"]["theta"] = uniform(rng, 0.05, 0.4);
        j["retrieval"]["fusion_mode"] = std::vector<std::string>{"convex", "additive", "text_only"}[trial % 3];
        j["data"].erase("documents");
        j["transe"]["epochs"] = static_cast<int>(pick(rng, 5, 40));
        Engine a(parse_api_config(j, LEXROUTE_FIXTURES));
        a.bootstrap();
        std::vector<DocumentFields> subset;
        for (const auto& d : docs) {
            if (rng() % 4 != 0) subset.push_back(d);
        }
        if (subset.empty()) subset.push_back(docs.front());
        a.ingest_documents(subset);
        a.set_gating(GatingNetwork::random(4, a.embedder().dim(), rng(), uniform(rng, 0.01, 2.0)));
        for (int q = 0; q < 2; ++q) a.query(probes[pick(rng, 0, probes.size() - 1)]);

        const std::string path = (dir / ("s" + std::to_string(trial) + ".snap")).string();
        a.save_snapshot(path);
        auto empty_cfg = j;
        empty_cfg.erase("data");
        Engine b(parse_api_config(empty_cfg, LEXROUTE_FIXTURES));
        b.load_snapshot(path);

        for (const auto& q : probes) {
            auto ra = a.retrieve(q), rb = b.retrieve(q);
            bool same = ra.documents.size() == rb.documents.size() && ra.best_score == rb.best_score;
            for (std::size_t i = 0; same && i < ra.documents.size(); ++i) {
                same = ra.documents[i].document->id == rb.documents[i].document->id &&
                       ra.documents[i].score == rb.documents[i].score;
            }
            if (!same) o.fail("retrieval differs after reload in trial " + std::to_string(trial));
            if (a.gate_text(q).probs != b.gate_text(q).probs) o.fail("gate differs after reload");
        }
        for (int v = 0; v < 5; ++v) {
            std::vector<double> x(a.embedder().dim());
            for (double& e : x) e = uniform(rng, -1.0, 1.0);
            if (a.gate_vector(Vector(x)).probs != b.gate_vector(Vector(x)).probs) o.fail("gate differs after reload");
        }
    }
    fs::remove_all(dir);
    return o;
}

}  // namespace

int main() {
    struct Criterion {
        int number;
        const char* name;
        double limit_s;
        Check run;
    };
    const std::vector<Criterion> criteria{
        {1, "gating normalization", 5, gating_normalization},
        {2, "sparse aggregation equals dense sum", 5, sparse_vs_dense},
        {3, "retrieval exactness", 10, retrieval_exactness},
        {4, "fusion fidelity", 5, fusion_fidelity},
        {5, "TransE convergence", 60, transe_convergence},
        {6, "PPO gradient", 30, ppo_gradient},
        {7, "RLHF routing convergence", 120, rlhf_convergence},
        {8, "reward model", 5, reward_model},
        {9, "metrics", 5, metrics},
        {10, "workflow transitions, identity and replay", 30, workflow_checks},
        {11, "grounding", 30, grounding},
        {12, "persistence round trip", 60, persistence},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.fail(std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (secs > c.limit_s) o.fail("took " + fmt(secs) + " s, limit " + fmt(c.limit_s) + " s");
        if (!o.ok) ++failures;
        std::printf("%s [%2d] %-44s %7.3f s%s%s\n", o.ok ? "PASS" : "FAIL", c.number, c.name, secs,
                    o.detail.empty() ? "" : "  ", o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
