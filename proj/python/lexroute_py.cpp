#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "lexroute/engine.hpp"
#include "lexroute/error.hpp"
#include "lexroute/eval.hpp"
#include "lexroute/moe.hpp"
#include "lexroute/retriever.hpp"
#include "lexroute/rlhf.hpp"
#include "lexroute/transe.hpp"
#include "lexroute/vector.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using nlohmann::json;

namespace {

lexroute::Vector vec(const std::vector<double>& v) { return lexroute::Vector(v); }

std::vector<double> values(const lexroute::Vector& v) { return {v.values().begin(), v.values().end()}; }

lexroute::GatingNetwork make_gate(const std::vector<std::vector<double>>& w, const std::vector<double>& b) {
    lexroute::GatingNetwork g = lexroute::GatingNetwork::zeros(w.size(), w.empty() ? 0 : w.front().size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i].size() != g.dim) throw lexroute::Error(lexroute::ErrorCode::Dimension, "ragged weight matrix");
        for (std::size_t j = 0; j < g.dim; ++j) g.w(i, j) = w[i][j];
    }
    g.bias = b;
    g.validate();
    return g;
}

lexroute::ApiConfig config_from(const std::string& config_json, const std::string& base_dir) {
    return lexroute::parse_api_config(json::parse(config_json), base_dir);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "lexroute native core";

    static py::exception<lexroute::Error> error_type(m, "LexrouteError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const lexroute::Error& e) {
            py::object inst = py::reinterpret_borrow<py::object>(error_type.ptr())(std::string(lexroute::error_code_name(e.code())), e.what());
            PyErr_SetObject(error_type.ptr(), inst.ptr());
        }
    });

    m.def("cosine", [](const std::vector<double>& a, const std::vector<double>& b) {
        return lexroute::cosine(vec(a), vec(b));
    }, "a"_a, "b"_a);
    m.def("normalize", [](const std::vector<double>& v) { return values(lexroute::normalize(vec(v))); }, "v"_a);

    m.def("embed", [](const std::string& text, std::size_t dim, std::size_t ngram, std::uint64_t seed) {
        return values(lexroute::HashEmbedder(dim, ngram, seed).embed(text));
    }, "text"_a, "dim"_a = 256, "ngram"_a = 3, "seed"_a = 0);

    m.def("fuse_scores", [](double text, double kg, const std::string& mode, double alpha, double beta,
                            double qnorm, double dnorm) {
        lexroute::RetrievalConfig cfg;
        cfg.fusion_mode = lexroute::parse_fusion_mode(mode);
        cfg.alpha = alpha;
        cfg.beta = beta;
        return lexroute::fuse_scores(text, kg, cfg, {qnorm, dnorm});
    }, "text_sim"_a, "kg_sim"_a, "mode"_a = "convex", "alpha"_a = 0.5, "beta"_a = 0.5, "query_norm"_a = 1.0,
       "doc_norm"_a = 1.0);

    m.def("softmax", [](const std::vector<double>& logits) { return lexroute::softmax(logits).probs; }, "logits"_a);
    m.def("gate", [](const std::vector<std::vector<double>>& w, const std::vector<double>& b,
                     const std::vector<double>& v) { return lexroute::gate(vec(v), make_gate(w, b)).probs; },
          "weights"_a, "bias"_a, "query"_a);
    m.def("top_k", [](const std::vector<double>& g, std::size_t k, bool renormalize) {
        auto d = lexroute::top_k(lexroute::GatingDistribution{g}, k, renormalize);
        return py::make_tuple(d.active, d.gates_used);
    }, "gates"_a, "k"_a, "renormalize"_a = true);
    m.def("aggregate", [](const std::vector<double>& g, const std::map<int, std::vector<double>>& outputs,
                          bool renormalize) {
        std::vector<lexroute::ExpertOutput> outs;
        for (const auto& [id, v] : outputs) outs.push_back({id, "", vec(v), {}});
        return values(*lexroute::aggregate(lexroute::GatingDistribution{g}, outs, renormalize).combined);
    }, "gates"_a, "outputs"_a, "renormalize"_a = false);

    m.def("rouge_l", [](const std::string& p, const std::string& r) { return lexroute::rouge_l(p, r); });
    m.def("bleu", [](const std::string& p, const std::string& r, int n) { return lexroute::bleu(p, r, n); },
          "prediction"_a, "reference"_a, "max_n"_a = 4);
    m.def("f1", &lexroute::f1, "predicted"_a, "reference"_a);

    m.def("compute_reward", [](const std::map<std::string, double>& scores, const std::string& role,
                               const std::vector<double>& weights) {
        lexroute::FeedbackRecord r;
        r.role = lexroute::parse_actor_role(role);
        for (auto c : lexroute::kAllComponents) {
            auto it = scores.find(std::string(lexroute::component_name(c)));
            if (it != scores.end()) r.score(c) = it->second;
        }
        lexroute::RewardModel model;
        if (weights.size() != 4) throw lexroute::Error(lexroute::ErrorCode::Validation, "need four weights");
        std::copy(weights.begin(), weights.end(), model.weights.begin());
        return lexroute::compute_reward(r, model).reward;
    }, "scores"_a, "role"_a = "Advisor", "weights"_a = std::vector<double>{0.25, 0.25, 0.25, 0.25});

    m.def("train_transe", [](const std::vector<std::tuple<std::string, std::string, std::string>>& triples,
                             std::size_t dim, int epochs, std::uint64_t seed) {
        lexroute::KnowledgeGraph g;
        for (const auto& [h, r, t] : triples) g.add({h, r, t});
        lexroute::TransEConfig cfg;
        cfg.dim = dim;
        cfg.epochs = epochs;
        cfg.seed = seed;
        std::vector<double> losses;
        auto emb = lexroute::train_transe(g, cfg, &losses);
        std::map<std::string, std::vector<double>> ents;
        for (std::size_t i = 0; i < emb.entity_ids().size(); ++i) ents[emb.entity_ids()[i]] = values(emb.entity_vectors()[i]);
        return py::make_tuple(ents, losses);
    }, "triples"_a, "dim"_a = 32, "epochs"_a = 100, "seed"_a = 42);

    py::class_<lexroute::Engine>(m, "Engine")
        .def(py::init([](const std::string& config_json, const std::string& base_dir) {
                 return std::make_unique<lexroute::Engine>(config_from(config_json, base_dir));
             }),
             "config_json"_a = "{}", "base_dir"_a = ".")
        .def_static("from_file", [](const std::string& path) {
            return std::make_unique<lexroute::Engine>(lexroute::load_api_config(path));
        })
        .def("bootstrap", &lexroute::Engine::bootstrap, py::call_guard<py::gil_scoped_release>())
        .def("ingest_documents", &lexroute::Engine::ingest_documents_file, "path"_a)
        .def("ingest_triples", [](lexroute::Engine& e, const std::string& p) {
            auto r = e.ingest_triples_file(p);
            return py::make_tuple(r.triples_seen, r.new_triples);
        }, "path"_a)
        .def("load_gazetteer", &lexroute::Engine::load_gazetteer_file, "path"_a)
        .def("train_kg", &lexroute::Engine::train_kg, py::call_guard<py::gil_scoped_release>())
        .def("query", [](lexroute::Engine& e, const std::string& text, const std::string& case_id) {
            return lexroute::query_result_to_json(e.query(text, case_id)).dump();
        }, "text"_a, "case_id"_a = "")
        .def("retrieve", [](const lexroute::Engine& e, const std::string& text) {
            std::vector<std::pair<std::string, double>> out;
            for (const auto& d : e.retrieve(text).documents) out.emplace_back(d.document->id, d.score);
            return out;
        }, "text"_a)
        .def("gate", [](const lexroute::Engine& e, const std::string& text) { return e.gate_text(text).probs; })
        .def("case", [](const lexroute::Engine& e, const std::string& id) { return e.get_case(id).to_json().dump(); })
        .def("review", [](lexroute::Engine& e, const std::string& id, const std::string& verdict,
                          const std::string& notes) {
            auto s = e.review(id, lexroute::parse_verdict(verdict), notes, {lexroute::ActorRole::Advisor, "advisor"});
            return std::string(lexroute::case_state_name(s));
        }, "case_id"_a, "verdict"_a, "notes"_a = "")
        .def("finalize", [](lexroute::Engine& e, const std::string& id, const std::string& tmpl) {
            auto d = e.finalize(id, tmpl, {lexroute::ActorRole::Paralegal, "paralegal"});
            return py::make_tuple(d.text, d.rendered);
        }, "case_id"_a, "template_id"_a = "default")
        .def("feedback", [](lexroute::Engine& e, const std::string& record_json) {
            auto out = e.submit_feedback(lexroute::feedback_from_json(json::parse(record_json)));
            return py::make_tuple(out.reward, out.trajectories);
        }, "record_json"_a)
        .def("update_policy", [](lexroute::Engine& e) {
            auto u = e.update_policy();
            return py::make_tuple(u.applied, u.policy_version);
        })
        .def("metrics", [](const lexroute::Engine& e) { return lexroute::metrics_to_json(e.metrics()).dump(); })
        .def("save_snapshot", &lexroute::Engine::save_snapshot, "path"_a)
        .def("load_snapshot", &lexroute::Engine::load_snapshot, "path"_a);
}
