// lexroute command-line interface.
//
// Exit codes: 0 success, 1 user error (bad flags, bad input, failed
// precondition), 2 internal error.

#include <CLI11.hpp>
#include <json.hpp>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unistd.h>

#include "lexroute/engine.hpp"
#include "lexroute/error.hpp"
#include "lexroute/server.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
    std::string config;
    std::string state;
    bool json_out = false;
    bool quiet = false;

    // overrides
    std::optional<double> theta;
    std::optional<std::string> fusion_mode;
    std::optional<std::size_t> top_k;
    std::optional<int> epochs;
    std::optional<std::string> host;
    std::optional<int> port;
};

bool use_color() { return std::getenv("NO_COLOR") == nullptr && isatty(STDOUT_FILENO); }

std::string bold(const std::string& s) { return use_color() ? "\033[1m" + s + "\033[0m" : s; }

lexroute::ApiConfig make_config(const Options& o) {
    lexroute::ApiConfig cfg;
    std::string path = o.config;
    if (path.empty()) {
        if (const char* env = std::getenv("LEXROUTE_CONFIG")) path = env;
    }
    if (!path.empty()) cfg = lexroute::load_api_config(path);
    if (o.theta) cfg.retrieval.theta = *o.theta;
    if (o.fusion_mode) cfg.retrieval.fusion_mode = lexroute::parse_fusion_mode(*o.fusion_mode);
    if (o.top_k) cfg.moe.top_k = *o.top_k;
    if (o.epochs) cfg.transe.epochs = *o.epochs;
    if (o.host) cfg.host = *o.host;
    if (o.port) cfg.port = *o.port;
    if (!o.state.empty()) cfg.snapshot = o.state;
    if (cfg.snapshot.empty()) cfg.snapshot = "lexroute.snapshot";
    cfg.validate();
    return cfg;
}

// Loads persisted state if present. Otherwise `bootstrap` decides whether the
// configured data files seed a fresh engine or only the gazetteer is loaded.
std::unique_ptr<lexroute::Engine> open_engine(const Options& o, bool bootstrap) {
    auto engine = std::make_unique<lexroute::Engine>(make_config(o));
    const auto& cfg = engine->config();
    if (fs::exists(cfg.snapshot)) {
        engine->load_snapshot(cfg.snapshot);
    } else if (bootstrap) {
        engine->bootstrap();
    } else if (!cfg.data.gazetteer.empty()) {
        engine->load_gazetteer_file(cfg.data.gazetteer);
    }
    return engine;
}

void save(const lexroute::Engine& e) { e.save_snapshot(e.config().snapshot); }

void emit(const Options& o, const json& j, const std::string& text) {
    if (o.json_out) {
        std::cout << j.dump(2) << '\n';
    } else if (!o.quiet) {
        std::cout << text << '\n';
    }
}

std::string fmt(double x) {
    std::ostringstream s;
    s.precision(4);
    s << std::fixed << x;
    return s.str();
}

int cmd_ingest_docs(const Options& o, const std::string& path) {
    auto engine = open_engine(o, false);
    const auto n = engine->ingest_documents_file(path);
    save(*engine);
    emit(o, {{"ingested", n}, {"documents", engine->index()->size()}},
         "ingested " + std::to_string(n) + " documents");
    return 0;
}

int cmd_ingest_triples(const Options& o, const std::string& path) {
    auto engine = open_engine(o, false);
    const auto rep = engine->ingest_triples_file(path);
    save(*engine);
    emit(o, {{"triples_seen", rep.triples_seen}, {"new_triples", rep.new_triples}, {"lines_read", rep.lines_read}},
         "ingested " + std::to_string(rep.triples_seen) + " triples (" + std::to_string(rep.new_triples) + " new)");
    return 0;
}

int cmd_train_kg(const Options& o) {
    auto engine = open_engine(o, false);
    const auto losses = engine->train_kg();
    save(*engine);
    const double last = losses.empty() ? 0.0 : losses.back();
    emit(o, {{"epochs", losses.size()}, {"final_loss", last}, {"loss_history", losses}},
         "trained TransE for " + std::to_string(losses.size()) + " epochs, final loss " + fmt(last));
    return 0;
}

int cmd_train_gate(const Options& o, const std::string& trajectories) {
    auto engine = open_engine(o, true);
    std::size_t loaded = 0;
    if (!trajectories.empty()) {
        std::ifstream in(trajectories);
        if (!in) throw lexroute::Error(lexroute::ErrorCode::Io, "cannot open " + trajectories);
        std::vector<lexroute::Trajectory> batch;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            try {
                batch.push_back(lexroute::trajectory_from_json(json::parse(line)));
            } catch (const json::exception& e) {
                throw lexroute::Error(lexroute::ErrorCode::Parse,
                                      trajectories + " line " + std::to_string(lineno) + ": " + e.what());
            }
        }
        loaded = batch.size();
        engine->push_trajectories(batch);
    }
    const auto u = engine->update_policy();
    save(*engine);
    emit(o,
         {{"applied", u.applied},
          {"policy_version", u.policy_version},
          {"batch", u.batch},
          {"loaded", loaded},
          {"baseline", u.baseline},
          {"message", u.message}},
         u.applied ? "policy updated to version " + std::to_string(u.policy_version) + " on " +
                         std::to_string(u.batch) + " trajectories"
                   : "policy unchanged: " + u.message);
    return 0;
}

int cmd_query(const Options& o, const std::string& text, const std::string& case_id) {
    auto engine = open_engine(o, true);
    const auto r = engine->query(text, case_id);
    save(*engine);
    std::ostringstream out;
    out << bold("case") << ' ' << r.case_id << " [" << lexroute::case_state_name(r.state) << "]\n";
    if (r.abstained) {
        out << "abstained: no document met the similarity threshold\n";
    } else {
        out << bold("answer") << '\n' << r.answer << '\n';
        out << bold("citations") << ':';
        for (const auto& c : r.citations) out << ' ' << c;
        out << '\n';
    }
    for (const auto& q : r.questions) {
        out << bold("gate") << ':';
        for (std::size_t i = 0; i < q.gates.size(); ++i) out << " e" << i + 1 << '=' << fmt(q.gates[i]);
        out << " active=";
        for (std::size_t i = 0; i < q.active.size(); ++i) out << (i ? "," : "") << q.active[i];
        out << '\n' << bold("scores") << ':';
        for (const auto& d : q.documents) out << ' ' << d.document_id << '=' << fmt(d.score);
        if (q.documents.empty()) out << " best=" << fmt(q.best_score);
        out << '\n';
    }
    if (!r.diagnostics.empty()) out << r.diagnostics;
    std::string s = out.str();
    if (!s.empty() && s.back() == '\n') s.pop_back();
    emit(o, lexroute::query_result_to_json(r), s);
    return 0;
}

int cmd_eval(const Options& o, const std::string& task_name, const std::string& data, const std::string& metric,
             std::string out_path) {
    auto engine = open_engine(o, true);
    std::optional<lexroute::EvalTask> task;
    for (const auto& t : engine->config().eval_tasks) {
        if (t.name == task_name) task = t;
    }
    if (!task) {
        lexroute::EvalTask t;
        t.task = lexroute::parse_task(task_name);
        t.name = std::string(lexroute::task_name(t.task));
        t.metric = lexroute::metrics_for_task(t.task).front();
        task = t;
    }
    if (!metric.empty()) task->metric = lexroute::parse_metric(metric);
    if (!data.empty()) task->dataset = data;
    task->validate();
    if (task->dataset.empty()) {
        throw lexroute::Error(lexroute::ErrorCode::Validation, "task '" + task->name + "' has no dataset; pass --data");
    }
    const auto records = lexroute::load_eval_jsonl(task->dataset);
    const auto rep = engine->evaluate(*task, records);
    if (out_path.empty()) out_path = task->name + ".report.json";
    const json j = lexroute::metric_report_to_json(rep);
    std::ofstream f(out_path);
    if (!f) throw lexroute::Error(lexroute::ErrorCode::Io, "cannot write " + out_path);
    f << j.dump(2) << '\n';
    emit(o, {{"task", rep.task}, {"metric", std::string(lexroute::metric_name(rep.metric))},
             {"score", j["score"]}, {"abstention_rate", rep.abstention_rate}, {"n", rep.n}, {"report", out_path}},
         rep.task + " " + std::string(lexroute::metric_name(rep.metric)) + "=" +
             (rep.score ? fmt(*rep.score) : std::string("null")) + " abstention=" + fmt(rep.abstention_rate) +
             " n=" + std::to_string(rep.n) + " -> " + out_path);
    return 0;
}

lexroute::ApiServer* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

int cmd_serve(const Options& o) {
    auto engine = open_engine(o, true);
    lexroute::ApiServer server(*engine);
    const int port = server.bind(engine->config().host, engine->config().port);
    emit(o, {{"host", engine->config().host}, {"port", port}},
         "listening on " + engine->config().host + ":" + std::to_string(port));
    std::cout.flush();
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    server.serve();
    g_server = nullptr;
    save(*engine);
    return 0;
}

int cmd_snapshot(const Options& o, const std::string& action, const std::string& path) {
    if (action == "save") {
        auto engine = open_engine(o, true);
        engine->save_snapshot(path);
        emit(o, {{"saved", path}, {"documents", engine->index()->size()}}, "saved snapshot to " + path);
    } else {
        auto engine = std::make_unique<lexroute::Engine>(make_config(o));
        engine->load_snapshot(path);
        save(*engine);
        emit(o, {{"loaded", path}, {"documents", engine->index()->size()}, {"state", engine->config().snapshot}},
             "loaded snapshot " + path + " (" + std::to_string(engine->index()->size()) + " documents)");
    }
    return 0;
}

int exit_code_for(lexroute::ErrorCode c) {
    switch (c) {
        case lexroute::ErrorCode::Internal:
        case lexroute::ErrorCode::Numeric:
        case lexroute::ErrorCode::Routing:
        case lexroute::ErrorCode::Aggregation: return 2;
        default: return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lexroute: legal retrieval, routing and review engine"};
    app.require_subcommand(1);
    app.fallthrough();
    Options o;
    app.add_option("-c,--config", o.config, "Config file (JSON); LEXROUTE_CONFIG is used when absent");
    app.add_option("--state", o.state, "Engine state file (overrides config 'snapshot')");
    app.add_flag("--json", o.json_out, "Print machine-readable JSON");
    app.add_flag("-q,--quiet", o.quiet, "Suppress normal output");

    std::string path, text, case_id, task, data, metric, out, trajectories, action;
    double theta = 0;
    std::string mode;
    std::size_t top_k = 0;
    int epochs = 0, port = 0;
    std::string host;

    auto* ingest_docs = app.add_subcommand("ingest-docs", "Embed, link and index a documents JSONL file");
    ingest_docs->add_option("path", path, "documents.jsonl")->required()->check(CLI::ExistingFile);

    auto* ingest_triples = app.add_subcommand("ingest-triples", "Add (head, relation, tail) rows from a TSV file");
    ingest_triples->add_option("path", path, "triples.tsv")->required()->check(CLI::ExistingFile);

    auto* train_kg = app.add_subcommand("train-kg", "Train TransE embeddings on the knowledge graph");
    auto* epochs_opt = train_kg->add_option("--epochs", epochs, "Training epochs");

    auto* train_gate = app.add_subcommand("train-gate", "Run a PPO update of the gating network");
    train_gate->add_option("--trajectories", trajectories, "JSONL of {query, old_probs, action, reward}")
        ->check(CLI::ExistingFile);

    auto* query = app.add_subcommand("query", "Answer a question through the full case pipeline");
    query->add_option("text", text, "Question text (one question per line)")->required();
    query->add_option("--case-id", case_id, "Case id to open");
    auto* theta_opt = query->add_option("--theta", theta, "Similarity threshold");
    auto* mode_opt = query->add_option("--fusion-mode", mode, "additive | convex | text_only");
    auto* topk_opt = query->add_option("--top-k", top_k, "Experts per question");

    auto* eval = app.add_subcommand("eval", "Score the extractive pipeline on an eval task");
    eval->add_option("--task", task, "Configured task name or task label")->required();
    eval->add_option("--data", data, "eval.jsonl (overrides the task's dataset)");
    eval->add_option("--metric", metric, "Metric override (must suit the task)");
    eval->add_option("--out", out, "Report path (default <task>.report.json)");
    auto* eval_theta = eval->add_option("--theta", theta, "Similarity threshold");

    auto* serve = app.add_subcommand("serve", "Run the HTTP API");
    auto* host_opt = serve->add_option("--host", host, "Bind address");
    auto* port_opt = serve->add_option("--port", port, "Port (0 picks a free one)");

    auto* snapshot = app.add_subcommand("snapshot", "Save or load an engine snapshot");
    snapshot->add_option("action", action, "save | load")->required()->check(CLI::IsMember({"save", "load"}));
    snapshot->add_option("path", path, "Snapshot file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    if (*theta_opt || *eval_theta) o.theta = theta;
    if (*mode_opt) o.fusion_mode = mode;
    if (*topk_opt) o.top_k = top_k;
    if (*epochs_opt) o.epochs = epochs;
    if (*host_opt) o.host = host;
    if (*port_opt) o.port = port;

    try {
        if (*ingest_docs) return cmd_ingest_docs(o, path);
        if (*ingest_triples) return cmd_ingest_triples(o, path);
        if (*train_kg) return cmd_train_kg(o);
        if (*train_gate) return cmd_train_gate(o, trajectories);
        if (*query) return cmd_query(o, text, case_id);
        if (*eval) return cmd_eval(o, task, data, metric, out);
        if (*serve) return cmd_serve(o);
        if (*snapshot) return cmd_snapshot(o, action, path);
    } catch (const lexroute::Error& e) {
        if (o.json_out) {
            std::cout << json{{"error", std::string(lexroute::error_code_name(e.code()))}, {"message", e.what()}}.dump(2)
                      << '\n';
        }
        std::cerr << "error [" << lexroute::error_code_name(e.code()) << "]: " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        if (o.json_out) std::cout << json{{"error", std::string(lexroute::error_code_name(lexroute::ErrorCode::Internal))}, {"message", e.what()}}.dump(2) << '\n';
        std::cerr << "internal error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
