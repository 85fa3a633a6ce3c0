#include "support.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "lexroute/engine.hpp"

using namespace lexroute;
namespace fs = std::filesystem;

namespace {

nlohmann::json base_config() {
    std::ifstream in(testing::fixture("config.json"));
    return nlohmann::json::parse(in);
}

fs::path temp_dir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    auto p = fs::temp_directory_path() / ("lexroute-" + tag + "-" + std::to_string(rng()));
    fs::create_directories(p);
    return p;
}

std::unique_ptr<Engine> engine(nlohmann::json j = base_config()) {
    auto e = std::make_unique<Engine>(parse_api_config(j, LEXROUTE_FIXTURES));
    e->bootstrap();
    return e;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

FeedbackRecord feedback(const std::string& case_id, ActorRole role, double v) {
    FeedbackRecord f;
    f.case_id = f.response_id = case_id;
    f.role = role;
    f.scores = {v, v, v, v};
    return f;
}

const std::string kQuery = "What precedent cases support the application of statute X in contract disputes?";

}  // namespace

TEST_CASE("config parsing is strict") {
    auto cfg = parse_api_config(base_config(), LEXROUTE_FIXTURES);
    CHECK(cfg.retrieval.theta == 0.3);
    CHECK(cfg.tokens.at("admin-token") == AuthRole::Admin);
    CHECK(cfg.experts.size() == 4);
    CHECK(fs::path(cfg.data.documents).is_absolute());

    auto j = base_config();
    j["retrieval"]["thetta"] = 0.5;
    CHECK(testing::error_code([&] { parse_api_config(j, LEXROUTE_FIXTURES); }) == ErrorCode::Configuration);
    j = base_config();
    j["surprise"] = true;
    CHECK(testing::error_code([&] { parse_api_config(j, LEXROUTE_FIXTURES); }) == ErrorCode::Configuration);
    j = base_config();
    j["retrieval"]["theta"] = 1.5;
    CHECK(testing::error_code([&] { parse_api_config(j, LEXROUTE_FIXTURES); }) == ErrorCode::Configuration);
    j = base_config();
    j["retrieval"]["theta"] = "high";
    CHECK(testing::error_code([&] { parse_api_config(j, LEXROUTE_FIXTURES); }) == ErrorCode::Configuration);
    CHECK(testing::error_code([] { load_api_config("/nonexistent/config.json"); }) == ErrorCode::Io);
}

TEST_CASE("bootstrap loads the fixture corpus") {
    auto e = engine();
    auto m = e->metrics();
    CHECK(m.documents == 12);
    CHECK(m.triples == 12);
    CHECK(e->kg_embeddings() != nullptr);
    CHECK_FALSE(m.mean_reward.has_value());
    CHECK_FALSE(m.abstention_rate_window.has_value());
}

TEST_CASE("query runs through to advisor review") {
    auto e = engine();
    auto r = e->query(kQuery);
    CHECK(r.state == CaseState::AdvisorReview);
    CHECK_FALSE(r.abstained);
    CHECK_FALSE(r.answer.empty());
    CHECK_FALSE(r.citations.empty());
    REQUIRE(r.questions.size() == 1);
    double sum = 0.0;
    for (double g : r.questions[0].gates) sum += g;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.questions[0].active.size() == 2);

    auto j = query_result_to_json(r);
    for (const char* k : {"case_id", "answer", "citations", "abstained", "scores", "gate"}) CHECK(j.contains(k));
    CHECK(j["gate"].contains("g"));
    CHECK(j["gate"].contains("active"));
    CHECK(e->review_queue().size() == 1);
}

TEST_CASE("off-topic query abstains and feeds the window") {
    auto j = base_config();
    j["retrieval"]["theta"] = 0.9;
    auto e = engine(j);
    auto r = e->query("Recipe for banana bread with walnuts");
    CHECK(r.abstained);
    CHECK(r.state == CaseState::Abstained);
    CHECK(r.answer.empty());
    CHECK(*e->metrics().abstention_rate_window == 1.0);
}

TEST_CASE("feedback roles, reward and policy update") {
    auto e = engine();
    auto r = e->query(kQuery);
    CHECK(testing::error_code([&] { e->submit_feedback(feedback(r.case_id, ActorRole::Consultant, 1.0)); }) ==
          ErrorCode::Forbidden);
    CHECK(testing::error_code([&] { e->submit_feedback(feedback("nope", ActorRole::Advisor, 1.0)); }) ==
          ErrorCode::NotFound);
    auto out = e->submit_feedback(feedback(r.case_id, ActorRole::Advisor, 0.8));
    CHECK(out.reward == doctest::Approx(0.8));
    CHECK(out.trajectories == 1);
    CHECK(out.buffered == 1);
    auto m = e->metrics();
    CHECK(m.n_feedback == 1);
    CHECK(*m.mean_reward == doctest::Approx(0.8));

    auto before = e->gating();
    auto u = e->update_policy();
    CHECK(u.batch == 1);
    // A single-sample batch has zero advantage under the batch-mean baseline.
    CHECK(e->gating() == before);
    CHECK(*e->baseline() == doctest::Approx(0.8));

    auto r2 = e->query(kQuery);
    e->submit_feedback(feedback(r2.case_id, ActorRole::Paralegal, 0.2));
    u = e->update_policy();
    CHECK(u.applied);
    CHECK(u.policy_version == 1);
    CHECK(e->metrics().policy_version == 1);
    CHECK(e->update_policy().batch == 0);
}

TEST_CASE("review and finalize") {
    auto e = engine();
    auto r = e->query(kQuery);
    Actor advisor{ActorRole::Advisor, "ada"}, paralegal{ActorRole::Paralegal, "pat"};
    CHECK(testing::error_code([&] { e->finalize(r.case_id, "memo", paralegal); }) == ErrorCode::IllegalTransition);
    CHECK(testing::error_code([&] { e->review(r.case_id, Verdict::Approve, "", paralegal); }) == ErrorCode::Forbidden);
    CHECK(e->review(r.case_id, Verdict::Approve, "fine", advisor) == CaseState::ParalegalFinalize);
    auto doc = e->finalize(r.case_id, "memo", paralegal);
    CHECK(doc.text == r.answer);
    CHECK(doc.rendered.rfind("MEMORANDUM " + r.case_id, 0) == 0);
    CHECK(e->get_case(r.case_id).state() == CaseState::Released);
    CHECK(e->review_queue().empty());
}

TEST_CASE("snapshot round trip") {
    auto dir = temp_dir("snap");
    auto e = engine();
    auto r = e->query(kQuery);
    e->submit_feedback(feedback(r.case_id, ActorRole::Advisor, 0.9));
    e->save_snapshot((dir / "s.snap").string());

    auto j = base_config();
    j.erase("data");
    Engine fresh(parse_api_config(j, LEXROUTE_FIXTURES));
    fresh.load_snapshot((dir / "s.snap").string());
    CHECK(fresh.snapshot_json() == e->snapshot_json());
    CHECK(fresh.gating() == e->gating());
    CHECK(fresh.get_case(r.case_id).to_json() == e->get_case(r.case_id).to_json());
    CHECK(fresh.metrics().buffered == 1);
    auto a = fresh.retrieve(kQuery), b = e->retrieve(kQuery);
    REQUIRE(a.documents.size() == b.documents.size());
    for (std::size_t i = 0; i < a.documents.size(); ++i) {
        CHECK(a.documents[i].document->id == b.documents[i].document->id);
        CHECK(a.documents[i].score == b.documents[i].score);
    }
    fs::remove_all(dir);
}

TEST_CASE("corrupt snapshots are rejected and leave the engine untouched") {
    auto dir = temp_dir("bad");
    auto e = engine();
    e->query(kQuery);
    const auto path = (dir / "s.snap").string();
    e->save_snapshot(path);
    const std::string data = read_file(path);
    auto state = e->snapshot_json();

    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << data.substr(0, data.size() - 17);
    }
    CHECK(testing::error_code([&] { e->load_snapshot(path); }) == ErrorCode::Checksum);
    {
        std::string flipped = data;
        flipped[flipped.size() - 3] ^= 0x01;
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << flipped;
    }
    CHECK(testing::error_code([&] { e->load_snapshot(path); }) == ErrorCode::Checksum);
    {
        std::string body = decode_snapshot(data);
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << encode_snapshot(body, kSnapshotFormatVersion + 1);
    }
    CHECK(testing::error_code([&] { e->load_snapshot(path); }) == ErrorCode::Version);
    CHECK(e->snapshot_json() == state);

    auto j = base_config();
    j["embedder"]["dim"] = 128;
    j.erase("data");
    Engine other(parse_api_config(j, LEXROUTE_FIXTURES));
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << data;
    }
    CHECK(testing::error_code([&] { other.load_snapshot(path); }) == ErrorCode::Configuration);
    fs::remove_all(dir);
}

TEST_CASE("journal records writes and aborts") {
    auto dir = temp_dir("journal");
    auto j = base_config();
    j["journal"] = (dir / "wal.jsonl").string();
    auto e = engine(j);
    e->query(kQuery);
    CHECK(testing::error_code([&] { e->query(kQuery, "case-1"); }) == ErrorCode::Conflict);
    std::ifstream in(dir / "wal.jsonl");
    std::vector<nlohmann::json> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(nlohmann::json::parse(line));
    REQUIRE(lines.size() >= 3);
    CHECK(lines.back()["op"] == "abort");
    CHECK(lines.back()["body"]["error"] == "conflict");
    CHECK(lines[lines.size() - 2]["op"] == "query");
    fs::remove_all(dir);
}

TEST_CASE("ingestion and gazetteer updates") {
    auto e = engine();
    CHECK(testing::error_code([&] { e->ingest_documents({{"doc-01", "", "again", {}}}); }) == ErrorCode::Conflict);
    CHECK(e->metrics().documents == 12);
    CHECK(e->ingest_documents({{"doc-new", "T", "Fresh text about arbitration clauses.", {"x"}}}) == 1);
    CHECK(e->index()->find("doc-new") != nullptr);
    std::istringstream t("statute_x\tcites\tsomething_new\n");
    auto rep = e->ingest_triples(t);
    CHECK(rep.new_triples == 1);
    CHECK(e->kg_embeddings() == nullptr);
    e->train_kg();
    CHECK(e->kg_embeddings()->has_entity("something_new"));
}

TEST_CASE("evaluation over the fixture tasks") {
    auto e = engine();
    auto cfg = e->config();
    for (const auto& task : cfg.eval_tasks) {
        auto recs = load_eval_jsonl(cfg.resolve(task.dataset));
        auto rep = e->evaluate(task, recs);
        REQUIRE(rep.score.has_value());
        if (task.name == "qa-fixture") CHECK(*rep.score == 1.0);
    }

    auto j = base_config();
    j["retrieval"]["theta"] = 1.0;
    auto strict = engine(j);
    auto task = strict->config().eval_tasks.front();
    auto recs = load_eval_jsonl(strict->config().resolve(task.dataset));
    auto rep = strict->evaluate(task, recs);
    CHECK_FALSE(rep.score.has_value());
    CHECK(rep.abstention_rate == 1.0);
}

TEST_CASE("auth role names") {
    CHECK(parse_auth_role("Admin") == AuthRole::Admin);
    CHECK(auth_role_name(AuthRole::Paralegal) == "paralegal");
    CHECK(testing::error_code([] { parse_auth_role("root"); }) == ErrorCode::Configuration);
}
