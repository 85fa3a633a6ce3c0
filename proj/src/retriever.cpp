#include "lexroute/retriever.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <fstream>
#include <istream>

#include "lexroute/error.hpp"

namespace lexroute {

std::string_view fusion_mode_name(FusionMode m) {
    switch (m) {
        case FusionMode::Additive: return "additive";
        case FusionMode::Convex: return "convex";
        case FusionMode::TextOnly: return "text_only";
    }
    return "convex";
}

FusionMode parse_fusion_mode(std::string_view name) {
    if (name == "additive") return FusionMode::Additive;
    if (name == "convex") return FusionMode::Convex;
    if (name == "text_only") return FusionMode::TextOnly;
    throw Error(ErrorCode::Configuration, "unknown fusion mode '" + std::string(name) + "'");
}

void RetrievalConfig::validate() const {
    if (!(theta > 0.0 && theta <= 1.0)) throw Error(ErrorCode::Configuration, "theta must lie in (0, 1]");
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw Error(ErrorCode::Configuration, "alpha must be >= 0");
    if (!(beta >= 0.0 && beta <= 1.0)) throw Error(ErrorCode::Configuration, "beta must lie in [0, 1]");
    if (max_results == 0) throw Error(ErrorCode::Configuration, "max_results must be positive");
}

double fuse_scores(double text_sim, double kg_sim, const RetrievalConfig& cfg, VectorNorms norms) {
    if (!(text_sim >= -1.0 && text_sim <= 1.0)) {
        throw Error(ErrorCode::Validation, "text similarity outside [-1, 1]");
    }
    if (!(kg_sim >= 0.0 && kg_sim <= 1.0)) throw Error(ErrorCode::Validation, "KG similarity outside [0, 1]");
    switch (cfg.fusion_mode) {
        case FusionMode::Additive: {
            double denom = norms.query * norms.document;
            if (!(denom > 0.0)) {
                throw Error(ErrorCode::DegenerateInput, "additive fusion needs nonzero query and document norms");
            }
            double dot = text_sim * denom;
            return (dot + cfg.alpha * kg_sim) / (denom + cfg.alpha);
        }
        case FusionMode::Convex:
            return cfg.beta * text_sim + (1.0 - cfg.beta) * kg_sim;
        case FusionMode::TextOnly:
            return text_sim;
    }
    return text_sim;
}

std::shared_ptr<const DocumentRecord> DocumentIndex::add(DocumentFields fields, const Embedder& embedder,
                                                         const Gazetteer& gazetteer) {
    if (fields.id.empty()) throw Error(ErrorCode::Validation, "document id must be nonempty");
    if (fields.text.empty()) throw Error(ErrorCode::Validation, "document '" + fields.id + "' has empty text");
    if (by_id_.count(fields.id)) throw Error(ErrorCode::Conflict, "duplicate document id '" + fields.id + "'");
    Vector v = embedder.embed(fields.text);
    EntityLinkSet links = link_entities(fields.text, gazetteer, fields.id);
    return add_record(DocumentRecord{std::move(fields.id), std::move(fields.title), std::move(fields.text),
                                     std::move(fields.tags), std::move(v), std::move(links)});
}

std::shared_ptr<const DocumentRecord> DocumentIndex::add_record(DocumentRecord record) {
    if (record.id.empty()) throw Error(ErrorCode::Validation, "document id must be nonempty");
    if (record.vector.dim() != dim_) {
        throw Error(ErrorCode::Dimension, "document '" + record.id + "' has dim " +
                                              std::to_string(record.vector.dim()) + ", index dim " +
                                              std::to_string(dim_));
    }
    if (by_id_.count(record.id)) throw Error(ErrorCode::Conflict, "duplicate document id '" + record.id + "'");
    auto ptr = std::make_shared<const DocumentRecord>(std::move(record));
    by_id_.emplace(ptr->id, docs_.size());
    docs_.push_back(ptr);
    return ptr;
}

std::shared_ptr<const DocumentRecord> DocumentIndex::find(std::string_view id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : docs_[it->second];
}

RetrievalResult DocumentIndex::retrieve(const Vector& query, const EntityLinkSet& query_links,
                                        const RetrievalConfig& cfg, const KGEmbeddings* kg) const {
    cfg.validate();
    if (docs_.empty()) throw Error(ErrorCode::IndexEmpty, "document index is empty");
    if (query.dim() != dim_) {
        throw Error(ErrorCode::Dimension, "query dim " + std::to_string(query.dim()) + " != index dim " +
                                              std::to_string(dim_));
    }
    const bool use_kg = kg != nullptr && !kg->empty() && !query_links.empty() && cfg.fusion_mode != FusionMode::TextOnly;
    const double qnorm = query.norm();

    RetrievalResult result;
    result.best_score = -std::numeric_limits<double>::infinity();
    std::vector<ScoredDocument> hits;
    for (const auto& doc : docs_) {
        double text = cosine(query, doc->vector);
        double kgs = use_kg ? kg_similarity(query_links, doc->links, *kg) : 0.0;
        double fused = fuse_scores(text, kgs, cfg, {qnorm, doc->vector.norm()});
        result.best_score = std::max(result.best_score, fused);
        if (fused >= cfg.theta) hits.push_back({doc, fused, text, kgs});
    }
    std::sort(hits.begin(), hits.end(), [](const ScoredDocument& a, const ScoredDocument& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.document->id < b.document->id;
    });
    if (hits.size() > cfg.max_results) hits.resize(cfg.max_results);
    result.documents = std::move(hits);
    result.abstained = result.documents.empty();
    return result;
}

RetrievalResult DocumentIndex::retrieve(std::string_view query, const RetrievalConfig& cfg, const Embedder& embedder,
                                        const Gazetteer& gazetteer, const KGEmbeddings* kg) const {
    if (docs_.empty()) throw Error(ErrorCode::IndexEmpty, "document index is empty");
    return retrieve(embedder.embed(query), link_entities(query, gazetteer, "query"), cfg, kg);
}

std::vector<DocumentFields> parse_documents_jsonl(std::istream& in) {
    std::vector<DocumentFields> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto fail = [&](const std::string& why) {
            return Error(ErrorCode::Parse, "documents line " + std::to_string(lineno) + ": " + why);
        };
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw fail(e.what());
        }
        if (!j.is_object()) throw fail("expected a JSON object");
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (it.key() != "id" && it.key() != "title" && it.key() != "text" && it.key() != "tags") {
                throw fail("unknown field '" + it.key() + "'");
            }
        }
        if (!j.contains("id") || !j["id"].is_string()) throw fail("missing string 'id'");
        if (!j.contains("text") || !j["text"].is_string()) throw fail("missing string 'text'");
        DocumentFields f;
        f.id = j["id"].get<std::string>();
        f.text = j["text"].get<std::string>();
        if (j.contains("title")) {
            if (!j["title"].is_string()) throw fail("'title' must be a string");
            f.title = j["title"].get<std::string>();
        }
        if (j.contains("tags")) {
            if (!j["tags"].is_array()) throw fail("'tags' must be an array");
            for (const auto& t : j["tags"]) {
                if (!t.is_string()) throw fail("tags must be strings");
                f.tags.insert(t.get<std::string>());
            }
        }
        out.push_back(std::move(f));
    }
    return out;
}

std::vector<DocumentFields> load_documents_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open documents file: " + path);
    return parse_documents_jsonl(in);
}

}  // namespace lexroute
