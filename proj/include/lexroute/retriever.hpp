#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "lexroute/embedder.hpp"
#include "lexroute/kg.hpp"
#include "lexroute/transe.hpp"
#include "lexroute/vector.hpp"

namespace lexroute {

struct DocumentFields {
    std::string id;
    std::string title;
    std::string text;
    std::set<std::string> tags;
};

struct DocumentRecord {
    std::string id;
    std::string title;
    std::string text;
    std::set<std::string> tags;
    Vector vector;
    EntityLinkSet links;
};

enum class FusionMode {
    Additive,  // (v_x.v_d + alpha*kg) / (|v_x||v_d| + alpha)
    Convex,    // beta*text + (1 - beta)*kg
    TextOnly,
};

std::string_view fusion_mode_name(FusionMode m);
FusionMode parse_fusion_mode(std::string_view name);

struct RetrievalConfig {
    double theta = 0.85;
    double alpha = 0.5;
    double beta = 0.5;
    FusionMode fusion_mode = FusionMode::Convex;
    std::size_t max_results = 10;

    void validate() const;
};

struct VectorNorms {
    double query = 1.0;
    double document = 1.0;
};

/// Combines text and KG similarity. text_sim must lie in [-1, 1] and kg_sim
/// in [0, 1]. The additive form needs both norms nonzero.
double fuse_scores(double text_sim, double kg_sim, const RetrievalConfig& cfg, VectorNorms norms = {});

struct ScoredDocument {
    std::shared_ptr<const DocumentRecord> document;
    double score = 0.0;
    double text_similarity = 0.0;
    double kg_similarity = 0.0;
};

struct RetrievalResult {
    std::vector<ScoredDocument> documents;  // score descending, id ascending on ties
    bool abstained = true;
    double best_score = 0.0;
};

/// Exhaustive-scan document index. Copying is cheap (records are shared), so
/// writers copy, mutate and publish a new instance while readers keep theirs.
class DocumentIndex {
public:
    explicit DocumentIndex(std::size_t dim) : dim_(dim) {}

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return docs_.size(); }
    bool empty() const { return docs_.empty(); }

    /// Embeds and links the text. Throws Validation on empty id/text and
    /// Conflict on a duplicate id.
    std::shared_ptr<const DocumentRecord> add(DocumentFields fields, const Embedder& embedder,
                                              const Gazetteer& gazetteer);
    /// Inserts a prepared record (vector dim must match).
    std::shared_ptr<const DocumentRecord> add_record(DocumentRecord record);

    std::shared_ptr<const DocumentRecord> find(std::string_view id) const;
    const std::vector<std::shared_ptr<const DocumentRecord>>& documents() const { return docs_; }

    /// Scores every document against the query and keeps those with fused
    /// score >= theta, best first, capped at max_results. `kg` may be null,
    /// in which case the KG term is 0.
    RetrievalResult retrieve(const Vector& query, const EntityLinkSet& query_links, const RetrievalConfig& cfg,
                             const KGEmbeddings* kg) const;

    RetrievalResult retrieve(std::string_view query, const RetrievalConfig& cfg, const Embedder& embedder,
                             const Gazetteer& gazetteer, const KGEmbeddings* kg) const;

private:
    std::size_t dim_;
    std::vector<std::shared_ptr<const DocumentRecord>> docs_;
    std::map<std::string, std::size_t, std::less<>> by_id_;
};

/// documents.jsonl: one {id, title, text, tags:[...]} object per line. Blank
/// lines skipped; errors carry the 1-based line number.
std::vector<DocumentFields> parse_documents_jsonl(std::istream& in);
std::vector<DocumentFields> load_documents_jsonl(const std::string& path);

}  // namespace lexroute
