#include "lexroute/kg.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "lexroute/embedder.hpp"
#include "lexroute/error.hpp"

namespace lexroute {

std::string to_string(const Triple& t) {
    return "(" + t.head + ", " + t.relation + ", " + t.tail + ")";
}

std::uint32_t KnowledgeGraph::register_entity(const std::string& id) {
    if (id.empty()) throw Error(ErrorCode::Validation, "empty entity id");
    auto [it, inserted] = entity_ids_.emplace(id, static_cast<std::uint32_t>(entities_.size()));
    if (inserted) entities_.push_back(id);
    return it->second;
}

std::uint32_t KnowledgeGraph::register_relation(const std::string& id) {
    if (id.empty()) throw Error(ErrorCode::Validation, "empty relation id");
    auto [it, inserted] = relation_ids_.emplace(id, static_cast<std::uint32_t>(relations_.size()));
    if (inserted) relations_.push_back(id);
    return it->second;
}

bool KnowledgeGraph::add(const Triple& t) {
    if (t.head.empty() || t.relation.empty() || t.tail.empty()) {
        throw Error(ErrorCode::Validation, "triple has an empty field: " + to_string(t));
    }
    TripleIndex idx{register_entity(t.head), register_relation(t.relation), register_entity(t.tail)};
    if (!triple_set_.insert(idx).second) return false;
    triples_.push_back(idx);
    return true;
}

std::vector<Triple> KnowledgeGraph::triples() const {
    std::vector<Triple> out;
    out.reserve(triples_.size());
    for (const auto& t : triples_) {
        out.push_back({entities_[t.head], relations_[t.relation], entities_[t.tail]});
    }
    return out;
}

std::optional<std::uint32_t> KnowledgeGraph::entity_index(std::string_view id) const {
    auto it = entity_ids_.find(std::string(id));
    if (it == entity_ids_.end()) return std::nullopt;
    return it->second;
}

std::optional<std::uint32_t> KnowledgeGraph::relation_index(std::string_view id) const {
    auto it = relation_ids_.find(std::string(id));
    if (it == relation_ids_.end()) return std::nullopt;
    return it->second;
}

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

}  // namespace

IngestReport ingest_triples(std::istream& in, KnowledgeGraph& graph) {
    IngestReport report;
    std::vector<Triple> parsed;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string stripped = trim(line);
        if (stripped.empty() || stripped.front() == '#') continue;
        std::vector<std::string> cols;
        std::size_t start = 0;
        for (;;) {
            std::size_t tab = line.find('\t', start);
            cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (cols.size() != 3) {
            throw Error(ErrorCode::Parse, "triples line " + std::to_string(lineno) + ": expected 3 tab-separated columns, got " +
                                              std::to_string(cols.size()));
        }
        Triple t{trim(cols[0]), trim(cols[1]), trim(cols[2])};
        if (t.head.empty() || t.relation.empty() || t.tail.empty()) {
            throw Error(ErrorCode::Validation, "triples line " + std::to_string(lineno) + ": empty field");
        }
        parsed.push_back(std::move(t));
    }
    report.lines_read = lineno;
    report.triples_seen = parsed.size();
    for (const auto& t : parsed) {
        if (graph.add(t)) ++report.new_triples;
    }
    return report;
}

IngestReport ingest_triples_file(const std::string& path, KnowledgeGraph& graph) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open triples file: " + path);
    return ingest_triples(in, graph);
}

void export_triples(std::ostream& out, const KnowledgeGraph& graph) {
    for (const auto& t : graph.triples()) {
        out << t.head << '\t' << t.relation << '\t' << t.tail << '\n';
    }
}

// ---------------------------------------------------------------------------

std::string Gazetteer::fold(std::string_view s) const {
    return folding_ == CaseFolding::Fold ? fold_text(s) : std::string(s);
}

void Gazetteer::add_alias(const std::string& entity_id, const std::string& alias) {
    if (entity_id.empty()) throw Error(ErrorCode::Validation, "gazetteer entry has empty entity_id");
    std::string key = fold(alias);
    if (trim(key).empty()) throw Error(ErrorCode::Validation, "empty alias for entity " + entity_id);
    auto [it, inserted] = aliases_.emplace(key, entity_id);
    if (!inserted && it->second != entity_id) {
        throw Error(ErrorCode::Validation,
                    "alias '" + alias + "' maps to both " + it->second + " and " + entity_id);
    }
    if (inserted) by_entity_[entity_id].push_back(alias);
}

std::set<std::string> Gazetteer::entity_ids() const {
    std::set<std::string> ids;
    for (const auto& [alias, id] : aliases_) ids.insert(id);
    return ids;
}

Gazetteer Gazetteer::from_json(const nlohmann::json& j, CaseFolding folding) {
    if (!j.is_array()) throw Error(ErrorCode::Parse, "gazetteer must be a JSON array");
    Gazetteer g(folding);
    std::size_t i = 0;
    for (const auto& entry : j) {
        if (!entry.is_object() || !entry.contains("entity_id") || !entry["entity_id"].is_string() ||
            !entry.contains("aliases") || !entry["aliases"].is_array()) {
            throw Error(ErrorCode::Parse, "gazetteer entry " + std::to_string(i) + " needs entity_id and aliases[]");
        }
        const auto id = entry["entity_id"].get<std::string>();
        if (entry["aliases"].empty()) {
            throw Error(ErrorCode::Validation, "gazetteer entry " + id + " has no aliases");
        }
        for (const auto& a : entry["aliases"]) {
            if (!a.is_string()) throw Error(ErrorCode::Parse, "non-string alias for " + id);
            g.add_alias(id, a.get<std::string>());
        }
        ++i;
    }
    return g;
}

Gazetteer Gazetteer::load(const std::string& path, CaseFolding folding) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open gazetteer: " + path);
    try {
        return from_json(nlohmann::json::parse(in), folding);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Parse, "gazetteer " + path + ": " + e.what());
    }
}

nlohmann::json Gazetteer::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [id, spellings] : by_entity_) {
        arr.push_back({{"entity_id", id}, {"aliases", spellings}});
    }
    return arr;
}

std::vector<std::string> EntityLinkSet::entities() const {
    std::vector<std::string> ids;
    for (const auto& m : mentions) ids.push_back(m.entity_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

namespace {

// Folded text plus the source byte offset of every folded character.
struct FoldedText {
    std::string text;
    std::vector<std::size_t> origin;
};

FoldedText fold_with_offsets(std::string_view src, CaseFolding folding) {
    FoldedText f;
    if (folding == CaseFolding::Exact) {
        f.text.assign(src);
        f.origin.resize(src.size());
        for (std::size_t i = 0; i < src.size(); ++i) f.origin[i] = i;
        return f;
    }
    bool pending_space = false;
    std::size_t space_at = 0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        unsigned char c = static_cast<unsigned char>(src[i]);
        if (std::isspace(c)) {
            if (!f.text.empty() && !pending_space) {
                pending_space = true;
                space_at = i;
            }
            continue;
        }
        if (pending_space) {
            f.text.push_back(' ');
            f.origin.push_back(space_at);
            pending_space = false;
        }
        f.text.push_back(static_cast<char>(std::tolower(c)));
        f.origin.push_back(i);
    }
    return f;
}

bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

bool on_word_boundary(const std::string& s, std::size_t begin, std::size_t end) {
    bool left_ok = begin == 0 || !is_word_char(s[begin - 1]) || !is_word_char(s[begin]);
    bool right_ok = end >= s.size() || !is_word_char(s[end]) || !is_word_char(s[end - 1]);
    return left_ok && right_ok;
}

struct Candidate {
    std::size_t begin;
    std::size_t end;
    const std::string* entity;
};

}  // namespace

EntityLinkSet link_entities(std::string_view text, const Gazetteer& gazetteer, std::string source_id) {
    EntityLinkSet out;
    out.source_id = std::move(source_id);
    if (gazetteer.empty() || text.empty()) return out;

    FoldedText folded = fold_with_offsets(text, gazetteer.folding());
    std::vector<Candidate> candidates;
    for (const auto& [alias, entity] : gazetteer.aliases()) {
        std::size_t pos = folded.text.find(alias);
        while (pos != std::string::npos) {
            std::size_t end = pos + alias.size();
            if (on_word_boundary(folded.text, pos, end)) candidates.push_back({pos, end, &entity});
            pos = folded.text.find(alias, pos + 1);
        }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        std::size_t la = a.end - a.begin, lb = b.end - b.begin;
        if (la != lb) return la > lb;
        if (a.begin != b.begin) return a.begin < b.begin;
        return *a.entity < *b.entity;
    });

    std::vector<bool> taken(folded.text.size(), false);
    std::vector<Candidate> chosen;
    for (const auto& c : candidates) {
        bool free = true;
        for (std::size_t i = c.begin; i < c.end && free; ++i) free = !taken[i];
        if (!free) continue;
        for (std::size_t i = c.begin; i < c.end; ++i) taken[i] = true;
        chosen.push_back(c);
    }
    std::sort(chosen.begin(), chosen.end(), [](const Candidate& a, const Candidate& b) { return a.begin < b.begin; });
    for (const auto& c : chosen) {
        out.mentions.push_back({*c.entity, folded.origin[c.begin], folded.origin[c.end - 1] + 1});
    }
    return out;
}

std::vector<RelationPattern> default_relation_patterns() {
    return {
        {"cites", {"cites", "cited", "citing"}},
        {"applies_to", {"applies to", "apply to", "applied to", "applies in"}},
        {"overruled_by", {"overruled by", "was overruled by"}},
        {"related_to", {"related to", "relates to"}},
    };
}

namespace {

bool contains_phrase(const std::string& haystack, const std::string& phrase) {
    std::size_t pos = haystack.find(phrase);
    while (pos != std::string::npos) {
        if (on_word_boundary(haystack, pos, pos + phrase.size())) return true;
        pos = haystack.find(phrase, pos + 1);
    }
    return false;
}

}  // namespace

std::vector<Triple> extract_triples_pattern(std::string_view text, const Gazetteer& gazetteer,
                                            const std::vector<RelationPattern>& patterns) {
    std::vector<Triple> out;
    EntityLinkSet links = link_entities(text, gazetteer);
    const auto& m = links.mentions;
    for (std::size_t i = 0; i + 1 < m.size(); ++i) {
        std::string_view gap = text.substr(m[i].end, m[i + 1].begin - m[i].end);
        if (gap.find_first_of(".?!;") != std::string_view::npos) continue;
        std::string folded_gap = fold_text(gap);
        for (const auto& pattern : patterns) {
            bool hit = std::any_of(pattern.phrases.begin(), pattern.phrases.end(), [&](const std::string& p) {
                return contains_phrase(folded_gap, fold_text(p));
            });
            if (!hit) continue;
            Triple t{m[i].entity_id, pattern.relation, m[i + 1].entity_id};
            if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(std::move(t));
            break;
        }
    }
    return out;
}

}  // namespace lexroute
