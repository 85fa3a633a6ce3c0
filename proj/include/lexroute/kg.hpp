#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace lexroute {

struct Triple {
    std::string head;
    std::string relation;
    std::string tail;

    friend auto operator<=>(const Triple&, const Triple&) = default;
};

std::string to_string(const Triple& t);

/// Indexed (h, r, t) over a KnowledgeGraph's vocabularies.
struct TripleIndex {
    std::uint32_t head;
    std::uint32_t relation;
    std::uint32_t tail;

    friend auto operator<=>(const TripleIndex&, const TripleIndex&) = default;
};

/// Deduplicated triple store with entity and relation vocabularies. Ids are
/// interned in first-seen order, which fixes the TransE parameter layout.
class KnowledgeGraph {
public:
    std::uint32_t register_entity(const std::string& id);
    std::uint32_t register_relation(const std::string& id);

    /// Adds one triple, returns true if it was new. Empty ids throw Validation.
    bool add(const Triple& t);

    std::size_t entity_count() const { return entities_.size(); }
    std::size_t relation_count() const { return relations_.size(); }
    std::size_t triple_count() const { return triples_.size(); }

    const std::vector<std::string>& entities() const { return entities_; }
    const std::vector<std::string>& relations() const { return relations_; }
    const std::vector<TripleIndex>& indexed_triples() const { return triples_; }
    std::vector<Triple> triples() const;

    std::optional<std::uint32_t> entity_index(std::string_view id) const;
    std::optional<std::uint32_t> relation_index(std::string_view id) const;
    bool contains(const TripleIndex& t) const { return triple_set_.count(t) > 0; }

    friend bool operator==(const KnowledgeGraph& a, const KnowledgeGraph& b) {
        return a.entities_ == b.entities_ && a.relations_ == b.relations_ && a.triples_ == b.triples_;
    }

private:
    std::vector<std::string> entities_;
    std::vector<std::string> relations_;
    std::unordered_map<std::string, std::uint32_t> entity_ids_;
    std::unordered_map<std::string, std::uint32_t> relation_ids_;
    std::vector<TripleIndex> triples_;
    std::set<TripleIndex> triple_set_;
};

struct IngestReport {
    std::size_t lines_read = 0;
    std::size_t triples_seen = 0;
    std::size_t new_triples = 0;
};

/// Parses triples.tsv (head \t relation \t tail, `#` comments and blank lines
/// skipped) and adds the triples to `graph`. The whole input is validated
/// before anything is inserted: a bad line throws Parse/Validation naming
/// the 1-based line number and leaves the graph untouched.
IngestReport ingest_triples(std::istream& in, KnowledgeGraph& graph);
IngestReport ingest_triples_file(const std::string& path, KnowledgeGraph& graph);

void export_triples(std::ostream& out, const KnowledgeGraph& graph);

enum class CaseFolding { Fold, Exact };

/// Surface form -> entity id dictionary used for linking.
class Gazetteer {
public:
    explicit Gazetteer(CaseFolding folding = CaseFolding::Fold) : folding_(folding) {}

    /// Throws Validation on an empty alias or an alias already bound to a
    /// different entity.
    void add_alias(const std::string& entity_id, const std::string& alias);

    bool empty() const { return aliases_.empty(); }
    std::size_t size() const { return aliases_.size(); }
    CaseFolding folding() const { return folding_; }
    std::string fold(std::string_view s) const;

    /// Folded alias -> entity id.
    const std::map<std::string, std::string>& aliases() const { return aliases_; }
    std::set<std::string> entity_ids() const;

    /// gazetteer.json: [{"entity_id": ..., "aliases": [...]}, ...]
    static Gazetteer from_json(const nlohmann::json& j, CaseFolding folding = CaseFolding::Fold);
    static Gazetteer load(const std::string& path, CaseFolding folding = CaseFolding::Fold);
    nlohmann::json to_json() const;

private:
    CaseFolding folding_;
    std::map<std::string, std::string> aliases_;
    std::map<std::string, std::vector<std::string>> by_entity_;  // original spellings
};

struct EntityMention {
    std::string entity_id;
    std::size_t begin = 0;  // byte offsets into the source text
    std::size_t end = 0;

    friend bool operator==(const EntityMention&, const EntityMention&) = default;
};

struct EntityLinkSet {
    std::string source_id;
    std::vector<EntityMention> mentions;  // ordered by begin offset

    /// Distinct linked entity ids, sorted.
    std::vector<std::string> entities() const;
    bool empty() const { return mentions.empty(); }

    friend bool operator==(const EntityLinkSet&, const EntityLinkSet&) = default;
};

/// Gazetteer lookup with longest-match-first, non-overlapping spans. Matches
/// must sit on word boundaries. Longer aliases claim text before shorter
/// ones; among equal lengths the leftmost wins.
EntityLinkSet link_entities(std::string_view text, const Gazetteer& gazetteer, std::string source_id = {});

struct RelationPattern {
    std::string relation;
    std::vector<std::string> phrases;
};

/// The relation phrases named for legal text: cites, applies to,
/// overruled by, related to.
std::vector<RelationPattern> default_relation_patterns();

/// Emits (h, r, t) for every pair of adjacent linked mentions whose gap text
/// contains a relation phrase on word boundaries and no sentence terminator.
/// Result is deduplicated in first-seen order.
std::vector<Triple> extract_triples_pattern(std::string_view text, const Gazetteer& gazetteer,
                                            const std::vector<RelationPattern>& patterns);

}  // namespace lexroute
