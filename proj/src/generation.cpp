#include "lexroute/generation.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "lexroute/error.hpp"

namespace lexroute {

std::string ResponseDraft::text() const {
    std::string out;
    for (const auto& s : sentences) {
        if (!out.empty()) out.push_back(' ');
        out += s;
    }
    return out;
}

std::string ResponseDraft::rendered() const {
    std::string out = text();
    for (const auto& note : kg_notes) {
        out.push_back('\n');
        out += note;
    }
    return out;
}

namespace {

bool is_space(char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

std::string_view trim_view(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

}  // namespace

std::vector<std::string_view> split_sentences(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if ((c == '.' || c == '?' || c == '!') && i + 1 < text.size() && is_space(text[i + 1])) {
            auto s = trim_view(text.substr(start, i + 1 - start));
            if (!s.empty()) out.push_back(s);
            start = i + 1;
        }
    }
    auto tail = trim_view(text.substr(std::min(start, text.size())));
    if (!tail.empty()) out.push_back(tail);
    return out;
}

std::size_t count_tokens(std::string_view text) {
    std::size_t n = 0;
    bool in_token = false;
    for (char c : text) {
        if (is_space(c)) {
            in_token = false;
        } else if (!in_token) {
            in_token = true;
            ++n;
        }
    }
    return n;
}

ExtractiveMockBackend::ExtractiveMockBackend(std::shared_ptr<const Embedder> embedder, std::size_t sentences)
    : embedder_(std::move(embedder)), m_(sentences) {
    if (!embedder_) throw Error(ErrorCode::Configuration, "extractive backend needs an embedder");
    if (m_ == 0) throw Error(ErrorCode::Configuration, "extractive backend must emit at least one sentence");
}

ResponseDraft ExtractiveMockBackend::draft(const GenerationRequest& req) const {
    struct Candidate {
        double score;
        std::size_t doc;
        std::size_t sentence;
        std::string_view text;
    };
    const Vector q = embedder_->embed(req.query);
    std::vector<Candidate> candidates;
    for (std::size_t d = 0; d < req.documents.size(); ++d) {
        const auto& doc = req.documents[d].document;
        auto sentences = split_sentences(doc->text);
        for (std::size_t s = 0; s < sentences.size(); ++s) {
            candidates.push_back({cosine(embedder_->embed(sentences[s]), q), d, s, sentences[s]});
        }
    }
    std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.doc != b.doc) return a.doc < b.doc;
        return a.sentence < b.sentence;
    });

    ResponseDraft out;
    out.backend = name();
    const std::size_t n = std::min(m_, candidates.size());
    for (std::size_t i = 0; i < n; ++i) {
        out.citations.push_back({i, req.documents[candidates[i].doc].document->id});
        out.sentences.emplace_back(candidates[i].text);
    }
    for (const auto& t : req.kg_context) {
        out.kg_notes.push_back("per KG: " + t.head + " " + t.relation + " " + t.tail);
    }
    return out;
}

ExternalHttpBackend::ExternalHttpBackend(std::string url, std::chrono::milliseconds timeout,
                                         std::shared_ptr<HttpClient> client)
    : url_(std::move(url)), timeout_(timeout), client_(std::move(client)) {}

ResponseDraft ExternalHttpBackend::draft(const GenerationRequest& req) const {
    nlohmann::json body;
    body["query"] = req.query;
    body["max_tokens"] = req.max_tokens;
    body["documents"] = nlohmann::json::array();
    for (const auto& d : req.documents) {
        body["documents"].push_back(
            {{"id", d.document->id}, {"title", d.document->title}, {"text", d.document->text}, {"score", d.score}});
    }
    body["kg_context"] = nlohmann::json::array();
    for (const auto& t : req.kg_context) body["kg_context"].push_back({t.head, t.relation, t.tail});

    nlohmann::json reply = client_->post_json(url_, body, timeout_);
    ResponseDraft out;
    out.backend = name();
    try {
        if (!reply.is_object() || !reply.contains("sentences") || !reply["sentences"].is_array() ||
            (reply.contains("citations") && !reply["citations"].is_array())) {
            throw Error(ErrorCode::Backend, "malformed generator reply: expected sentences and citations arrays");
        }
        for (const auto& s : reply.at("sentences")) out.sentences.push_back(s.get<std::string>());
        if (reply.contains("citations")) {
            for (const auto& c : reply["citations"]) {
                out.citations.push_back({c.at("sentence").get<std::size_t>(), c.at("document_id").get<std::string>()});
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Backend, std::string("malformed generator reply: ") + e.what());
    }
    for (const auto& t : req.kg_context) {
        out.kg_notes.push_back("per KG: " + t.head + " " + t.relation + " " + t.tail);
    }
    return out;
}

namespace {

// Keeps whole sentences while they fit; if even the first sentence is too
// long it is cut after `budget` tokens, which leaves a verbatim prefix.
void enforce_token_budget(ResponseDraft& draft, std::size_t budget) {
    std::size_t used = 0;
    std::size_t keep = 0;
    for (; keep < draft.sentences.size(); ++keep) {
        std::size_t n = count_tokens(draft.sentences[keep]);
        if (used + n > budget) break;
        used += n;
    }
    if (keep == 0 && !draft.sentences.empty() && budget > 0) {
        std::string& s = draft.sentences.front();
        std::size_t tokens = 0;
        std::size_t i = 0;
        while (i < s.size()) {
            while (i < s.size() && is_space(s[i])) ++i;
            if (i >= s.size()) break;
            if (tokens == budget) break;
            while (i < s.size() && !is_space(s[i])) ++i;
            ++tokens;
        }
        s = std::string(trim_view(std::string_view(s).substr(0, i)));
        keep = 1;
    }
    draft.sentences.resize(keep);
    std::erase_if(draft.citations, [&](const Citation& c) { return c.sentence >= keep; });
}

}  // namespace

ResponseDraft generate(const GenerationRequest& req, const GenerationBackend& backend) {
    if (req.documents.empty() && !req.allow_ungrounded) {
        throw Error(ErrorCode::Grounding, "no retrieved documents and ungrounded generation is not allowed");
    }
    if (req.max_tokens == 0) throw Error(ErrorCode::Validation, "max_tokens must be positive");
    ResponseDraft draft = backend.draft(req);

    std::set<std::string> allowed;
    for (const auto& d : req.documents) allowed.insert(d.document->id);
    for (const auto& c : draft.citations) {
        if (!allowed.count(c.document_id)) {
            throw Error(ErrorCode::Grounding, "citation names document '" + c.document_id + "' outside the request");
        }
        if (c.sentence >= draft.sentences.size()) {
            throw Error(ErrorCode::Backend, "citation points past the last sentence");
        }
    }
    enforce_token_budget(draft, req.max_tokens);

    std::vector<bool> cited(draft.sentences.size(), false);
    for (const auto& c : draft.citations) cited[c.sentence] = true;
    draft.grounded = !draft.sentences.empty() && std::all_of(cited.begin(), cited.end(), [](bool b) { return b; });
    return draft;
}

}  // namespace lexroute
