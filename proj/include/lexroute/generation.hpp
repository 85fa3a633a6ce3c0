#pragma once

#include <chrono>
#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "lexroute/embedder.hpp"
#include "lexroute/http_client.hpp"
#include "lexroute/kg.hpp"
#include "lexroute/retriever.hpp"

namespace lexroute {

struct GenerationRequest {
    std::string query;
    std::vector<ScoredDocument> documents;
    std::vector<Triple> kg_context;
    std::size_t max_tokens = 256;
    bool allow_ungrounded = false;
};

struct Citation {
    std::size_t sentence = 0;
    std::string document_id;

    friend bool operator==(const Citation&, const Citation&) = default;
};

struct ResponseDraft {
    std::vector<std::string> sentences;
    std::vector<Citation> citations;
    std::vector<std::string> kg_notes;  // "per KG: h r t"
    std::string backend;
    bool grounded = false;

    /// Sentences joined by single spaces.
    std::string text() const;
    /// text() followed by the KG notes, one per line.
    std::string rendered() const;

    friend bool operator==(const ResponseDraft&, const ResponseDraft&) = default;
};

class GenerationBackend {
public:
    virtual ~GenerationBackend() = default;
    virtual std::string name() const = 0;
    virtual ResponseDraft draft(const GenerationRequest& req) const = 0;
};

/// Splits on '.', '?' or '!' followed by whitespace. Returned views point
/// into `text`, are whitespace-trimmed, keep their terminator, and are never
/// empty.
std::vector<std::string_view> split_sentences(std::string_view text);

/// Deterministic extractive generator: ranks every sentence of every
/// document by cosine to the query embedding and emits the best `m`,
/// each cited to its source document.
class ExtractiveMockBackend final : public GenerationBackend {
public:
    explicit ExtractiveMockBackend(std::shared_ptr<const Embedder> embedder, std::size_t sentences = 3);

    std::string name() const override { return "extractive_mock"; }
    ResponseDraft draft(const GenerationRequest& req) const override;

    std::size_t sentences() const { return m_; }

private:
    std::shared_ptr<const Embedder> embedder_;
    std::size_t m_;
};

/// Forwards the request as JSON to an external generator.
/// Request:  {query, documents:[{id, title, text, score}], kg_context:[[h,r,t]], max_tokens}
/// Reply:    {sentences:[...], citations:[{sentence, document_id}]}
class ExternalHttpBackend final : public GenerationBackend {
public:
    ExternalHttpBackend(std::string url, std::chrono::milliseconds timeout,
                        std::shared_ptr<HttpClient> client = make_default_http_client());

    std::string name() const override { return "external_http"; }
    ResponseDraft draft(const GenerationRequest& req) const override;

private:
    std::string url_;
    std::chrono::milliseconds timeout_;
    std::shared_ptr<HttpClient> client_;
};

/// Runs a backend under the generation contract: refuses an empty document
/// set unless ungrounded generation is allowed, checks citations only name
/// documents in the request, enforces max_tokens and sets `grounded`.
ResponseDraft generate(const GenerationRequest& req, const GenerationBackend& backend);

std::size_t count_tokens(std::string_view text);

}  // namespace lexroute
