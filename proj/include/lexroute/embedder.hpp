#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

#include "lexroute/http_client.hpp"
#include "lexroute/vector.hpp"

namespace lexroute {

/// Text -> Vector. Implementations report a fixed output dimension; a
/// deterministic embedder must be a pure function of its input.
class Embedder {
public:
    virtual ~Embedder() = default;

    virtual std::string name() const = 0;
    virtual std::size_t dim() const = 0;
    virtual bool deterministic() const = 0;
    virtual Vector embed(std::string_view text) const = 0;
};

/// Hashed character n-gram count embedder (unsigned buckets). Text is lowercased, runs of
/// whitespace collapse to a single space and the result is padded with one
/// space on each side before n-grams are counted into `dim` buckets. Output
/// is unit-norm for nonempty text and the zero vector for empty text.
class HashEmbedder final : public Embedder {
public:
    static constexpr std::size_t kDefaultDim = 256;

    explicit HashEmbedder(std::size_t dim = kDefaultDim, std::size_t ngram = 3, std::uint64_t seed = 0);

    std::string name() const override { return "hash"; }
    std::size_t dim() const override { return dim_; }
    bool deterministic() const override { return true; }
    Vector embed(std::string_view text) const override;

    std::size_t ngram() const { return ngram_; }
    std::uint64_t seed() const { return seed_; }

private:
    std::size_t dim_;
    std::size_t ngram_;
    std::uint64_t seed_;
};

/// Adapter for an external embedding service (e.g. a LegalBERT server).
/// Request: {"text": ...}; reply: {"vector": [...]} of the declared dim.
/// Any transport problem propagates as an error; no fallback vector.
class HttpEmbedder final : public Embedder {
public:
    HttpEmbedder(std::string url, std::size_t dim, std::chrono::milliseconds timeout,
                 std::shared_ptr<HttpClient> client = make_default_http_client());

    std::string name() const override { return "http"; }
    std::size_t dim() const override { return dim_; }
    bool deterministic() const override { return false; }
    Vector embed(std::string_view text) const override;

    const std::string& url() const { return url_; }
    std::chrono::milliseconds timeout() const { return timeout_; }

private:
    std::string url_;
    std::size_t dim_;
    std::chrono::milliseconds timeout_;
    std::shared_ptr<HttpClient> client_;
};

/// Lowercase ASCII and collapse whitespace runs to single spaces; trims ends.
std::string fold_text(std::string_view text);

}  // namespace lexroute
