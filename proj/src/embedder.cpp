#include "lexroute/embedder.hpp"

#include <cctype>
#include <cmath>

#include "lexroute/error.hpp"

namespace lexroute {
namespace {

// FNV-1a with the seed folded into the offset basis.
std::uint64_t hash_gram(std::string_view gram, std::uint64_t seed) {
    std::uint64_t h = 1469598103934665603ULL ^ (seed * 0x9E3779B97F4A7C15ULL);
    for (unsigned char c : gram) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    // final avalanche so low bits depend on every byte
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    return h;
}

}  // namespace

std::string fold_text(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

HashEmbedder::HashEmbedder(std::size_t dim, std::size_t ngram, std::uint64_t seed)
    : dim_(dim), ngram_(ngram), seed_(seed) {
    if (dim_ == 0) throw Error(ErrorCode::Configuration, "embedder dim must be positive");
    if (ngram_ == 0) throw Error(ErrorCode::Configuration, "n-gram order must be positive");
}

Vector HashEmbedder::embed(std::string_view text) const {
    std::string folded = fold_text(text);
    std::vector<double> counts(dim_, 0.0);
    if (folded.empty()) return Vector(std::move(counts));

    std::string padded = " " + folded + " ";
    if (padded.size() <= ngram_) {
        counts[hash_gram(padded, seed_) % dim_] += 1.0;
    } else {
        std::string_view view(padded);
        for (std::size_t i = 0; i + ngram_ <= view.size(); ++i) {
            counts[hash_gram(view.substr(i, ngram_), seed_) % dim_] += 1.0;
        }
    }
    double n = 0.0;
    for (double c : counts) n += c * c;
    n = std::sqrt(n);
    for (double& c : counts) c /= n;
    return Vector(std::move(counts));
}

HttpEmbedder::HttpEmbedder(std::string url, std::size_t dim, std::chrono::milliseconds timeout,
                           std::shared_ptr<HttpClient> client)
    : url_(std::move(url)), dim_(dim), timeout_(timeout), client_(std::move(client)) {
    if (dim_ == 0) throw Error(ErrorCode::Configuration, "embedder dim must be positive");
}

Vector HttpEmbedder::embed(std::string_view text) const {
    nlohmann::json reply = client_->post_json(url_, {{"text", std::string(text)}}, timeout_);
    if (!reply.contains("vector") || !reply["vector"].is_array()) {
        throw Error(ErrorCode::Backend, "embedding reply missing 'vector' array");
    }
    std::vector<double> values;
    values.reserve(dim_);
    for (const auto& x : reply["vector"]) {
        if (!x.is_number()) throw Error(ErrorCode::Backend, "embedding reply has non-numeric component");
        values.push_back(x.get<double>());
    }
    if (values.size() != dim_) {
        throw Error(ErrorCode::Dimension, "embedding service returned dim " + std::to_string(values.size()) +
                                              ", expected " + std::to_string(dim_));
    }
    return Vector(std::move(values));
}

}  // namespace lexroute
