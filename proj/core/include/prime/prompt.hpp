#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace prime {

// One token per line; id = line number; id 0 reserved for the unknown token.
struct Vocabulary {
    std::vector<std::string> tokens;
    std::unordered_map<std::string, int> index;

    static Vocabulary from_lines(std::vector<std::string> lines);
    static Vocabulary from_file(const std::string& path);
    static Vocabulary builtin();

    int lookup(const std::string& word) const; // lower-cased miss -> 0
    size_t size() const { return tokens.size(); }
};

// Token-id sequence plus the positions of object-specific tokens.
struct PromptSpec {
    std::vector<int> tokens;
    std::vector<int> object_token_indices; // sorted, subset of [0, tokens.size())
    std::string raw_text;

    int p() const { return static_cast<int>(tokens.size()); }
};

struct TextEmbedding {
    int p = 0;
    int d_ctx = 0;
    Eigen::MatrixXf matrix; // p x d_ctx

    static TextEmbedding empty(int d_ctx) { return TextEmbedding{0, d_ctx, Eigen::MatrixXf(0, d_ctx)}; }
};

// Splits a <ref>-tagged caption into clean words and the index set of words
// that sat strictly between tag pairs. Tags pair greedily left-to-right; the
// same 5-character sequence opens and closes a span.
std::pair<std::vector<std::string>, std::vector<int>> parse_tagged_prompt(const std::string& text);

std::vector<int> tokenize(const std::vector<std::string>& words, const Vocabulary& vocab);

PromptSpec make_prompt_spec(const std::string& text, const Vocabulary& vocab);

// Deterministic stand-in for a text encoder: row i is a pseudo-random vector
// keyed by (token id, position, seed). Equal inputs give bitwise-equal output.
TextEmbedding embed(const std::vector<int>& tokens, int d_ctx, uint64_t seed);

} // namespace prime
