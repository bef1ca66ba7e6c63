#include "prime/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "prime/detail/rng.hpp"
#include "prime/errors.hpp"

namespace prime {

namespace {

const char* kRefTag = "<ref>";

std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

// Words that made up the default vocabulary: tag-benchmark captions plus a
// pool of common scene/object words so arbitrary demo prompts mostly resolve.
const char* kBuiltinVocab[] = {
    "<unk>", "a", "an", "the", "of", "in", "on", "at", "and", "with", "over", "under",
    "cartoon", "animation", "painting", "oil", "sketch", "sketching", "photo", "photorealism",
    "white", "black", "red", "green", "blue", "yellow", "orange", "purple", "brown", "gray",
    "fox", "dog", "cat", "hat", "bird", "horse", "tortoise", "turtle", "lemon", "apple",
    "car", "boat", "house", "building", "tree", "forest", "mountain", "lake", "river", "sky",
    "beach", "field", "grass", "snow", "road", "city", "street", "table", "chair", "cup",
    "square", "circle", "triangle", "box", "ball", "shape", "object", "background", "scene",
    "sitting", "standing", "flying", "running", "floating", "small", "large", "bright", "dark",
};

} // namespace

Vocabulary Vocabulary::from_lines(std::vector<std::string> lines) {
    if (lines.empty()) throw config_error("vocabulary is empty (line 0 must be the unknown token)");
    Vocabulary v;
    v.tokens = std::move(lines);
    for (size_t i = 0; i < v.tokens.size(); ++i) {
        v.index.emplace(to_lower(v.tokens[i]), static_cast<int>(i));
    }
    return v;
}

Vocabulary Vocabulary::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open vocabulary file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    if (lines.empty()) throw config_error("vocabulary file is empty: " + path);
    return from_lines(std::move(lines));
}

Vocabulary Vocabulary::builtin() {
    std::vector<std::string> lines(std::begin(kBuiltinVocab), std::end(kBuiltinVocab));
    return from_lines(std::move(lines));
}

int Vocabulary::lookup(const std::string& word) const {
    auto it = index.find(to_lower(word));
    return it == index.end() ? 0 : it->second;
}

std::pair<std::vector<std::string>, std::vector<int>> parse_tagged_prompt(const std::string& text) {
    // Pass 1: whitespace-split into raw tokens, keeping tags as their own tokens.
    std::vector<std::string> raw;
    {
        std::istringstream ss(text);
        std::string w;
        while (ss >> w) {
            // A tag glued to a word ("<ref>fox") still delimits a span.
            size_t pos = 0;
            while (true) {
                size_t tag = w.find(kRefTag, pos);
                if (tag == std::string::npos) {
                    if (pos < w.size()) raw.push_back(w.substr(pos));
                    break;
                }
                if (tag > pos) raw.push_back(w.substr(pos, tag - pos));
                raw.push_back(kRefTag);
                pos = tag + 5;
            }
        }
    }

    std::vector<std::string> words;
    std::vector<int> object_indices;
    bool open = false;
    int span_words = 0;
    for (const auto& tok : raw) {
        if (tok == kRefTag) {
            if (open && span_words == 0) throw parse_error("empty <ref> span in prompt");
            open = !open;
            span_words = 0;
            continue;
        }
        if (open) {
            object_indices.push_back(static_cast<int>(words.size()));
            ++span_words;
        }
        words.push_back(tok);
    }
    if (open) throw parse_error("unbalanced <ref> tags in prompt");
    return {std::move(words), std::move(object_indices)};
}

std::vector<int> tokenize(const std::vector<std::string>& words, const Vocabulary& vocab) {
    if (vocab.size() == 0) throw config_error("tokenize called with empty vocabulary");
    std::vector<int> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(vocab.lookup(w));
    return ids;
}

PromptSpec make_prompt_spec(const std::string& text, const Vocabulary& vocab) {
    auto [words, indices] = parse_tagged_prompt(text);
    PromptSpec spec;
    spec.raw_text = text;
    spec.tokens = tokenize(words, vocab);
    spec.object_token_indices = std::move(indices);
    return spec;
}

TextEmbedding embed(const std::vector<int>& tokens, int d_ctx, uint64_t seed) {
    if (d_ctx < 1) throw config_error("embed: d_ctx must be >= 1");
    TextEmbedding out;
    out.p = static_cast<int>(tokens.size());
    out.d_ctx = d_ctx;
    out.matrix.resize(out.p, d_ctx);
    const float scale = 1.0f / std::sqrt(static_cast<float>(d_ctx));
    for (int i = 0; i < out.p; ++i) {
        auto rng = detail::seeded_rng(seed, detail::hash_combine(static_cast<uint64_t>(tokens[i]) + 1,
                                                                 static_cast<uint64_t>(i)));
        std::normal_distribution<float> dist(0.0f, 1.0f);
        for (int j = 0; j < d_ctx; ++j) out.matrix(i, j) = dist(rng) * scale;
    }
    return out;
}

} // namespace prime
