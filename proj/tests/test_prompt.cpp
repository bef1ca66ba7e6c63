#include <doctest.h>

#include "prime/prompt.hpp"
#include "prime/errors.hpp"

using namespace prime;

TEST_CASE("tagged caption splits into clean words and object indices") {
    auto [words, idx] = parse_tagged_prompt("a cartoon animation of a <ref> white fox <ref> in the forest");
    CHECK(words == std::vector<std::string>{"a", "cartoon", "animation", "of", "a", "white", "fox", "in",
                                            "the", "forest"});
    CHECK(idx == std::vector<int>{5, 6});
}

TEST_CASE("untagged caption has no object indices") {
    auto [words, idx] = parse_tagged_prompt("a dog");
    CHECK(words == std::vector<std::string>{"a", "dog"});
    CHECK(idx.empty());
}

TEST_CASE("multiple spans union their indices after tag removal") {
    auto [words, idx] = parse_tagged_prompt("<ref> cat <ref> and <ref> hat <ref>");
    CHECK(words == std::vector<std::string>{"cat", "and", "hat"});
    CHECK(idx == std::vector<int>{0, 2});
}

TEST_CASE("tags glued to words still delimit spans") {
    auto [words, idx] = parse_tagged_prompt("a <ref>white fox<ref> here");
    CHECK(words == std::vector<std::string>{"a", "white", "fox", "here"});
    CHECK(idx == std::vector<int>{1, 2});
}

TEST_CASE("odd tag count is an unbalanced-tag error") {
    CHECK_THROWS_AS(parse_tagged_prompt("a <ref> fox"), parse_error);
}

TEST_CASE("empty span is rejected") {
    CHECK_THROWS_AS(parse_tagged_prompt("a <ref> <ref> fox"), parse_error);
}

TEST_CASE("tag removal never reorders or drops non-tag words") {
    const std::string tagged = "one <ref> two three <ref> four <ref> five <ref> six";
    const std::string untagged = "one two three four five six";
    auto [w1, idx] = parse_tagged_prompt(tagged);
    auto [w2, none] = parse_tagged_prompt(untagged);
    CHECK(w1 == w2);
    CHECK(none.empty());
    for (int i : idx) {
        CHECK(i >= 0);
        CHECK(i < static_cast<int>(w1.size()));
    }
}

TEST_CASE("tokenize looks up ids with case folding and unknown fallback") {
    Vocabulary v = Vocabulary::from_lines({"<unk>", "a", "dog"});
    CHECK(tokenize({"a", "dog"}, v) == std::vector<int>{1, 2});
    CHECK(tokenize({"zebra"}, v) == std::vector<int>{0});
    CHECK(tokenize({"Dog"}, v) == std::vector<int>{2});
}

TEST_CASE("empty vocabulary is a configuration error") {
    CHECK_THROWS_AS(Vocabulary::from_lines({}), config_error);
}

TEST_CASE("embed is a pure function of tokens and seed") {
    const std::vector<int> toks{3, 1, 4};
    TextEmbedding a = embed(toks, 8, 42);
    TextEmbedding b = embed(toks, 8, 42);
    CHECK(a.matrix == b.matrix);
    CHECK(a.p == 3);
    CHECK(a.d_ctx == 8);

    TextEmbedding c = embed(toks, 8, 43);
    CHECK(a.matrix != c.matrix);
}

TEST_CASE("embed of an empty token list is a 0-row matrix") {
    TextEmbedding e = embed({}, 8, 1);
    CHECK(e.p == 0);
    CHECK(e.matrix.rows() == 0);
    CHECK(e.matrix.cols() == 8);
}

TEST_CASE("embed row depends on token id and position") {
    TextEmbedding ab = embed({1, 2}, 8, 5);
    TextEmbedding ba = embed({2, 1}, 8, 5);
    CHECK(ab.matrix != ba.matrix);
    // same token at different positions embeds differently
    TextEmbedding aa = embed({1, 1}, 8, 5);
    CHECK(aa.matrix.row(0) != aa.matrix.row(1));
}

TEST_CASE("make_prompt_spec threads indices through tokenization") {
    Vocabulary v = Vocabulary::builtin();
    PromptSpec spec = make_prompt_spec("a <ref> white fox <ref> in the forest", v);
    CHECK(spec.p() == 6);
    CHECK(spec.object_token_indices == std::vector<int>{1, 2});
    CHECK(spec.tokens[1] == v.lookup("white"));
    CHECK(spec.tokens[2] == v.lookup("fox"));
}
