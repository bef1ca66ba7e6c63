#include <doctest.h>

#include "prime/guidance.hpp"
#include "support.hpp"

using namespace prime;

namespace {

LatentImage constant(float v) { return LatentImage(1, 2, 2, v); }

} // namespace

TEST_CASE("equal branches cancel: extended CFG returns eps(null)") {
    auto g = testsup::rng(1);
    LatentImage e = testsup::random_latent(g, 2, 3, 3);
    LatentImage out = extended_cfg(e, e, e, e, 2.5f);
    CHECK(out.data == e.data);
}

TEST_CASE("inert infusion reduces extended CFG to standard CFG bitwise") {
    auto g = testsup::rng(2);
    LatentImage a = testsup::random_latent(g, 2, 3, 3);
    LatentImage b = testsup::random_latent(g, 2, 3, 3);
    for (float s : {2.5f, 5.0f}) {
        LatentImage ext = extended_cfg(a, b, a, b, s); // eps(c,f)=eps(c)=b, eps(f)=eps(null)=a
        LatentImage std_ = standard_cfg(a, b, s);
        CHECK(ext.data == std_.data);
    }
}

TEST_CASE("scalar stub arithmetic matches the formula at s=2.5") {
    LatentImage out = extended_cfg(constant(0.0f), constant(1.0f), constant(0.5f), constant(0.5f), 2.5f);
    for (float v : out.data) CHECK(v == doctest::Approx(2.5f));
}

TEST_CASE("standard CFG identities") {
    auto g = testsup::rng(3);
    LatentImage a = testsup::random_latent(g, 2, 3, 3);
    SUBCASE("equal branches collapse to eps(null)") {
        LatentImage out = standard_cfg(a, a, 7.0f);
        CHECK(out.data == a.data);
    }
    SUBCASE("s=1 returns eps(c) exactly") {
        LatentImage b = testsup::random_latent(g, 2, 3, 3);
        LatentImage out = standard_cfg(a, b, 1.0f);
        for (size_t i = 0; i < out.data.size(); ++i)
            CHECK(std::abs(out.data[i] - b.data[i]) <= 1e-6f);
    }
    SUBCASE("scalar stubs at s=5") {
        LatentImage out = standard_cfg(constant(0.0f), constant(1.0f), 5.0f);
        for (float v : out.data) CHECK(v == 5.0f);
    }
}

TEST_CASE("guided update is exactly homogeneous in s") {
    auto g = testsup::rng(4);
    LatentImage zero(2, 3, 3, 0.0f);
    LatentImage cf = testsup::random_latent(g, 2, 3, 3);
    LatentImage f = testsup::random_latent(g, 2, 3, 3);
    LatentImage c = testsup::random_latent(g, 2, 3, 3);
    // with eps(null)=0 the update is s*g exactly, and doubling 2.5*g rounds
    // identically to 5*g (scaling by a power of two is exact)
    LatentImage at25 = extended_cfg(zero, cf, f, c, 2.5f);
    LatentImage at5 = extended_cfg(zero, cf, f, c, 5.0f);
    for (size_t i = 0; i < zero.data.size(); ++i) {
        CHECK(2.0f * at25.data[i] == at5.data[i]);
    }

    // general eps(null): proportionality within float rounding
    LatentImage n = testsup::random_latent(g, 2, 3, 3);
    LatentImage b25 = extended_cfg(n, cf, f, c, 2.5f);
    LatentImage b5 = extended_cfg(n, cf, f, c, 5.0f);
    for (size_t i = 0; i < n.data.size(); ++i) {
        CHECK(std::abs(2.0 * (double(b25.data[i]) - n.data[i]) -
                       (double(b5.data[i]) - n.data[i])) <= 1e-5);
    }
}

TEST_CASE("shape mismatches raise dimension errors") {
    LatentImage a(1, 2, 2), b(1, 2, 3);
    CHECK_THROWS_AS(extended_cfg(a, b, a, a, 1.0f), dimension_error);
    CHECK_THROWS_AS(standard_cfg(a, b, 1.0f), dimension_error);
}

TEST_CASE("saliency of identical branches is identically zero") {
    auto g = testsup::rng(5);
    LatentImage e = testsup::random_latent(g, 3, 4, 4);
    SaliencyMap map = saliency_map(e, e);
    for (float v : map.values) CHECK(v == 0.0f);
}

TEST_CASE("saliency is local to the differing cell") {
    LatentImage a(2, 3, 3, 0.0f);
    LatentImage b = a;
    b.at(0, 1, 2) = 3.0f;
    b.at(1, 1, 2) = 4.0f;
    SaliencyMap map = saliency_map(b, a);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) {
            const float want = (y == 1 && x == 2) ? 5.0f : 0.0f; // sqrt(9+16)
            CHECK(std::abs(map.values[y * 3 + x] - want) <= 1e-7f);
        }
}

TEST_CASE("averaging two maps is the cellwise mean") {
    SaliencyMap m1{2, 2, {1.0f, 2.0f, 3.0f, 4.0f}};
    SaliencyMap m2{2, 2, {3.0f, 2.0f, 1.0f, 0.0f}};
    SaliencyMap avg = average_saliency({m1, m2});
    CHECK(avg.values == std::vector<float>{2.0f, 2.0f, 2.0f, 2.0f});
}

TEST_CASE("averaging an empty step set is a domain error") {
    CHECK_THROWS_AS(average_saliency({}), domain_error);
}

TEST_CASE("rescale_unit maps the range onto [0,1] and reports it") {
    SaliencyMap m{1, 3, {2.0f, 6.0f, 4.0f}};
    auto [mn, mx] = rescale_unit(m);
    CHECK(mn == 2.0f);
    CHECK(mx == 6.0f);
    CHECK(m.values == std::vector<float>{0.0f, 1.0f, 0.5f});
}

TEST_CASE("guidance config validates the scale") {
    GuidanceConfig cfg;
    cfg.scale = 0.0f;
    CHECK_THROWS_AS(cfg.validate(), config_error);
}
