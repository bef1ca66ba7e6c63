#include <doctest.h>

#include "prime/types.hpp"
#include "support.hpp"

using namespace prime;

TEST_CASE("downsample_mask saturates an all-ones mask") {
    BinaryMask m(4, 4, 1);
    BinaryMask d = downsample_mask(m, 2);
    CHECK(d.height == 2);
    CHECK(d.width == 2);
    CHECK(d.popcount() == 4);
}

TEST_CASE("downsample_mask keeps a single hot cell in its block") {
    BinaryMask m(4, 4, 0);
    m.at(0, 0) = 1;
    BinaryMask d = downsample_mask(m, 2);
    CHECK(d.at(0, 0) == 1);
    CHECK(d.popcount() == 1);
}

TEST_CASE("downsample_mask OR-pools a checkerboard to all-ones") {
    // oracle: enumerate each 2x2 block; every block contains a 1
    BinaryMask m(4, 4, 0);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) m.at(y, x) = (x + y) % 2;
    for (int by = 0; by < 2; ++by)
        for (int bx = 0; bx < 2; ++bx) {
            int any = 0;
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) any |= m.at(by * 2 + dy, bx * 2 + dx);
            CHECK(any == 1);
        }
    BinaryMask d = downsample_mask(m, 2);
    CHECK(d.popcount() == 4);
}

TEST_CASE("downsample_mask rejects non-divisible factors") {
    BinaryMask m(4, 6, 1);
    CHECK_THROWS_AS(downsample_mask(m, 4), dimension_error);
}

TEST_CASE("segment of an empty mask is empty; of a full mask is everything") {
    auto g = testsup::rng(7);
    LatentImage z = testsup::random_latent(g, 3, 4, 4);
    CHECK(segment(z, BinaryMask(4, 4, 0)).count() == 0);
    ObjectSlice full = segment(z, BinaryMask(4, 4, 1));
    CHECK(full.count() == 16);
    // raster order: position (y,x) -> slice row y*w+x
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c) CHECK(full.values[(y * 4 + x) * 3 + c] == z.at(c, y, x));
}

TEST_CASE("segment picks exactly the masked cell") {
    // 2x2 latent with distinct values; mask hot at (1,0) -> flattened index 2
    LatentImage z(2, 2, 2);
    for (int i = 0; i < 8; ++i) z.data[i] = static_cast<float>(i);
    BinaryMask m(2, 2, 0);
    m.at(1, 0) = 1;
    ObjectSlice s = segment(z, m);
    REQUIRE(s.count() == 1);
    CHECK(s.values[0] == z.at(0, 1, 0));
    CHECK(s.values[1] == z.at(1, 1, 0));
}

TEST_CASE("segment rejects shape mismatch") {
    LatentImage z(3, 4, 4);
    CHECK_THROWS_AS(segment(z, BinaryMask(2, 2, 1)), dimension_error);
}

TEST_CASE("scatter round-trips segment bitwise for random shapes") {
    auto g = testsup::rng(11);
    for (int it = 0; it < 50; ++it) {
        LatentImage z = testsup::random_latent(g, 2, 6, 6);
        BinaryMask m = testsup::random_mask(g, 6, 6);
        LatentImage back = scatter(segment(z, m), m, z);
        CHECK(back.data == z.data);
    }
}

TEST_CASE("scatter with empty slice and empty mask is the base") {
    auto g = testsup::rng(13);
    LatentImage base = testsup::random_latent(g, 3, 4, 4);
    LatentImage out = scatter(ObjectSlice{}, BinaryMask(4, 4, 0), base);
    CHECK(out.data == base.data);
}

TEST_CASE("scatter replaces a single cell") {
    LatentImage base(1, 2, 2, 0.0f);
    BinaryMask m(2, 2, 0);
    m.at(0, 1) = 1;
    ObjectSlice s;
    s.channels = 1;
    s.values = {5.0f};
    LatentImage out = scatter(s, m, base);
    CHECK(out.at(0, 0, 1) == 5.0f);
    CHECK(out.at(0, 0, 0) == 0.0f);
    CHECK(out.at(0, 1, 0) == 0.0f);
    CHECK(out.at(0, 1, 1) == 0.0f);
}

TEST_CASE("scatter rejects slice length mismatch") {
    LatentImage base(1, 2, 2);
    BinaryMask m(2, 2, 1);
    ObjectSlice s;
    s.channels = 1;
    s.values = {1.0f};
    CHECK_THROWS_AS(scatter(s, m, base), dimension_error);
}

TEST_CASE("downsampling preserves containment") {
    auto g = testsup::rng(17);
    for (int it = 0; it < 50; ++it) {
        BinaryMask outer = testsup::random_mask(g, 8, 8, 0.5);
        BinaryMask inner = outer;
        std::bernoulli_distribution keep(0.5);
        for (auto& b : inner.bits)
            if (b && !keep(g)) b = 0;
        REQUIRE(mask_contained(inner, outer));
        CHECK(mask_contained(downsample_mask(inner, 2), downsample_mask(outer, 2)));
        CHECK(mask_contained(downsample_mask(inner, 4), downsample_mask(outer, 4)));
    }
}

TEST_CASE("token index map is strictly increasing with popcount length") {
    auto g = testsup::rng(19);
    for (int it = 0; it < 20; ++it) {
        BinaryMask m = testsup::random_mask(g, 8, 8);
        for (int f : {1, 2}) {
            BinaryMask d = downsample_mask(m, f);
            TokenIndexMap map = build_token_index_map(d);
            CHECK(map.n() == static_cast<int>(d.popcount()));
            for (size_t i = 1; i < map.object_positions.size(); ++i)
                CHECK(map.object_positions[i] > map.object_positions[i - 1]);
            for (int pos : map.object_positions) CHECK(pos < d.height * d.width);
        }
    }
}

TEST_CASE("mask validation rejects non-binary cells") {
    BinaryMask m(2, 2, 0);
    m.bits[1] = 2;
    CHECK_THROWS_AS(m.validate(), validation_error);
}

TEST_CASE("pixel image validation enforces [0,1] and finiteness") {
    PixelImage img(2, 2, 3, 0.5f);
    img.validate();
    img.data[0] = 1.5f;
    CHECK_THROWS_AS(img.validate(), validation_error);
    img.data[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(img.validate(), validation_error);
}
