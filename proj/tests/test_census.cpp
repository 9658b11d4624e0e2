#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "popgrid/census.hpp"

using namespace popgrid;

TEST(Zonal, TwoByTwo) {
    Grid g(2, 2, {{"p", FeatureGroup::AUX}});
    g.values() = {1, 2, 3, 4};
    RegionMap m(2, 2, {});
    m.indices = {0, 0, 1, 1};
    const auto z = zonal_sum(g, m);
    EXPECT_EQ(z.at(0).sum, 3.0);
    EXPECT_EQ(z.at(1).sum, 7.0);
    EXPECT_FALSE(z.at(0).empty());
}

TEST(Zonal, AllInvalidIsFlaggedEmpty) {
    Grid g(2, 2, {{"p", FeatureGroup::AUX}}, {}, 5.0f, false);
    RegionMap m(2, 2, {});
    m.indices = {0, 0, 1, 1};
    for (const auto& [id, z] : zonal_sum(g, m)) {
        EXPECT_EQ(z.sum, 0.0);
        EXPECT_TRUE(z.empty());
    }
}

TEST(Zonal, Misaligned) {
    Grid g(2, 2, {{"p", FeatureGroup::AUX}});
    EXPECT_THROW(zonal_sum(g, RegionMap(3, 2, {})), DataError);
    EXPECT_THROW(zonal_sum(g, RegionMap(2, 2, {0, 0, 2, 1})), DataError);
}

TEST(Zonal, MatchesLoopOracleAndIsAdditive) {
    std::mt19937_64 rng(31);
    const Grid g = oracle::random_grid(rng, 64, 64, {{"p", FeatureGroup::AUX}}, 0.2);
    RegionMap m(64, 64, {});
    std::uniform_int_distribution<std::uint32_t> id(0, 5);
    for (auto& v : m.indices) {
        v = id(rng);
        if (v == 5) v = kNoRegion;
    }
    const auto z = zonal_sum(g, m);
    std::map<std::uint32_t, double> want;
    double in_regions = 0.0;
    for (std::size_t p = 0; p < m.indices.size(); ++p) {
        if (m.indices[p] == kNoRegion || !g.valid(0, p)) continue;
        want[m.indices[p]] += g.value(0, p);
        in_regions += g.value(0, p);
    }
    double total = 0.0;
    for (const auto& [k, v] : want) {
        EXPECT_NEAR(z.at(k).sum, v, 1e-9);
        total += z.at(k).sum;
    }
    EXPECT_NEAR(total, in_regions, 1e-12 * std::max(1.0, std::fabs(in_regions)));

    RegionMap one(64, 64, {}, 0);
    double global = 0.0;
    for (std::size_t p = 0; p < g.pixel_count(); ++p) {
        if (g.valid(0, p)) global += g.value(0, p);
    }
    EXPECT_NEAR(zonal_sum(g, one).at(0).sum, global, 1e-12 * std::fabs(global));
}

TEST(Difficulty, TableOneCountries) {
    const auto rw = difficulty(83.0 * 83.0, 1.0, 381);
    EXPECT_NEAR(rw.difficulty, 18.08, 0.01);
    EXPECT_LE(std::fabs(rw.difficulty - 18.0), 0.6);
    const auto ch = difficulty(42.0 * 42.0, 1.0, 2318);
    EXPECT_NEAR(ch.difficulty, 0.761, 0.001);
    EXPECT_LE(std::fabs(ch.difficulty - 0.8), 0.6);
    EXPECT_EQ(difficulty(7.0, 1.0, 7).difficulty, 1.0);
}

TEST(Difficulty, Preconditions) {
    EXPECT_THROW(difficulty(0.0, 1.0, 1), DataError);
    EXPECT_THROW(difficulty(1.0, -1.0, 1), DataError);
    EXPECT_THROW(difficulty(1.0, 1.0, 0), DataError);
}

TEST(Difficulty, FromMapUsesMeanArea) {
    // 2 regions of 100 and 300 pixels at 10 m: mean area 20000 m^2 = 2 ha
    RegionMap m(20, 20, {0, 200, 10, 10});
    for (std::size_t p = 0; p < 400; ++p) m.indices[p] = p < 100 ? 1 : 2;
    const auto d = difficulty_of(m);
    EXPECT_DOUBLE_EQ(d.upscaling, 2.0);
    EXPECT_EQ(d.n_regions, 2u);
    EXPECT_DOUBLE_EQ(d.difficulty, 1.0);
}

TEST(CensusCsv, Parse) {
    const auto t = parse_census_csv("region_id,count\n3,10.5");
    ASSERT_EQ(t.entries.size(), 1u);
    EXPECT_EQ(t.entries.at(3), 10.5);
    EXPECT_EQ(parse_census_csv("region_id,count\r\n1,2\r\n\r\n4,0\r\n").entries.size(), 2u);
}

TEST(CensusCsv, Errors) {
    auto msg = [](const std::string& text) {
        try {
            parse_census_csv(text);
        } catch (const Error& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    EXPECT_NE(msg("region_id,count\n3,-1").find("negative count"), std::string::npos);
    EXPECT_NE(msg("region_id,count\n3,1\n3,2").find("duplicate region_id"), std::string::npos);
    EXPECT_NE(msg("region_id,count\n3;1").find("malformed row"), std::string::npos);
    EXPECT_NE(msg("region_id,count\nx,1").find("malformed row"), std::string::npos);
    EXPECT_NE(msg("region_id,count\n1,2,3").find("malformed row"), std::string::npos);
    EXPECT_NE(msg("id,count\n1,2").find("header"), std::string::npos);
    EXPECT_NE(msg("region_id,count\n4294967295,1").find("malformed row"), std::string::npos);
}

TEST(CensusCsv, WriteReadRoundTrip) {
    CensusTable t;
    t.entries = {{1, 0.1}, {2, 12355930.0}, {7, 1.0 / 3.0}};
    const auto path = std::filesystem::temp_directory_path() / "popgrid_test_census.csv";
    write_census_csv(t, path);
    EXPECT_EQ(load_census_csv(path).entries, t.entries);
    EXPECT_EQ(t.total(), 0.1 + 12355930.0 + 1.0 / 3.0);
}
