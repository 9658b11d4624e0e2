#include <gtest/gtest.h>

#include "popgrid/synth.hpp"

using namespace popgrid;

namespace {

WorldConfig small(std::uint64_t seed) {
    WorldConfig c;
    c.width = 48;
    c.height = 40;
    c.n_regions = 20;
    c.n_blobs = 10;
    c.blob_sigma_max = 5.0;
    c.seed = seed;
    return c;
}

}  // namespace

TEST(Synth, CensusMatchesTruth) {
    const World w = generate_world(small(1));
    const auto sums = zonal_sum(w.truth_population, w.regions);
    ASSERT_EQ(sums.size(), w.census.entries.size());
    double truth_total = 0.0;
    for (const auto& [id, z] : sums) {
        truth_total += z.sum;
        EXPECT_LE(std::fabs(w.census.entries.at(id) - z.sum), 1e-9 * std::max(1.0, z.sum));
    }
    EXPECT_LE(std::fabs(w.census.total() - truth_total), 1e-9 * truth_total);
    EXPECT_EQ(w.regions.ids().size(), 20u);
    for (auto id : w.regions.ids()) EXPECT_TRUE(id >= 1 && id <= 20);
}

TEST(Synth, PopulationIsBuiltupTimesOccupancy) {
    const World w = generate_world(small(2));
    for (std::size_t p = 0; p < w.truth_population.pixel_count(); ++p) {
        const float b = w.truth_builtup.value(0, p);
        const float o = w.truth_occupancy.value(0, p);
        EXPECT_EQ(w.truth_population.value(0, p), b * o);
        EXPECT_GE(b, 0.0f);
        EXPECT_LE(b, 1.0f);
        EXPECT_GE(o, 2.0f);
        EXPECT_LE(o, 12.0f);
        EXPECT_EQ(w.builtup_labels.value(0, p), b > 0.5f ? 1.0f : 0.0f);
    }
}

TEST(Synth, Layout) {
    const World w = generate_world(small(3));
    ASSERT_EQ(w.inputs.members.size(), 4u);
    EXPECT_EQ(w.inputs.timestamps, (std::vector<std::string>{"spring", "summer", "autumn", "winter"}));
    const Grid& g = w.inputs.members[0];
    ASSERT_EQ(g.band_count(), 6u);
    EXPECT_EQ(g.band_info(0).name, "S1_0");
    EXPECT_EQ(g.band_info(0).group, FeatureGroup::S1);
    EXPECT_EQ(g.band_info(5).name, "S2_3");
    EXPECT_EQ(g.band_info(5).group, FeatureGroup::S2);
    EXPECT_TRUE(w.regions.aligned_with(w.truth_population));
    EXPECT_EQ(g.transform().pixel_size_x, 10.0);
}

TEST(Synth, NoiseFreeMembersAreIdentical) {
    WorldConfig c = small(4);
    c.noise_sigma = 0.0;
    const World w = generate_world(c);
    for (std::size_t m = 1; m < w.inputs.members.size(); ++m) EXPECT_EQ(w.inputs.members[m].values(), w.inputs.members[0].values());
    const World n = generate_world(small(4));
    EXPECT_NE(n.inputs.members[1].values(), n.inputs.members[0].values());
}

TEST(Synth, Deterministic) {
    const World a = generate_world(small(5));
    const World b = generate_world(small(5));
    EXPECT_EQ(a.truth_population, b.truth_population);
    EXPECT_EQ(a.inputs.members[3], b.inputs.members[3]);
    EXPECT_EQ(a.regions.indices, b.regions.indices);
    EXPECT_EQ(a.census.entries, b.census.entries);
    const World c = generate_world(small(6));
    EXPECT_NE(a.truth_population, c.truth_population);
}

TEST(Synth, RejectsBadConfig) {
    WorldConfig c = small(0);
    c.n_regions = 0;
    EXPECT_THROW(generate_world(c), DataError);
    c = small(0);
    c.noise_sigma = -1.0;
    EXPECT_THROW(generate_world(c), DataError);
    c = small(0);
    c.members = 0;
    EXPECT_THROW(generate_world(c), DataError);
}

TEST(Coarsen, IdentityTarget) {
    const World w = generate_world(small(7));
    const auto c = coarsen_census(w.regions, w.census, 20);
    EXPECT_EQ(c.census.entries, w.census.entries);
    EXPECT_EQ(c.map.indices, w.regions.indices);
    EXPECT_TRUE(c.log.empty());
}

TEST(Coarsen, ConservesTotalExactly) {
    const World w = generate_world(small(8));
    for (std::size_t target : {16u, 8u, 3u, 1u}) {
        const auto c = coarsen_census(w.regions, w.census, target);
        EXPECT_EQ(c.census.entries.size(), target);
        EXPECT_EQ(c.map.ids().size(), target);
        EXPECT_EQ(c.census.total(), w.census.total());
        // each merged entry is the zonal sum of the truth over its new region
        for (const auto& [id, z] : zonal_sum(w.truth_population, c.map)) {
            EXPECT_LE(std::fabs(c.census.entries.at(id) - z.sum), 1e-9 * std::max(1.0, z.sum));
        }
    }
}

TEST(Coarsen, ScheduleChainOnLargerWorld) {
    WorldConfig cfg;
    cfg.width = 96;
    cfg.height = 96;
    cfg.n_regions = 600;
    cfg.n_blobs = 20;
    cfg.seed = 9;
    const World w = generate_world(cfg);
    RegionMap map = w.regions;
    CensusTable census = w.census;
    const double total = census.total();
    for (std::size_t target : default_coarsening_schedule()) {
        auto c = coarsen_census(map, census, target);
        EXPECT_EQ(c.census.entries.size(), target);
        EXPECT_EQ(c.census.total(), total);
        map = std::move(c.map);
        census = std::move(c.census);
    }
}

TEST(Coarsen, UnknownRegionThrows) {
    const World w = generate_world(small(10));
    CensusTable extra = w.census;
    extra.entries[999] = 1.0;
    EXPECT_THROW(coarsen_census(w.regions, extra, 5), DataError);
}

TEST(Synth, QuantumKeepsSumsExact) {
    const double q = exact_sum_quantum(1e6);
    EXPECT_EQ(std::log2(q), std::floor(std::log2(q)));
    double a = quantize(123.456789, q);
    double b = quantize(98765.4321, q);
    EXPECT_EQ((a + b) - b, a);
}
