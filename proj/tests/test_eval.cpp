#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "popgrid/eval.hpp"

using namespace popgrid;

TEST(Metrics, IdentityIsPerfect) {
    const std::vector<double> t{1, 4, 2, 8};
    const auto r = metrics(t, t);
    EXPECT_EQ(r.r2, 1.0);
    EXPECT_EQ(r.mae, 0.0);
    EXPECT_EQ(r.rmse, 0.0);
    EXPECT_EQ(r.n, 4u);
}

TEST(Metrics, MeanPredictionScoresZero) {
    const std::vector<double> t{1, 2, 3, 6};
    const std::vector<double> p(4, 3.0);
    EXPECT_NEAR(metrics(t, p).r2, 0.0, 1e-15);
}

TEST(Metrics, HandCase) {
    const auto r = metrics(std::vector<double>{0, 2, 4}, std::vector<double>{1, 2, 3});
    EXPECT_EQ(r.r2, 0.75);
    EXPECT_DOUBLE_EQ(r.mae, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.rmse, std::sqrt(2.0 / 3.0));
    const auto q = metrics(std::vector<double>{0, 2, 4, 6}, std::vector<double>{1, 2, 3, 6});
    EXPECT_DOUBLE_EQ(q.r2, 0.9);
    EXPECT_DOUBLE_EQ(q.mae, 0.5);
    EXPECT_DOUBLE_EQ(q.rmse, std::sqrt(0.5));
}

TEST(Metrics, RandomVectorsAgainstOracle) {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(-100.0, 100.0);
    std::uniform_int_distribution<int> len(2, 300);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> t(static_cast<std::size_t>(len(rng)));
        std::vector<double> p(t.size());
        for (auto& v : t) v = u(rng);
        for (auto& v : p) v = u(rng);
        const auto got = metrics(t, p);
        const auto want = oracle::metrics(t, p);
        EXPECT_NEAR(got.r2, want.r2, 1e-12 * std::max(1.0, std::fabs(want.r2)));
        EXPECT_NEAR(got.mae, want.mae, 1e-12 * want.mae);
        EXPECT_NEAR(got.rmse, want.rmse, 1e-12 * want.rmse);
        EXPECT_LE(got.mae, got.rmse * (1 + 1e-15));
        EXPECT_LE(got.r2, 1.0);
    }
}

TEST(Metrics, JointTranslationLeavesScoresUnchanged) {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    std::vector<double> t(50), p(50), t2(50), p2(50);
    for (std::size_t i = 0; i < 50; ++i) {
        t[i] = u(rng);
        p[i] = u(rng);
        t2[i] = t[i] + 7.0;
        p2[i] = p[i] + 7.0;
    }
    const auto a = metrics(t, p);
    const auto b = metrics(t2, p2);
    EXPECT_NEAR(a.r2, b.r2, 1e-12);
    EXPECT_NEAR(a.mae, b.mae, 1e-12);
    EXPECT_NEAR(a.rmse, b.rmse, 1e-12);
}

TEST(Metrics, Errors) {
    const std::vector<double> a{1, 2};
    EXPECT_THROW(metrics(a, std::vector<double>{1}), DataError);
    EXPECT_THROW(metrics(std::vector<double>{1}, std::vector<double>{1}), DataError);
    EXPECT_THROW(metrics(std::vector<double>{3, 3}, std::vector<double>{1, 2}), DataError);
}

namespace {

GridD positive(std::mt19937_64& rng, std::size_t w, std::size_t h, double invalid) {
    GridD g(w, h, {{"population", FeatureGroup::AUX}}, {0, 0, 10, 10});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t p = 0; p < g.pixel_count(); ++p) {
        g.values()[p] = 20.0 * u(rng);
        g.mask()[p] = u(rng) < invalid ? 0 : 1;
    }
    return g;
}

}  // namespace

TEST(EvaluateGrid, BlockOracle) {
    std::mt19937_64 rng(43);
    const GridD pred = positive(rng, 40, 30, 0.1);
    const GridD truth = positive(rng, 40, 30, 0.1);
    std::vector<double> tv, pv;
    for (std::size_t br = 0; br < 3; ++br) {
        for (std::size_t bc = 0; bc < 4; ++bc) {
            double ts = 0, ps = 0;
            bool tany = false, pany = false;
            for (std::size_t r = br * 10; r < br * 10 + 10; ++r) {
                for (std::size_t c = bc * 10; c < bc * 10 + 10; ++c) {
                    const std::size_t p = r * 40 + c;
                    if (truth.valid(0, p)) ts += truth.value(0, p), tany = true;
                    if (pred.valid(0, p)) ps += pred.value(0, p), pany = true;
                }
            }
            if (tany && pany) {
                tv.push_back(ts);
                pv.push_back(ps);
            }
        }
    }
    const auto got = evaluate_grid(pred, truth, 10);
    const auto want = oracle::metrics(tv, pv);
    EXPECT_EQ(got.n, tv.size());
    EXPECT_NEAR(got.r2, want.r2, 1e-12);
    EXPECT_NEAR(got.rmse, want.rmse, 1e-9);
    EXPECT_EQ(got.unit, "100x100 cell");
}

TEST(EvaluateGrid, ComposesWithBlockAggregate) {
    std::mt19937_64 rng(44);
    const GridD pred = positive(rng, 20, 20, 0.0);
    const GridD truth = positive(rng, 20, 20, 0.0);
    const auto direct = evaluate_grid(pred, truth, 10);
    const auto staged = evaluate_grid(block_aggregate(pred, 5), block_aggregate(truth, 5), 2);
    EXPECT_NEAR(direct.r2, staged.r2, 1e-12);
    EXPECT_NEAR(direct.mae, staged.mae, 1e-9);
}

TEST(EvaluateGrid, Errors) {
    std::mt19937_64 rng(45);
    GridD a = positive(rng, 4, 4, 0.0);
    GridD b = positive(rng, 4, 4, 0.0);
    for (std::size_t p = 0; p < 16; ++p) (p < 8 ? a : b).mask()[p] = 0;
    EXPECT_THROW(evaluate_grid(a, b, 1), DataError);
    EXPECT_THROW(evaluate_grid(a, positive(rng, 4, 5, 0.0), 1), DataError);
    EXPECT_THROW(evaluate_grid(b, b, 3), DataError);
}

TEST(EvaluateBlocks, ExactPredictionAndComposition) {
    std::mt19937_64 rng(46);
    const GridD pred = positive(rng, 12, 8, 0.0);
    RegionMap blocks(12, 8, {0, 0, 10, 10});
    for (std::size_t p = 0; p < 96; ++p) blocks.indices[p] = static_cast<std::uint32_t>((p % 12) / 3 + 4 * (p / 48));
    CensusTable exact;
    for (const auto& [id, z] : zonal_sum(pred, blocks)) exact.entries[id] = z.sum;
    const auto r = evaluate_blocks(pred, blocks, exact);
    EXPECT_EQ(r.r2, 1.0);
    EXPECT_EQ(r.n, 8u);
    EXPECT_EQ(r.unit, "census block");

    CensusTable noisy = exact;
    std::vector<double> tv, pv;
    for (auto& [id, c] : noisy.entries) {
        pv.push_back(c);
        c *= 1.1 + 0.01 * id;
        tv.push_back(c);
    }
    const auto q = evaluate_blocks(pred, blocks, noisy);
    EXPECT_NEAR(q.r2, oracle::metrics(tv, pv).r2, 1e-12);
}

TEST(EvaluateBlocks, MatchesGridEvaluationOnSquareBlocks) {
    std::mt19937_64 rng(47);
    const GridD pred = positive(rng, 8, 8, 0.0);
    const GridD truth = positive(rng, 8, 8, 0.0);
    RegionMap blocks(8, 8, {0, 0, 10, 10});
    for (std::size_t p = 0; p < 64; ++p) blocks.indices[p] = static_cast<std::uint32_t>((p % 8) / 4 + 2 * ((p / 8) / 4));
    CensusTable table;
    for (const auto& [id, z] : zonal_sum(truth, blocks)) table.entries[id] = z.sum;
    EXPECT_NEAR(evaluate_blocks(pred, blocks, table).r2, evaluate_grid(pred, truth, 4).r2, 1e-12);
}

TEST(EvaluateBlocks, Errors) {
    std::mt19937_64 rng(48);
    const GridD pred = positive(rng, 4, 1, 0.0);
    RegionMap one(4, 1, {}, 1);
    EXPECT_THROW(evaluate_blocks(pred, one, CensusTable{{{1, 3.0}}, ""}), DataError);
    RegionMap two(4, 1, {});
    two.indices = {1, 1, 2, 2};
    EXPECT_THROW(evaluate_blocks(pred, two, CensusTable{{{1, 3.0}}, ""}), DataError);
}

TEST(Scatter, FloorBinning) {
    const std::vector<double> t{0.1, 2.0, 0.0};
    const std::vector<double> p{3.0, 0.4, 0.7};
    EXPECT_EQ(scatter_export(t, p, 0.5), "truth,pred\n0.5,3\n2,0.5\n0.5,0.7\n");
    EXPECT_EQ(scatter_export(t, p, 0.0), "truth,pred\n0.1,3\n2,0.4\n0,0.7\n");
    EXPECT_THROW(scatter_export(t, std::vector<double>{1}, 0.5), DataError);
}
