#include <gtest/gtest.h>

#include <random>

#include "popgrid/pretrain.hpp"

using namespace popgrid;

namespace {

struct Data {
    GridStack stack;
    Grid labels;
};

Data separable(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    Grid g(32, 32, {{"s1", FeatureGroup::S1}, {"s2", FeatureGroup::S2}});
    Grid labels(32, 32, {{"label", FeatureGroup::AUX}});
    for (std::size_t p = 0; p < g.pixel_count(); ++p) {
        g.value(0, p) = u(rng);
        g.value(1, p) = u(rng);
        labels.value(0, p) = g.value(1, p) > 0.1f ? 1.0f : 0.0f;
    }
    return {{{g}, {"only"}}, labels};
}

double accuracy(const BranchParams& b, const Data& d, const FeatureConfig& fc) {
    const auto bands = feature_bands(d.stack.members[0], fc);
    std::vector<std::size_t> px(d.labels.pixel_count());
    for (std::size_t p = 0; p < px.size(); ++p) px[p] = p;
    const auto out = branch_forward(b, feature_matrix(d.stack.members[0], bands, 0, px)).output;
    std::size_t right = 0;
    for (std::size_t p = 0; p < px.size(); ++p) {
        if ((out(static_cast<Eigen::Index>(p)) > 0.5) == (d.labels.value(0, p) > 0.5f)) ++right;
    }
    return static_cast<double>(right) / static_cast<double>(px.size());
}

}  // namespace

TEST(Pretrain, SeparableLabels) {
    const Data d = separable(71);
    PretrainConfig cfg;
    cfg.epochs = 200;
    cfg.seed = 3;
    const auto r = pretrain_builtup(d.stack, d.labels, cfg);
    EXPECT_TRUE(r.branch.frozen);
    EXPECT_EQ(r.epoch_loss.size(), 200u);
    EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
    EXPECT_GT(accuracy(r.branch, d, cfg.features), 0.99);
}

TEST(Pretrain, ZeroEpochsReturnsInitialization) {
    const Data d = separable(72);
    PretrainConfig cfg;
    cfg.epochs = 0;
    cfg.seed = 9;
    const auto r = pretrain_builtup(d.stack, d.labels, cfg);
    BranchParams init = init_builtup_branch(2, cfg);
    std::vector<double> a;
    std::vector<double> b;
    r.branch.for_each([&](double v) { a.push_back(v); });
    init.for_each([&](double v) { b.push_back(v); });
    EXPECT_EQ(a, b);
    EXPECT_TRUE(r.epoch_loss.empty());
}

TEST(Pretrain, AllZeroLabels) {
    Data d = separable(73);
    for (auto& v : d.labels.values()) v = 0.0f;
    PretrainConfig cfg;
    cfg.epochs = 200;
    const auto r = pretrain_builtup(d.stack, d.labels, cfg);
    EXPECT_LT(r.branch.head_bias, 0.0);
    const auto bands = feature_bands(d.stack.members[0], cfg.features);
    std::vector<std::size_t> px(d.labels.pixel_count());
    for (std::size_t p = 0; p < px.size(); ++p) px[p] = p;
    EXPECT_LT(branch_forward(r.branch, feature_matrix(d.stack.members[0], bands, 0, px)).output.mean(), 0.01);
}

TEST(Pretrain, RejectsNonBinaryLabels) {
    Data d = separable(74);
    d.labels.value(0, 5) = 0.5f;
    PretrainConfig cfg;
    cfg.epochs = 1;
    EXPECT_THROW(pretrain_builtup(d.stack, d.labels, cfg), DataError);
    d.labels.set_valid(0, 5, false);
    EXPECT_NO_THROW(pretrain_builtup(d.stack, d.labels, cfg));
}

TEST(Pretrain, MisalignedLabelsThrow) {
    const Data d = separable(75);
    PretrainConfig cfg;
    cfg.epochs = 1;
    EXPECT_THROW(pretrain_builtup(d.stack, Grid(31, 32, {{"l", FeatureGroup::AUX}}), cfg), DataError);
}

TEST(Pretrain, Deterministic) {
    const Data d = separable(76);
    PretrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 4;
    const auto a = pretrain_builtup(d.stack, d.labels, cfg);
    const auto b = pretrain_builtup(d.stack, d.labels, cfg);
    EXPECT_EQ(a.epoch_loss, b.epoch_loss);
    EXPECT_EQ(a.branch.head_weight, b.branch.head_weight);
}
