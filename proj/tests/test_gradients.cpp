#include <gtest/gtest.h>

#include "gradcheck.hpp"

using namespace popgrid;

namespace {

void run(Variant v, bool large, std::uint64_t seed, int n) {
    std::mt19937_64 rng(seed);
    for (int i = 0; i < n; ++i) {
        const auto r = gradcheck::check_random(rng, v, large);
        EXPECT_LT(r.max_rel_error, gradcheck::kTolerance) << r.description;
        EXPECT_TRUE(r.frozen_grad_zero) << r.description;
        EXPECT_GT(r.components, 0u);
    }
}

}  // namespace

TEST(Gradients, FactoredSmall) { run(Variant::factored, false, 1, 12); }
TEST(Gradients, DirectSmall) { run(Variant::direct, false, 2, 12); }
TEST(Gradients, ExternalSmall) { run(Variant::external_weights, false, 3, 12); }
TEST(Gradients, FactoredWide) { run(Variant::factored, true, 4, 2); }
TEST(Gradients, DirectWide) { run(Variant::direct, true, 5, 2); }

TEST(Gradients, ZeroExternalWeightsGiveZeroOccupancyGradient) {
    Grid g(3, 2, {{"a", FeatureGroup::S2}, {"external_weight", FeatureGroup::AUX}});
    for (std::size_t p = 0; p < 6; ++p) g.value(0, p) = static_cast<float>(p);
    FeatureConfig fc;
    fc.groups = {FeatureGroup::S2};
    PredictorParams p = make_predictor(Variant::external_weights, g, fc, 1, std::nullopt, "external_weight");
    p.occupancy.head_weight.setConstant(0.3);
    const Eigen::MatrixXd x = feature_matrix(g, feature_bands(g, fc), 0, std::vector<std::size_t>{0, 1, 2});
    const Eigen::RowVectorXd w = Eigen::RowVectorXd::Zero(3);
    const RegionItem item{1, 5.0, &x, &w, 3};
    Gradients grad = Gradients::zeros_like(p);
    region_objective(p, std::span<const RegionItem>(&item, 1), 0.01, &grad);
    EXPECT_EQ(flatten_gradients(p, grad).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Gradients, AbsSubgradientAtZeroIsZero) {
    Grid g(2, 1, {{"a", FeatureGroup::S2}});
    FeatureConfig fc;
    fc.groups = {FeatureGroup::S2};
    PredictorParams p = make_predictor(Variant::direct, g, fc, 1);
    p.occupancy.head_bias = inverse_softplus(3.0);
    const Eigen::MatrixXd x = feature_matrix(g, feature_bands(g, fc), 0, std::vector<std::size_t>{0, 1});
    const double sum = forward_pixels(p, x).population.sum();
    EXPECT_NEAR(sum, 6.0, 1e-12);
    // census equal to the prediction and no sparsity: only the |.| kink remains
    const RegionItem item{1, sum, &x, nullptr, 2};
    Gradients grad = Gradients::zeros_like(p);
    const auto t = region_objective(p, std::span<const RegionItem>(&item, 1), 0.0, &grad);
    EXPECT_EQ(t.total, 0.0);
    EXPECT_EQ(flatten_gradients(p, grad).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(log_l1_derivative(4.0, 4.0), 0.0);
}

TEST(Gradients, BackwardWithoutCacheThrows) {
    Grid g(2, 1, {{"a", FeatureGroup::S2}});
    FeatureConfig fc;
    fc.groups = {FeatureGroup::S2};
    const PredictorParams p = make_predictor(Variant::direct, g, fc, 1);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(1, 2);
    Gradients grad = Gradients::zeros_like(p);
    EXPECT_THROW(backward(p, x, ForwardCache{}, Eigen::RowVectorXd::Ones(2), grad), DataError);
}
