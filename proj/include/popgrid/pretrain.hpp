#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "popgrid/error.hpp"
#include "popgrid/grid.hpp"
#include "popgrid/optim.hpp"
#include "popgrid/predictor.hpp"

namespace popgrid {

struct PretrainConfig {
    std::size_t epochs = 200;
    double lr = 1e-3;
    std::size_t batch_pixels = 256;
    std::size_t pixels_per_epoch = 0;  // 0: every labeled pixel
    std::uint64_t seed = 0;
    std::vector<std::size_t> widths{64, 64};
    FeatureConfig features;
};

inline BranchParams init_builtup_branch(std::size_t input_dim, const PretrainConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    return init_branch(input_dim, cfg.widths, HeadActivation::sigmoid, rng, 1.0);
}

struct PretrainResult {
    BranchParams branch;
    std::vector<double> epoch_loss;  // mean binary cross-entropy per epoch
};

// Fits the sigmoid built-up branch to binary labels (band 0 of `labels`; invalid
// cells are ignored) with binary cross-entropy and Adam. Minibatches draw their
// input from a random stack member. The result comes back frozen.
inline PretrainResult pretrain_builtup(const GridStack& grids, const Grid& labels, const PretrainConfig& cfg) {
    if (grids.members.empty()) throw DataError("empty stack");
    grids.validate();
    const Grid& ref = grids.members.front();
    if (!labels.aligned_with(ref.width(), ref.height(), ref.transform()) || labels.band_count() < 1) {
        throw DataError("labels are not aligned with the input grids");
    }
    if (cfg.batch_pixels == 0) throw DataError("batch_pixels must be >= 1");
    const auto bands = feature_bands(ref, cfg.features);

    std::vector<std::size_t> pixels;
    std::vector<double> y;
    for (std::size_t p = 0; p < ref.pixel_count(); ++p) {
        if (!labels.valid(0, p)) continue;
        const float v = labels.value(0, p);
        if (v != 0.0f && v != 1.0f) throw DataError("labels outside {0,1,invalid}");
        if (!pixel_has_features(ref, bands, p)) continue;
        pixels.push_back(p);
        y.push_back(v);
    }

    PretrainResult out;
    out.branch = init_builtup_branch(bands.size() * cfg.features.window_cells(), cfg);
    if (cfg.epochs == 0) {
        out.branch.frozen = true;
        return out;
    }
    if (pixels.empty()) throw DataError("no labeled pixels to pretrain on");

    std::vector<Eigen::MatrixXd> x;
    for (const auto& g : grids.members) x.push_back(feature_matrix(g, bands, cfg.features.window_radius, pixels));

    BranchParams& br = out.branch;
    auto flatten = [](const BranchParams& b) {
        Eigen::VectorXd v(static_cast<Eigen::Index>(b.parameter_count()));
        Eigen::Index i = 0;
        b.for_each([&](double s) { v(i++) = s; });
        return v;
    };
    Eigen::VectorXd theta = flatten(br);
    OptimState state;
    const AdamConfig adam;
    std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
    std::vector<std::size_t> order(pixels.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t per_epoch =
        cfg.pixels_per_epoch == 0 ? order.size() : std::min(cfg.pixels_per_epoch, order.size());

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < per_epoch; start += cfg.batch_pixels) {
            const std::size_t n = std::min(cfg.batch_pixels, per_epoch - start);
            std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
            const Eigen::MatrixXd& src = x[pick(rng)];
            Eigen::MatrixXd xb(src.rows(), static_cast<Eigen::Index>(n));
            Eigen::RowVectorXd yb(static_cast<Eigen::Index>(n));
            for (std::size_t j = 0; j < n; ++j) {
                xb.col(static_cast<Eigen::Index>(j)) = src.col(static_cast<Eigen::Index>(order[start + j]));
                yb(static_cast<Eigen::Index>(j)) = y[order[start + j]];
            }
            const BranchCache c = branch_forward(br, xb);
            // mean BCE = mean(softplus(z) - y z); d/dz = (sigmoid(z) - y) / n
            Eigen::RowVectorXd d_logit(static_cast<Eigen::Index>(n));
            for (Eigen::Index j = 0; j < d_logit.size(); ++j) {
                loss_sum += softplus(c.logit(j)) - yb(j) * c.logit(j);
                d_logit(j) = (c.output(j) - yb(j)) / static_cast<double>(n);
            }
            BranchParams g = br.zeros_like();
            branch_backward_logit(br, xb, c, d_logit, g);
            adam_step(theta, flatten(g), state, cfg.lr, adam);
            Eigen::Index i = 0;
            br.for_each([&](double& s) { s = theta(i++); });
        }
        const double mean_loss = loss_sum / static_cast<double>(std::max<std::size_t>(per_epoch, 1));
        if (!std::isfinite(mean_loss)) throw NumericalError("non-finite pretraining loss at epoch " + std::to_string(epoch));
        out.epoch_loss.push_back(mean_loss);
    }
    br.frozen = true;
    return out;
}

}  // namespace popgrid
