#pragma once

// Factored per-pixel population model:
//
//   population = builtup_score * occupancy_rate
//
// builtup_score is a sigmoid-headed MLP (usually pretrained and frozen),
// occupancy_rate a softplus-headed MLP trained from region totals only.
// The `direct` variant regresses population with a single softplus branch and
// `external_weights` replaces the built-up branch with a given raster band.
// All branches are per-pixel MLPs over an optional 3x3 window of input bands.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "popgrid/error.hpp"
#include "popgrid/grid.hpp"

namespace popgrid {

// ---------------------------------------------------------------------------
// Features

struct FeatureConfig {
    int window_radius = 0;  // 0: the pixel itself, 1: its 3x3 neighborhood
    std::set<FeatureGroup> groups{FeatureGroup::S1, FeatureGroup::S2};

    void validate() const {
        if (window_radius != 0 && window_radius != 1) throw DataError("window_radius must be 0 or 1");
        if (groups.empty()) throw DataError("feature group mask is empty");
    }
    std::size_t window_cells() const {
        const auto w = static_cast<std::size_t>(2 * window_radius + 1);
        return w * w;
    }
};

// Bands feeding the model, ordered by group (S1, S2, AUX) and then by band index.
inline std::vector<std::size_t> feature_bands(const Grid& grid, const FeatureConfig& config) {
    config.validate();
    std::vector<std::size_t> out;
    for (auto g : {FeatureGroup::S1, FeatureGroup::S2, FeatureGroup::AUX}) {
        if (!config.groups.count(g)) continue;
        for (std::size_t b = 0; b < grid.band_count(); ++b) {
            if (grid.band_info(b).group == g) out.push_back(b);
        }
    }
    return out;
}

inline std::size_t feature_dim(const Grid& grid, const FeatureConfig& config) {
    return feature_bands(grid, config).size() * config.window_cells();
}

namespace detail {

inline std::size_t mirror(std::ptrdiff_t i, std::size_t n) {
    const auto last = static_cast<std::ptrdiff_t>(n) - 1;
    if (i < 0) i = -i;
    if (i > last) i = 2 * last - i;
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, last));
}

}  // namespace detail

// A pixel is predictable when at least one feature band is valid at it.
inline bool pixel_has_features(const Grid& grid, std::span<const std::size_t> bands, std::size_t pixel) {
    return std::any_of(bands.begin(), bands.end(), [&](std::size_t b) { return grid.valid(b, pixel); });
}

// Features for many pixels as columns of an (F x n) matrix. Invalid cells read as 0;
// windows are mirror-padded at the raster border.
inline Eigen::MatrixXd feature_matrix(const Grid& grid, std::span<const std::size_t> bands, int radius,
                                      std::span<const std::size_t> pixels) {
    const std::size_t win = static_cast<std::size_t>((2 * radius + 1) * (2 * radius + 1));
    Eigen::MatrixXd x(static_cast<Eigen::Index>(bands.size() * win), static_cast<Eigen::Index>(pixels.size()));
    const std::size_t w = grid.width();
    const std::size_t h = grid.height();
    for (std::size_t j = 0; j < pixels.size(); ++j) {
        const auto row = static_cast<std::ptrdiff_t>(pixels[j] / w);
        const auto col = static_cast<std::ptrdiff_t>(pixels[j] % w);
        std::size_t f = 0;
        for (auto b : bands) {
            for (int dr = -radius; dr <= radius; ++dr) {
                for (int dc = -radius; dc <= radius; ++dc) {
                    const std::size_t p = detail::mirror(row + dr, h) * w + detail::mirror(col + dc, w);
                    x(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(j)) =
                        grid.valid(b, p) ? static_cast<double>(grid.value(b, p)) : 0.0;
                    ++f;
                }
            }
        }
    }
    return x;
}

inline Eigen::VectorXd extract_features(const Grid& grid, const FeatureConfig& config, std::size_t pixel) {
    const auto bands = feature_bands(grid, config);
    if (pixel >= grid.pixel_count()) throw DataError("pixel index out of range");
    if (!pixel_has_features(grid, bands, pixel)) throw DataError("pixel fully invalid");
    const std::size_t px[1] = {pixel};
    return feature_matrix(grid, bands, config.window_radius, px).col(0);
}

// ---------------------------------------------------------------------------
// Activations

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// softplus^-1(y) = log(expm1(y)), y > 0
inline double inverse_softplus(double y) {
    if (!(y > 0.0)) throw DataError("inverse_softplus needs a positive argument");
    return y > 20.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

// ---------------------------------------------------------------------------
// Branch: MLP with ReLU hidden layers and a scalar head.

enum class HeadActivation { sigmoid, softplus };

struct DenseLayer {
    Eigen::MatrixXd weight;  // out x in
    Eigen::VectorXd bias;    // out
};

struct BranchParams {
    std::vector<DenseLayer> hidden;
    Eigen::VectorXd head_weight;
    double head_bias = 0.0;
    HeadActivation head = HeadActivation::softplus;
    bool frozen = false;

    std::size_t input_dim() const {
        return hidden.empty() ? static_cast<std::size_t>(head_weight.size())
                              : static_cast<std::size_t>(hidden.front().weight.cols());
    }

    std::size_t parameter_count() const {
        std::size_t n = static_cast<std::size_t>(head_weight.size()) + 1;
        for (const auto& l : hidden) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        return n;
    }

    void validate() const {
        Eigen::Index in = static_cast<Eigen::Index>(input_dim());
        for (const auto& l : hidden) {
            if (l.weight.cols() != in || l.bias.size() != l.weight.rows()) {
                throw DataError("branch layer shapes do not chain");
            }
            in = l.weight.rows();
        }
        if (head_weight.size() != in) throw DataError("branch head shape does not match last hidden layer");
    }

    // Zeroed copy with identical shapes (gradient accumulator).
    BranchParams zeros_like() const {
        BranchParams z = *this;
        for (auto& l : z.hidden) {
            l.weight.setZero();
            l.bias.setZero();
        }
        z.head_weight.setZero();
        z.head_bias = 0.0;
        return z;
    }

    // Visits every scalar parameter in a fixed order: layers (weight row-major, bias),
    // then head weight, then head bias.
    template <class F>
    void for_each(F&& f) {
        for (auto& l : hidden) {
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
                for (Eigen::Index c = 0; c < l.weight.cols(); ++c) f(l.weight(r, c));
            }
            for (Eigen::Index r = 0; r < l.bias.size(); ++r) f(l.bias(r));
        }
        for (Eigen::Index r = 0; r < head_weight.size(); ++r) f(head_weight(r));
        f(head_bias);
    }
    template <class F>
    void for_each(F&& f) const {
        const_cast<BranchParams*>(this)->for_each([&](double& v) { f(static_cast<const double&>(v)); });
    }
};

inline const std::vector<std::size_t>& default_hidden_widths() {
    static const std::vector<std::size_t> w{64, 64};
    return w;
}

// He-normal hidden layers with zero biases. The head weights are drawn with
// standard deviation `head_scale / sqrt(fan_in)` (0 gives an all-zero head).
inline BranchParams init_branch(std::size_t input_dim, std::span<const std::size_t> widths, HeadActivation head,
                                std::mt19937_64& rng, double head_scale = 1.0) {
    BranchParams p;
    p.head = head;
    std::normal_distribution<double> unit(0.0, 1.0);
    std::size_t in = input_dim;
    for (auto out : widths) {
        DenseLayer l;
        l.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
        const double sd = std::sqrt(2.0 / static_cast<double>(std::max<std::size_t>(in, 1)));
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = sd * unit(rng);
        }
        l.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out));
        p.hidden.push_back(std::move(l));
        in = out;
    }
    p.head_weight.resize(static_cast<Eigen::Index>(in));
    const double sd = head_scale / std::sqrt(static_cast<double>(std::max<std::size_t>(in, 1)));
    for (Eigen::Index r = 0; r < p.head_weight.size(); ++r) p.head_weight(r) = head_scale == 0.0 ? 0.0 : sd * unit(rng);
    return p;
}

// Activations of one branch over a batch of pixels (columns).
struct BranchCache {
    std::vector<Eigen::MatrixXd> pre;   // per hidden layer, before ReLU
    std::vector<Eigen::MatrixXd> post;  // per hidden layer, after ReLU
    Eigen::RowVectorXd logit;
    Eigen::RowVectorXd output;

    bool empty() const { return output.size() == 0; }
};

inline BranchCache branch_forward(const BranchParams& p, const Eigen::MatrixXd& x) {
    if (static_cast<std::size_t>(x.rows()) != p.input_dim()) throw DataError("feature/branch shape mismatch");
    BranchCache c;
    const Eigen::MatrixXd* a = &x;
    for (const auto& l : p.hidden) {
        Eigen::MatrixXd z = l.weight * *a;
        z.colwise() += l.bias;
        c.post.push_back(z.cwiseMax(0.0));
        c.pre.push_back(std::move(z));
        a = &c.post.back();
    }
    c.logit = p.head_weight.transpose() * *a;
    c.logit.array() += p.head_bias;
    c.output.resize(c.logit.size());
    for (Eigen::Index i = 0; i < c.logit.size(); ++i) {
        c.output(i) = p.head == HeadActivation::sigmoid ? sigmoid(c.logit(i)) : softplus(c.logit(i));
    }
    return c;
}

// Accumulates d(objective)/d(params) into `grad` given d(objective)/d(logit).
inline void branch_backward_logit(const BranchParams& p, const Eigen::MatrixXd& x, const BranchCache& c,
                                  const Eigen::RowVectorXd& d_logit, BranchParams& grad) {
    if (c.empty() || c.output.size() != x.cols() || d_logit.size() != x.cols()) {
        throw DataError("missing forward cache");
    }
    const Eigen::MatrixXd& last = p.hidden.empty() ? x : c.post.back();
    grad.head_weight.noalias() += last * d_logit.transpose();
    grad.head_bias += d_logit.sum();
    if (p.hidden.empty()) return;

    Eigen::MatrixXd d_act = p.head_weight * d_logit;
    for (std::size_t k = p.hidden.size(); k-- > 0;) {
        // ReLU'(0) = 0
        Eigen::MatrixXd d_pre = d_act.cwiseProduct((c.pre[k].array() > 0.0).cast<double>().matrix());
        const Eigen::MatrixXd& input = k == 0 ? x : c.post[k - 1];
        grad.hidden[k].weight.noalias() += d_pre * input.transpose();
        grad.hidden[k].bias += d_pre.rowwise().sum();
        if (k > 0) d_act.noalias() = p.hidden[k].weight.transpose() * d_pre;
    }
}

// Same, given d(objective)/d(output).
inline void branch_backward(const BranchParams& p, const Eigen::MatrixXd& x, const BranchCache& c,
                            const Eigen::RowVectorXd& d_output, BranchParams& grad) {
    if (c.empty() || c.output.size() != x.cols() || d_output.size() != x.cols()) {
        throw DataError("missing forward cache");
    }
    Eigen::RowVectorXd d_logit(d_output.size());
    for (Eigen::Index i = 0; i < d_output.size(); ++i) {
        // sigmoid' = s(1 - s); softplus' = sigmoid(logit)
        d_logit(i) = p.head == HeadActivation::sigmoid ? d_output(i) * c.output(i) * (1.0 - c.output(i))
                                                       : d_output(i) * sigmoid(c.logit(i));
    }
    branch_backward_logit(p, x, c, d_logit, grad);
}

inline double builtup_forward(const Eigen::VectorXd& features, const BranchParams& params) {
    BranchParams p = params;
    p.head = HeadActivation::sigmoid;
    p.validate();
    return branch_forward(p, Eigen::MatrixXd(features)).output(0);
}

inline double occupancy_forward(const Eigen::VectorXd& features, const BranchParams& params) {
    BranchParams p = params;
    p.head = HeadActivation::softplus;
    p.validate();
    return branch_forward(p, Eigen::MatrixXd(features)).output(0);
}

// ---------------------------------------------------------------------------
// Full predictor

enum class Variant { factored, direct, external_weights };

inline std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::factored: return "factored";
        case Variant::direct: return "direct";
        case Variant::external_weights: return "external_weights";
    }
    return "factored";
}

inline Variant parse_variant(std::string_view s) {
    if (s == "factored") return Variant::factored;
    if (s == "direct") return Variant::direct;
    if (s == "external_weights" || s == "external") return Variant::external_weights;
    throw DataError("unknown variant '" + std::string(s) + "'");
}

struct Provenance {
    std::uint64_t seed = 0;
    std::size_t epochs = 0;
    std::string dataset;
    bool hidden_transfer = false;  // occupancy hidden layers copied from the built-up branch
};

struct PredictorParams {
    Variant variant = Variant::factored;
    FeatureConfig features;
    std::vector<std::string> feature_band_names;  // bands the weights were fitted on, in order
    std::optional<BranchParams> builtup;          // factored only
    BranchParams occupancy;                       // occupancy rate, or population for `direct`
    std::string external_weight_band;             // external_weights only
    Provenance provenance;

    void validate() const {
        features.validate();
        occupancy.validate();
        if (occupancy.input_dim() != feature_band_names.size() * features.window_cells()) {
            throw DataError("occupancy branch input size does not match the feature layout");
        }
        switch (variant) {
            case Variant::factored:
                if (!builtup) throw DataError("factored variant needs a built-up branch");
                builtup->validate();
                if (builtup->input_dim() != occupancy.input_dim()) {
                    throw DataError("built-up and occupancy branches disagree on input size");
                }
                break;
            case Variant::direct:
                if (builtup) throw DataError("direct variant has a single branch");
                break;
            case Variant::external_weights:
                if (builtup) throw DataError("external_weights variant replaces the built-up branch");
                if (external_weight_band.empty()) throw DataError("external_weights variant needs a band name");
                break;
        }
    }

    bool builtup_trainable() const { return variant == Variant::factored && builtup && !builtup->frozen; }
};

inline std::vector<std::string> band_names(const Grid& grid, std::span<const std::size_t> bands) {
    std::vector<std::string> out;
    for (auto b : bands) out.push_back(grid.band_info(b).name);
    return out;
}

// Feature bands of `grid` for `params`, verified against the names recorded at training time.
inline std::vector<std::size_t> resolve_feature_bands(const Grid& grid, const PredictorParams& params) {
    auto bands = feature_bands(grid, params.features);
    if (band_names(grid, bands) != params.feature_band_names) {
        throw DataError("input bands do not match the bands the model was trained on");
    }
    return bands;
}

inline std::size_t resolve_external_band(const Grid& grid, const PredictorParams& params) {
    const std::size_t b = grid.find_band(params.external_weight_band);
    if (b == grid.band_count()) throw DataError("missing external weight band '" + params.external_weight_band + "'");
    return b;
}

// Fresh parameters: He-initialized occupancy branch with a zero head (so the
// head bias alone sets the initial rate) and, for `factored`, the given
// built-up branch.
inline PredictorParams make_predictor(Variant variant, const Grid& reference, const FeatureConfig& features,
                                      std::uint64_t seed, std::optional<BranchParams> builtup = std::nullopt,
                                      std::string external_band = {},
                                      std::span<const std::size_t> widths = default_hidden_widths()) {
    PredictorParams p;
    p.variant = variant;
    p.features = features;
    const auto bands = feature_bands(reference, features);
    p.feature_band_names = band_names(reference, bands);
    std::mt19937_64 rng(seed);
    p.occupancy = init_branch(bands.size() * features.window_cells(), widths, HeadActivation::softplus, rng, 0.0);
    if (variant == Variant::factored) {
        if (builtup) {
            p.builtup = std::move(builtup);
        } else {
            p.builtup = init_branch(bands.size() * features.window_cells(), widths, HeadActivation::sigmoid, rng);
        }
    }
    if (variant == Variant::external_weights) p.external_weight_band = std::move(external_band);
    p.provenance.seed = seed;
    p.validate();
    return p;
}

// Forward pass over a set of pixels; keeps what backward needs.
struct ForwardCache {
    BranchCache builtup;
    BranchCache occupancy;
    Eigen::RowVectorXd weight;      // built-up score or external weight; empty for `direct`
    Eigen::RowVectorXd population;

    bool empty() const { return population.size() == 0; }
};

inline ForwardCache forward_pixels(const PredictorParams& params, const Eigen::MatrixXd& x,
                                   const Eigen::RowVectorXd* external = nullptr) {
    ForwardCache c;
    c.occupancy = branch_forward(params.occupancy, x);
    switch (params.variant) {
        case Variant::factored:
            c.builtup = branch_forward(*params.builtup, x);
            c.weight = c.builtup.output;
            c.population = c.weight.cwiseProduct(c.occupancy.output);
            break;
        case Variant::direct:
            c.population = c.occupancy.output;
            break;
        case Variant::external_weights:
            if (external == nullptr || external->size() != x.cols()) throw DataError("missing external weights");
            c.weight = *external;
            c.population = c.weight.cwiseProduct(c.occupancy.output);
            break;
    }
    return c;
}

// Gradient structure shaped like the parameters. `builtup` is present for the
// factored variant and stays zero when that branch is frozen.
struct Gradients {
    std::optional<BranchParams> builtup;
    BranchParams occupancy;

    static Gradients zeros_like(const PredictorParams& p) {
        Gradients g;
        if (p.builtup) g.builtup = p.builtup->zeros_like();
        g.occupancy = p.occupancy.zeros_like();
        return g;
    }
};

// Reverse-mode pass: `seed` holds d(objective)/d(population) per pixel.
inline void backward(const PredictorParams& params, const Eigen::MatrixXd& x, const ForwardCache& cache,
                     const Eigen::RowVectorXd& seed, Gradients& grad) {
    if (cache.population.size() != x.cols() || seed.size() != x.cols()) throw DataError("missing forward cache");
    if (x.cols() == 0) return;
    if (params.variant == Variant::direct) {
        branch_backward(params.occupancy, x, cache.occupancy, seed, grad.occupancy);
        return;
    }
    branch_backward(params.occupancy, x, cache.occupancy, seed.cwiseProduct(cache.weight), grad.occupancy);
    if (params.builtup_trainable()) {
        branch_backward(*params.builtup, x, cache.builtup, seed.cwiseProduct(cache.occupancy.output), *grad.builtup);
    }
}

// Trainable parameters as one flat vector (frozen branches excluded).
inline std::size_t trainable_count(const PredictorParams& p) {
    return p.occupancy.parameter_count() + (p.builtup_trainable() ? p.builtup->parameter_count() : 0);
}

inline Eigen::VectorXd flatten_trainable(const PredictorParams& p) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(trainable_count(p)));
    Eigen::Index i = 0;
    p.occupancy.for_each([&](double x) { v(i++) = x; });
    if (p.builtup_trainable()) p.builtup->for_each([&](double x) { v(i++) = x; });
    return v;
}

inline Eigen::VectorXd flatten_gradients(const PredictorParams& p, const Gradients& g) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(trainable_count(p)));
    Eigen::Index i = 0;
    g.occupancy.for_each([&](double x) { v(i++) = x; });
    if (p.builtup_trainable()) g.builtup->for_each([&](double x) { v(i++) = x; });
    return v;
}

inline void unflatten_trainable(PredictorParams& p, const Eigen::VectorXd& v) {
    if (v.size() != static_cast<Eigen::Index>(trainable_count(p))) throw DataError("parameter vector size mismatch");
    Eigen::Index i = 0;
    p.occupancy.for_each([&](double& x) { x = v(i++); });
    if (p.builtup_trainable()) p.builtup->for_each([&](double& x) { x = v(i++); });
}

// ---------------------------------------------------------------------------
// Raster prediction. Output bands: population, builtup, occupancy. Pixels
// without any valid feature band (or with an invalid external weight) stay
// invalid; for `direct` the builtup and occupancy bands are entirely invalid.

template <class Out = float>
BasicGrid<Out> population_forward(const Grid& grid, const PredictorParams& params, const FeatureConfig& config) {
    PredictorParams p = params;
    p.features = config;
    p.validate();
    const auto bands = resolve_feature_bands(grid, p);
    std::optional<std::size_t> ext;
    if (p.variant == Variant::external_weights) ext = resolve_external_band(grid, p);

    BasicGrid<Out> out(
        grid.width(), grid.height(),
        {{"population", FeatureGroup::AUX}, {"builtup", FeatureGroup::AUX}, {"occupancy", FeatureGroup::AUX}},
        grid.transform(), Out{}, false);

    std::vector<std::size_t> pixels;
    for (std::size_t px = 0; px < grid.pixel_count(); ++px) {
        if (!pixel_has_features(grid, bands, px)) continue;
        if (ext && !grid.valid(*ext, px)) continue;
        pixels.push_back(px);
    }
    constexpr std::size_t kChunk = 4096;
    for (std::size_t start = 0; start < pixels.size(); start += kChunk) {
        const std::span<const std::size_t> chunk(pixels.data() + start, std::min(kChunk, pixels.size() - start));
        const Eigen::MatrixXd x = feature_matrix(grid, bands, p.features.window_radius, chunk);
        Eigen::RowVectorXd w;
        if (ext) {
            w.resize(static_cast<Eigen::Index>(chunk.size()));
            for (std::size_t j = 0; j < chunk.size(); ++j) w(static_cast<Eigen::Index>(j)) = grid.value(*ext, chunk[j]);
        }
        const ForwardCache c = forward_pixels(p, x, ext ? &w : nullptr);
        for (std::size_t j = 0; j < chunk.size(); ++j) {
            const auto jj = static_cast<Eigen::Index>(j);
            out.value(0, chunk[j]) = static_cast<Out>(c.population(jj));
            out.set_valid(0, chunk[j], true);
            if (p.variant != Variant::direct) {
                out.value(1, chunk[j]) = static_cast<Out>(c.weight(jj));
                out.value(2, chunk[j]) = static_cast<Out>(c.occupancy.output(jj));
                out.set_valid(1, chunk[j], true);
                out.set_valid(2, chunk[j], true);
            }
        }
    }
    return out;
}

template <class Out = float>
BasicGrid<Out> population_forward(const Grid& grid, const PredictorParams& params) {
    return population_forward<Out>(grid, params, params.features);
}

}  // namespace popgrid
