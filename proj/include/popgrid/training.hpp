#pragma once

// Weak supervision from region totals:
//
//   objective = sum_j | log(1 + c_j) - log(1 + sum_{k in A_j} p_k) |  +  sparsity_weight * mean_k p_k
//
// with coupled L2 weight decay folded into the Adam update.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "popgrid/census.hpp"
#include "popgrid/error.hpp"
#include "popgrid/grid.hpp"
#include "popgrid/optim.hpp"
#include "popgrid/predictor.hpp"
#include "popgrid/regions.hpp"

namespace popgrid {

// ---------------------------------------------------------------------------
// Loss terms

inline double log_l1(double count, double predicted_sum) {
    return std::abs(std::log1p(count) - std::log1p(predicted_sum));
}

// d log_l1 / d predicted_sum, with the |x| subgradient at 0 taken as 0.
inline double log_l1_derivative(double count, double predicted_sum) {
    const double diff = std::log1p(count) - std::log1p(predicted_sum);
    if (diff == 0.0) return 0.0;
    return (diff > 0.0 ? -1.0 : 1.0) / (1.0 + predicted_sum);
}

inline double loss_logL1(const CensusTable& census, const std::map<std::uint32_t, double>& region_sums) {
    double loss = 0.0;
    for (const auto& [id, count] : census.entries) {
        auto it = region_sums.find(id);
        if (it == region_sums.end()) throw DataError("missing region sum for region " + std::to_string(id));
        if (it->second < 0.0) throw DataError("negative predicted sum for region " + std::to_string(id));
        loss += log_l1(count, it->second);
    }
    return loss;
}

inline constexpr double kDefaultSparsityWeight = 0.01;

inline double sparsity_penalty(std::span<const double> outputs, double weight = kDefaultSparsityWeight) {
    if (outputs.empty()) throw DataError("sparsity penalty of an empty batch");
    double s = 0.0;
    for (double v : outputs) s += v;
    return weight * s / static_cast<double>(outputs.size());
}

// lambda_wd from the dataset difficulty: 5 * lambda_wd = D * 1e-6.
inline double weight_decay_from_difficulty(double d) {
    if (!(d > 0.0)) throw DataError("difficulty must be positive");
    return d / 5e6;  // one rounding: 18 -> 3.6e-6 exactly
}

// ---------------------------------------------------------------------------
// Batched objective with analytic gradients

// One census region as seen by the objective. `features` holds the pixels that
// can carry population; `pixel_count` counts every valid pixel of the region
// (pixels with an external weight of exactly 0 predict 0 and are left out of
// `features`, but still count toward the sparsity mean).
struct RegionItem {
    std::uint32_t region_id = 0;
    double census = 0.0;
    const Eigen::MatrixXd* features = nullptr;
    const Eigen::RowVectorXd* external = nullptr;
    std::size_t pixel_count = 0;
};

struct ObjectiveTerms {
    double total = 0.0;
    double log_l1 = 0.0;
    double sparsity = 0.0;
    std::map<std::uint32_t, double> region_sums;
};

// Objective over `items` (summed in the given order); accumulates gradients into
// `grad` when non-null.
inline ObjectiveTerms region_objective(const PredictorParams& params, std::span<const RegionItem> items,
                                       double sparsity_weight, Gradients* grad) {
    ObjectiveTerms t;
    std::vector<ForwardCache> caches;
    caches.reserve(items.size());
    std::size_t n_pixels = 0;
    double pop_total = 0.0;
    for (const auto& it : items) {
        caches.push_back(forward_pixels(params, *it.features, it.external));
        const double s = caches.back().population.sum();
        t.region_sums[it.region_id] = s;
        t.log_l1 += log_l1(it.census, s);
        pop_total += s;
        n_pixels += it.pixel_count;
    }
    if (n_pixels == 0) throw DataError("sparsity penalty of an empty batch");
    t.sparsity = sparsity_weight * pop_total / static_cast<double>(n_pixels);
    t.total = t.log_l1 + t.sparsity;
    if (grad == nullptr) return t;

    const double d_sparse = sparsity_weight / static_cast<double>(n_pixels);
    for (std::size_t i = 0; i < items.size(); ++i) {
        const double d_sum = log_l1_derivative(items[i].census, t.region_sums[items[i].region_id]);
        const Eigen::RowVectorXd seed = Eigen::RowVectorXd::Constant(items[i].features->cols(), d_sum + d_sparse);
        backward(params, *items[i].features, caches[i], seed, *grad);
    }
    return t;
}

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
    double base_lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t batch_regions = 2;
    std::size_t epochs = 0;
    double lambda_wd = 0.0;
    double sparsity_weight = kDefaultSparsityWeight;
    std::uint64_t seed = 0;
    double lr_decay = 0.75;
    std::size_t lr_decay_every = 5;
    double brightness_sigma = 0.1;
    double contrast_sigma = 0.1;
    bool decoupled_weight_decay = false;
    bool init_occupancy_bias = true;
    bool transfer_hidden = false;  // copy built-up hidden layers into the occupancy branch
    std::string dataset_label;

    void validate() const {
        if (batch_regions < 1) throw DataError("batch_regions must be >= 1");
        if (!(base_lr > 0.0) || !(epsilon > 0.0) || !(lr_decay > 0.0)) throw DataError("rates must be positive");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw DataError("betas in [0, 1)");
        if (lambda_wd < 0.0 || sparsity_weight < 0.0) throw DataError("regularizer weights must be >= 0");
        if (brightness_sigma < 0.0 || contrast_sigma < 0.0) throw DataError("augmentation sigmas must be >= 0");
    }

    AdamConfig adam() const { return {beta1, beta2, epsilon, lambda_wd, decoupled_weight_decay}; }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"base_lr", c.base_lr},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"epsilon", c.epsilon},
                       {"batch_regions", c.batch_regions},
                       {"epochs", c.epochs},
                       {"lambda_wd", c.lambda_wd},
                       {"sparsity_weight", c.sparsity_weight},
                       {"seed", c.seed},
                       {"lr_decay", c.lr_decay},
                       {"lr_decay_every", c.lr_decay_every},
                       {"brightness_sigma", c.brightness_sigma},
                       {"contrast_sigma", c.contrast_sigma},
                       {"decoupled_weight_decay", c.decoupled_weight_decay},
                       {"init_occupancy_bias", c.init_occupancy_bias},
                       {"transfer_hidden", c.transfer_hidden},
                       {"dataset_label", c.dataset_label}};
}

// Missing keys keep their defaults so partial experiment files are accepted.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    const TrainConfig d;
    c.base_lr = j.value("base_lr", d.base_lr);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.epsilon = j.value("epsilon", d.epsilon);
    c.batch_regions = j.value("batch_regions", d.batch_regions);
    c.epochs = j.value("epochs", d.epochs);
    c.lambda_wd = j.value("lambda_wd", d.lambda_wd);
    c.sparsity_weight = j.value("sparsity_weight", d.sparsity_weight);
    c.seed = j.value("seed", d.seed);
    c.lr_decay = j.value("lr_decay", d.lr_decay);
    c.lr_decay_every = j.value("lr_decay_every", d.lr_decay_every);
    c.brightness_sigma = j.value("brightness_sigma", d.brightness_sigma);
    c.contrast_sigma = j.value("contrast_sigma", d.contrast_sigma);
    c.decoupled_weight_decay = j.value("decoupled_weight_decay", d.decoupled_weight_decay);
    c.init_occupancy_bias = j.value("init_occupancy_bias", d.init_occupancy_bias);
    c.transfer_hidden = j.value("transfer_hidden", d.transfer_hidden);
    c.dataset_label = j.value("dataset_label", d.dataset_label);
}

inline double lr_at(std::size_t epoch, const TrainConfig& c) {
    return lr_at(epoch, c.base_lr, c.lr_decay, c.lr_decay_every);
}

// ---------------------------------------------------------------------------
// Training data: features of every census region, precomputed per stack member.

struct RegionSamples {
    std::uint32_t region_id = 0;
    double census = 0.0;
    std::size_t pixel_count = 0;
    std::vector<Eigen::MatrixXd> features;  // one per stack member
    Eigen::RowVectorXd external;
};

struct TrainingSet {
    std::vector<std::size_t> feature_band_index;  // grid band per feature row block
    std::size_t window_cells = 1;
    std::vector<RegionSamples> regions;           // ascending region id
    std::size_t members = 0;
};

inline TrainingSet build_training_set(const GridStack& stack, const RegionMap& map, const CensusTable& census,
                                      const PredictorParams& params) {
    if (stack.members.empty()) throw DataError("empty stack");
    stack.validate();
    const Grid& ref = stack.members.front();
    if (!map.aligned_with(ref)) throw DataError("misaligned inputs: region map and grids differ");
    const auto present = map.pixel_counts();
    for (const auto& [id, _] : census.entries) {
        if (!present.count(id)) throw DataError("census/region mismatch: region " + std::to_string(id) + " not in map");
    }
    const auto bands = resolve_feature_bands(ref, params);
    std::optional<std::size_t> ext;
    if (params.variant == Variant::external_weights) ext = resolve_external_band(ref, params);

    TrainingSet set;
    set.feature_band_index = bands;
    set.window_cells = params.features.window_cells();
    set.members = stack.members.size();
    const auto members = map.members();
    for (const auto& [id, count] : census.entries) {
        RegionSamples rs;
        rs.region_id = id;
        rs.census = count;
        std::vector<std::size_t> active;
        for (auto px : members.at(id)) {
            if (!pixel_has_features(ref, bands, px)) continue;
            if (ext && !ref.valid(*ext, px)) continue;
            ++rs.pixel_count;
            if (ext && ref.value(*ext, px) == 0.0f) continue;
            active.push_back(px);
        }
        if (rs.pixel_count == 0) throw DataError("census region " + std::to_string(id) + " has no valid pixels");
        for (const auto& g : stack.members) {
            rs.features.push_back(feature_matrix(g, bands, params.features.window_radius, active));
        }
        if (ext) {
            rs.external.resize(static_cast<Eigen::Index>(active.size()));
            for (std::size_t j = 0; j < active.size(); ++j) {
                rs.external(static_cast<Eigen::Index>(j)) = ref.value(*ext, active[j]);
            }
        }
        set.regions.push_back(std::move(rs));
    }
    return set;
}

// ---------------------------------------------------------------------------
// Training loop

struct HistoryRow {
    std::size_t epoch = 0;
    std::size_t batch = 0;
    double loss = 0.0;
    double log_l1 = 0.0;
    double sparsity = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    PredictorParams params;
    std::vector<HistoryRow> history;
};

inline std::string history_to_csv(std::span<const HistoryRow> rows) {
    std::ostringstream out;
    out << "epoch,batch,loss,log_l1,sparsity,lr\n";
    for (const auto& r : rows) {
        out << r.epoch << ',' << r.batch << ',' << format_double(r.loss) << ',' << format_double(r.log_l1) << ','
            << format_double(r.sparsity) << ',' << format_double(r.lr) << '\n';
    }
    return out.str();
}

// Mean batch loss per epoch.
inline std::vector<double> epoch_losses(std::span<const HistoryRow> rows) {
    std::vector<double> sum;
    std::vector<std::size_t> n;
    for (const auto& r : rows) {
        if (r.epoch >= sum.size()) {
            sum.resize(r.epoch + 1, 0.0);
            n.resize(r.epoch + 1, 0);
        }
        sum[r.epoch] += r.loss;
        ++n[r.epoch];
    }
    for (std::size_t e = 0; e < sum.size(); ++e) sum[e] /= static_cast<double>(std::max<std::size_t>(n[e], 1));
    return sum;
}

// Sum of the per-pixel multiplier that the occupancy rate scales: built-up
// score (factored), external weight, or 1 per pixel (direct).
inline double weight_mass(const PredictorParams& params, const TrainingSet& set) {
    double mass = 0.0;
    for (const auto& r : set.regions) {
        switch (params.variant) {
            case Variant::factored:
                mass += branch_forward(*params.builtup, r.features.front()).output.sum();
                break;
            case Variant::external_weights:
                mass += r.external.sum();
                break;
            case Variant::direct:
                mass += static_cast<double>(r.pixel_count);
                break;
        }
    }
    return mass;
}

// Hidden layers of the built-up branch copied into the occupancy branch.
inline void transfer_hidden_layers(PredictorParams& params) {
    if (!params.builtup) throw DataError("hidden-layer transfer needs a built-up branch");
    if (params.builtup->hidden.size() != params.occupancy.hidden.size()) {
        throw DataError("hidden-layer transfer: branch depths differ");
    }
    for (std::size_t k = 0; k < params.occupancy.hidden.size(); ++k) {
        const auto& src = params.builtup->hidden[k];
        auto& dst = params.occupancy.hidden[k];
        if (src.weight.rows() != dst.weight.rows() || src.weight.cols() != dst.weight.cols()) {
            throw DataError("hidden-layer transfer: layer shapes differ");
        }
        dst = src;
    }
    params.provenance.hidden_transfer = true;
}

// Same as transfer_hidden_layers, but from a separately supplied branch (used
// when the model itself carries no built-up branch, e.g. the direct variant).
inline void transfer_hidden_layers(PredictorParams& params, const BranchParams& source) {
    PredictorParams tmp = params;
    tmp.builtup = source;
    transfer_hidden_layers(tmp);
    params.occupancy = tmp.occupancy;
    params.provenance.hidden_transfer = true;
}

inline TrainResult train(const GridStack& stack, const RegionMap& map, const CensusTable& census,
                         const PredictorParams& params0, const TrainConfig& config) {
    config.validate();
    params0.validate();
    TrainResult result{params0, {}};
    if (config.epochs == 0) return result;

    PredictorParams& params = result.params;
    const TrainingSet set = build_training_set(stack, map, census, params);
    if (set.regions.empty()) throw DataError("no census regions to train on");

    if (config.transfer_hidden) transfer_hidden_layers(params);
    if (config.init_occupancy_bias) {
        const double mass = weight_mass(params, set);
        const double total = census.total();
        if (!(mass > 0.0) || !(total > 0.0)) {
            throw DataError("cannot initialize the occupancy bias: zero built-up mass or census total");
        }
        params.occupancy.head_bias = inverse_softplus(total / mass);
    }
    params.provenance.seed = config.seed;
    params.provenance.epochs = config.epochs;
    params.provenance.dataset = config.dataset_label;

    std::mt19937_64 rng(config.seed);
    OptimState state;
    Eigen::VectorXd theta = flatten_trainable(params);
    const AdamConfig adam = config.adam();
    const bool augment = config.brightness_sigma > 0.0 || config.contrast_sigma > 0.0;

    std::vector<std::size_t> order(set.regions.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<Eigen::MatrixXd> jittered(config.batch_regions);
    const bool external = params.variant == Variant::external_weights;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_at(epoch, config);
        std::shuffle(order.begin(), order.end(), rng);
        std::size_t batch_no = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_regions, ++batch_no) {
            const std::size_t end = std::min(order.size(), start + config.batch_regions);
            std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
            std::sort(batch.begin(), batch.end());  // reduce in region-id order

            std::uniform_int_distribution<std::size_t> pick(0, set.members - 1);
            const std::size_t member = pick(rng);
            std::vector<BandJitter> jitter;
            if (augment) {
                jitter = draw_band_jitter(set.feature_band_index.size(), config.brightness_sigma,
                                          config.contrast_sigma, rng);
            }

            std::vector<RegionItem> items;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const auto& r = set.regions[batch[i]];
                const Eigen::MatrixXd* x = &r.features[member];
                if (augment) {
                    // photometric jitter of the input bands; external weights are not imagery
                    jittered[i] = *x;
                    for (Eigen::Index row = 0; row < jittered[i].rows(); ++row) {
                        const auto& j = jitter[static_cast<std::size_t>(row) / set.window_cells];
                        jittered[i].row(row) = (jittered[i].row(row).array() * j.contrast + j.brightness).matrix();
                    }
                    x = &jittered[i];
                }
                items.push_back({r.region_id, r.census, x, external ? &r.external : nullptr, r.pixel_count});
            }

            Gradients grad = Gradients::zeros_like(params);
            const ObjectiveTerms terms = region_objective(params, items, config.sparsity_weight, &grad);
            if (!std::isfinite(terms.total)) {
                throw NumericalError("non-finite objective at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batch_no));
            }
            const Eigen::VectorXd g = flatten_gradients(params, grad);
            if (!g.allFinite()) {
                throw NumericalError("non-finite gradient at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batch_no));
            }
            adam_step(theta, g, state, lr, adam);
            unflatten_trainable(params, theta);
            result.history.push_back({epoch, batch_no, terms.total, terms.log_l1, terms.sparsity, lr});
        }
    }
    return result;
}

}  // namespace popgrid
