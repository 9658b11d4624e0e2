#pragma once

// Synthetic experiment harnesses: end-to-end recovery, census-coarsening ladder and
// the architecture / ensemble / modality ablations.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "popgrid/census.hpp"
#include "popgrid/dasymetric.hpp"
#include "popgrid/ensemble.hpp"
#include "popgrid/eval.hpp"
#include "popgrid/grid.hpp"
#include "popgrid/predictor.hpp"
#include "popgrid/pretrain.hpp"
#include "popgrid/regions.hpp"
#include "popgrid/synth.hpp"
#include "popgrid/training.hpp"

namespace popgrid {

inline constexpr const char* kExternalBand = "external_weight";

// Copy of `stack` with `band` appended to every member as AUX band `name`.
inline GridStack with_external_band(const GridStack& stack, const Grid& band, const std::string& name = kExternalBand) {
    GridStack out = stack;
    for (auto& g : out.members) g.append_band(band, 0, {name, FeatureGroup::AUX});
    return out;
}

inline double median_of(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    return quantile_sorted(v, 0.5);
}

struct ExperimentConfig {
    WorldConfig world;
    TrainConfig train;
    PretrainConfig pretrain;
    FeatureConfig features;
    std::vector<std::size_t> widths{64, 64};
    BagMode bag = BagMode::seasons_only;
    std::size_t eval_factor = 1;
    bool wd_from_difficulty = true;  // lambda_wd from the census difficulty of each dataset
};

inline ExperimentConfig default_experiment() {
    ExperimentConfig c;
    c.train.epochs = 100;
    c.pretrain.epochs = 50;
    c.pretrain.pixels_per_epoch = 8192;
    return c;
}

inline void from_json(const nlohmann::json& j, WorldConfig& w) {
    const WorldConfig d;
    w.width = j.value("width", d.width);
    w.height = j.value("height", d.height);
    w.n_regions = j.value("n_regions", d.n_regions);
    w.n_blobs = j.value("n_blobs", d.n_blobs);
    w.blob_amplitude_min = j.value("blob_amplitude_min", d.blob_amplitude_min);
    w.blob_amplitude_max = j.value("blob_amplitude_max", d.blob_amplitude_max);
    w.blob_sigma_min = j.value("blob_sigma_min", d.blob_sigma_min);
    w.blob_sigma_max = j.value("blob_sigma_max", d.blob_sigma_max);
    w.occupancy_min = j.value("occupancy_min", d.occupancy_min);
    w.occupancy_max = j.value("occupancy_max", d.occupancy_max);
    w.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    w.s1_bands = j.value("s1_bands", d.s1_bands);
    w.s2_bands = j.value("s2_bands", d.s2_bands);
    w.members = j.value("members", d.members);
    w.pixel_size = j.value("pixel_size", d.pixel_size);
    w.seed = j.value("seed", d.seed);
}

inline void to_json(nlohmann::json& j, const WorldConfig& w) {
    j = nlohmann::json{{"width", w.width},
                       {"height", w.height},
                       {"n_regions", w.n_regions},
                       {"n_blobs", w.n_blobs},
                       {"blob_amplitude_min", w.blob_amplitude_min},
                       {"blob_amplitude_max", w.blob_amplitude_max},
                       {"blob_sigma_min", w.blob_sigma_min},
                       {"blob_sigma_max", w.blob_sigma_max},
                       {"occupancy_min", w.occupancy_min},
                       {"occupancy_max", w.occupancy_max},
                       {"noise_sigma", w.noise_sigma},
                       {"s1_bands", w.s1_bands},
                       {"s2_bands", w.s2_bands},
                       {"members", w.members},
                       {"pixel_size", w.pixel_size},
                       {"seed", w.seed}};
}

inline void from_json(const nlohmann::json& j, PretrainConfig& p) {
    const PretrainConfig d;
    p.epochs = j.value("epochs", d.epochs);
    p.lr = j.value("lr", d.lr);
    p.batch_pixels = j.value("batch_pixels", d.batch_pixels);
    p.pixels_per_epoch = j.value("pixels_per_epoch", d.pixels_per_epoch);
    p.seed = j.value("seed", d.seed);
}

inline void to_json(nlohmann::json& j, const PretrainConfig& p) {
    j = nlohmann::json{{"epochs", p.epochs},
                       {"lr", p.lr},
                       {"batch_pixels", p.batch_pixels},
                       {"pixels_per_epoch", p.pixels_per_epoch},
                       {"seed", p.seed}};
}

// {"world": {...}, "train": {...}, "pretrain": {...}, "window_radius": r, "groups": [...]}
inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
    ExperimentConfig c = default_experiment();
    if (j.contains("world")) c.world = j.at("world").get<WorldConfig>();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    if (j.contains("pretrain")) c.pretrain = j.at("pretrain").get<PretrainConfig>();
    c.features.window_radius = j.value("window_radius", c.features.window_radius);
    if (j.contains("groups")) {
        c.features.groups.clear();
        for (const auto& g : j.at("groups")) c.features.groups.insert(parse_feature_group(g.get<std::string>()));
    }
    c.wd_from_difficulty = j.value("wd_from_difficulty", c.wd_from_difficulty);
    c.eval_factor = j.value("eval_factor", c.eval_factor);
    return c;
}

inline nlohmann::json experiment_to_json(const ExperimentConfig& c) {
    nlohmann::json groups = nlohmann::json::array();
    for (auto g : c.features.groups) groups.push_back(std::string(to_string(g)));
    return {{"world", c.world},
            {"train", c.train},
            {"pretrain", c.pretrain},
            {"window_radius", c.features.window_radius},
            {"groups", groups},
            {"wd_from_difficulty", c.wd_from_difficulty},
            {"eval_factor", c.eval_factor}};
}

struct RunOutcome {
    std::string label;
    std::uint64_t seed = 0;
    std::size_t regions = 0;
    double difficulty = 0.0;
    double lambda_wd = 0.0;
    EvalReport raw;
    EvalReport rescaled;
    double seconds = 0.0;
};

inline nlohmann::json outcome_to_json(const RunOutcome& r) {
    return nlohmann::json{{"label", r.label},
                          {"seed", r.seed},
                          {"regions", r.regions},
                          {"difficulty", r.difficulty},
                          {"lambda_wd", r.lambda_wd},
                          {"raw", report_to_json(r.raw)},
                          {"rescaled", report_to_json(r.rescaled)},
                          {"seconds", r.seconds}};
}

// One case of an experiment: which model, which pretrained pieces, which bag.
struct CaseSpec {
    std::string label;
    Variant variant = Variant::factored;
    bool transfer = false;
    std::optional<BranchParams> builtup;  // frozen pretrained branch (factored, or transfer source)
    FeatureConfig features;
    std::size_t bag_members = 1;           // independently seeded models
    BagMode bag = BagMode::seasons_only;
};

// Trains the case on (stack, map, census) and evaluates against the pixel truth.
inline RunOutcome run_case(const CaseSpec& spec, const GridStack& stack, const RegionMap& map,
                           const CensusTable& census, const Grid& truth, const ExperimentConfig& cfg,
                           std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    RunOutcome out;
    out.label = spec.label;
    out.seed = seed;
    out.regions = census.entries.size();
    const auto d = difficulty_of(map);
    out.difficulty = d.difficulty;
    TrainConfig tc = cfg.train;
    if (cfg.wd_from_difficulty) tc.lambda_wd = weight_decay_from_difficulty(d.difficulty);
    out.lambda_wd = tc.lambda_wd;

    Bag bag;
    bag.composites = stack;
    bag.mode = spec.bag;
    for (std::size_t m = 0; m < spec.bag_members; ++m) {
        const std::uint64_t s = seed * 1000 + m;
        std::optional<BranchParams> bu;
        if (spec.variant == Variant::factored) bu = spec.builtup;
        PredictorParams p0 = make_predictor(spec.variant, stack.members.front(), spec.features, s, bu,
                                            spec.variant == Variant::external_weights ? kExternalBand : "",
                                            cfg.widths);
        TrainConfig run = tc;
        run.seed = s;
        run.transfer_hidden = false;
        if (spec.transfer) {
            if (!spec.builtup) throw DataError("transfer needs a pretrained built-up branch");
            transfer_hidden_layers(p0, *spec.builtup);
        }
        bag.members.push_back(train(stack, map, census, p0, run).params);
    }
    if (bag.members.size() > 1 && spec.bag == BagMode::seasons_only) bag.mode = BagMode::full;
    const GridD pred = bag_predict(bag, spec.features).grid.select_bands(std::vector<std::size_t>{0});
    out.raw = evaluate_grid(pred, truth, cfg.eval_factor);
    const auto rescaled = dasymetric_rescale(pred, map, census);
    out.rescaled = evaluate_grid(rescaled.grid, truth, cfg.eval_factor);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// Factored model with the exact built-up field supplied as external weights.
inline RunOutcome run_recovery(const World& world, const ExperimentConfig& cfg, std::uint64_t seed) {
    CaseSpec spec;
    spec.label = "recovery";
    spec.variant = Variant::external_weights;
    spec.features = cfg.features;
    spec.bag = cfg.bag;
    const GridStack stack = with_external_band(world.inputs, world.truth_builtup);
    return run_case(spec, stack, world.regions, world.census, world.truth_population, cfg, seed);
}

inline BranchParams pretrained_builtup(const World& world, const ExperimentConfig& cfg) {
    PretrainConfig pc = cfg.pretrain;
    pc.features = cfg.features;
    pc.widths = cfg.widths;
    return pretrain_builtup(world.inputs, world.builtup_labels, pc).branch;
}

struct LadderStep {
    std::size_t target = 0;
    std::vector<RunOutcome> runs;
    double median_r2 = 0.0;
};

// Coarsens the census step by step and retrains the factored model at each level.
inline std::vector<LadderStep> run_ladder(const World& world, const BranchParams& builtup,
                                          const std::vector<std::size_t>& targets,
                                          const std::vector<std::uint64_t>& seeds, const ExperimentConfig& cfg) {
    std::vector<LadderStep> steps;
    RegionMap map = world.regions;
    CensusTable census = world.census;
    CaseSpec spec;
    spec.variant = Variant::factored;
    spec.transfer = true;
    spec.builtup = builtup;
    spec.features = cfg.features;
    spec.bag = cfg.bag;
    for (auto target : targets) {
        if (target < census.entries.size()) {
            auto c = coarsen_census(map, census, target);
            map = std::move(c.map);
            census = std::move(c.census);
        }
        LadderStep step{target, {}, 0.0};
        std::vector<double> r2;
        for (auto s : seeds) {
            spec.label = "ladder_" + std::to_string(census.entries.size());
            step.runs.push_back(run_case(spec, world.inputs, map, census, world.truth_population, cfg, s));
            r2.push_back(step.runs.back().raw.r2);
        }
        step.median_r2 = median_of(r2);
        steps.push_back(std::move(step));
    }
    return steps;
}

struct AblationRow {
    std::string label;
    std::vector<RunOutcome> runs;
    double median_r2 = 0.0;
    double median_mae = 0.0;
    double median_rmse = 0.0;
};

inline AblationRow summarize(std::string label, std::vector<RunOutcome> runs) {
    AblationRow row{std::move(label), std::move(runs), 0.0, 0.0, 0.0};
    std::vector<double> r2;
    std::vector<double> mae;
    std::vector<double> rmse;
    for (const auto& r : row.runs) {
        r2.push_back(r.raw.r2);
        mae.push_back(r.raw.mae);
        rmse.push_back(r.raw.rmse);
    }
    row.median_r2 = median_of(r2);
    row.median_mae = median_of(mae);
    row.median_rmse = median_of(rmse);
    return row;
}

inline nlohmann::json row_to_json(const AblationRow& row) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : row.runs) runs.push_back(outcome_to_json(r));
    return nlohmann::json{{"label", row.label},
                          {"median_r2", row.median_r2},
                          {"median_mae", row.median_mae},
                          {"median_rmse", row.median_rmse},
                          {"runs", runs}};
}

inline std::vector<AblationRow> run_cases(const std::vector<CaseSpec>& cases, const GridStack& stack,
                                          const RegionMap& map, const CensusTable& census, const Grid& truth,
                                          const std::vector<std::uint64_t>& seeds, const ExperimentConfig& cfg) {
    std::vector<AblationRow> rows;
    for (const auto& c : cases) {
        std::vector<RunOutcome> runs;
        for (auto s : seeds) runs.push_back(run_case(c, stack, map, census, truth, cfg, s));
        rows.push_back(summarize(c.label, std::move(runs)));
    }
    return rows;
}

// Cases A-D: {factored, direct} x {hidden-layer transfer, fresh init}.
inline std::vector<CaseSpec> architecture_cases(const BranchParams& builtup, const FeatureConfig& features) {
    std::vector<CaseSpec> out;
    const std::array<std::pair<Variant, bool>, 4> grid{
        {{Variant::factored, true}, {Variant::direct, true}, {Variant::factored, false}, {Variant::direct, false}}};
    const std::array<const char*, 4> names{"A_factored_transfer", "B_direct_transfer", "C_factored_scratch",
                                           "D_direct_scratch"};
    for (std::size_t i = 0; i < 4; ++i) {
        CaseSpec c;
        c.label = names[i];
        c.variant = grid[i].first;
        c.transfer = grid[i].second;
        c.builtup = builtup;
        c.features = features;
        out.push_back(std::move(c));
    }
    return out;
}

// Bag sizes: one model on one composite, seasonal composites, seeds, both.
inline std::vector<CaseSpec> ensemble_cases(const BranchParams& builtup, const FeatureConfig& features,
                                            std::size_t members) {
    std::vector<CaseSpec> out;
    const std::array<std::pair<const char*, BagMode>, 4> modes{{{"single", BagMode::single},
                                                                {"seasons_only", BagMode::seasons_only},
                                                                {"members_only", BagMode::members_only},
                                                                {"full", BagMode::full}}};
    for (const auto& [name, mode] : modes) {
        CaseSpec c;
        c.label = name;
        c.variant = Variant::factored;
        c.transfer = true;
        c.builtup = builtup;
        c.features = features;
        c.bag = mode;
        c.bag_members = (mode == BagMode::members_only || mode == BagMode::full) ? members : 1;
        out.push_back(std::move(c));
    }
    return out;
}

// Input modalities: S1 only, S2 only, both. Each case gets its own built-up branch.
inline std::vector<CaseSpec> modality_cases(const World& world, const ExperimentConfig& cfg) {
    std::vector<CaseSpec> out;
    const std::array<std::pair<const char*, std::set<FeatureGroup>>, 3> sets{
        {{"S1", {FeatureGroup::S1}}, {"S2", {FeatureGroup::S2}}, {"S1+S2", {FeatureGroup::S1, FeatureGroup::S2}}}};
    for (const auto& [name, groups] : sets) {
        ExperimentConfig c = cfg;
        c.features.groups = groups;
        CaseSpec spec;
        spec.label = name;
        spec.variant = Variant::factored;
        spec.transfer = true;
        spec.features = c.features;
        spec.builtup = pretrained_builtup(world, c);
        out.push_back(std::move(spec));
    }
    return out;
}

}  // namespace popgrid
