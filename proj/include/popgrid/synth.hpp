#pragma once

// Synthetic world with known built-up and occupancy fields. Population is their
// product by construction, so every stage of the pipeline has an exact answer.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "popgrid/census.hpp"
#include "popgrid/error.hpp"
#include "popgrid/grid.hpp"
#include "popgrid/regions.hpp"

namespace popgrid {

struct WorldConfig {
    std::size_t width = 256;
    std::size_t height = 256;
    std::size_t n_regions = 100;
    std::size_t n_blobs = 60;
    double blob_amplitude_min = 2.0;
    double blob_amplitude_max = 6.0;
    double blob_sigma_min = 2.0;
    double blob_sigma_max = 10.0;
    double occupancy_min = 2.0;
    double occupancy_max = 12.0;
    double noise_sigma = 0.05;
    std::size_t s1_bands = 2;
    std::size_t s2_bands = 4;
    std::size_t members = 4;
    double pixel_size = 10.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (width == 0 || height == 0) throw DataError("world dimensions must be positive");
        if (n_regions == 0 || n_regions > width * height) throw DataError("n_regions must lie in [1, width*height]");
        if (!(occupancy_min > 0.0) || occupancy_max < occupancy_min) throw DataError("bad occupancy range");
        if (!(blob_amplitude_min > 0.0) || blob_amplitude_max < blob_amplitude_min) throw DataError("bad blob amplitude range");
        if (!(blob_sigma_min > 0.0) || blob_sigma_max < blob_sigma_min) throw DataError("bad blob sigma range");
        if (noise_sigma < 0.0) throw DataError("noise_sigma must be >= 0");
        if (s1_bands + s2_bands == 0) throw DataError("world needs at least one input band");
        if (members == 0) throw DataError("world needs at least one stack member");
        if (!(pixel_size > 0.0)) throw DataError("pixel_size must be positive");
    }
};

struct World {
    GridStack inputs;
    Grid truth_population;
    Grid truth_builtup;
    Grid truth_occupancy;
    RegionMap regions;
    CensusTable census;
    Grid builtup_labels;
};

inline std::vector<std::string> season_labels(std::size_t n) {
    static const std::array<const char*, 4> names{"spring", "summer", "autumn", "winter"};
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(n <= 4 ? names[i] : "member" + std::to_string(i));
    return out;
}

// Sum of `values` rounded to a multiple of `quantum`.
inline double quantize(double v, double quantum) { return std::round(v / quantum) * quantum; }

// A power-of-two grid fine enough that any partial sum of values up to `total`
// stays exactly representable in a double.
inline double exact_sum_quantum(double total) {
    const int e = static_cast<int>(std::ceil(std::log2(std::max(total, 1.0) + 1.0)));
    return std::ldexp(1.0, e - 52);
}

namespace detail {

// Band recipe: value = a * builtup + b * occ + c * tanh(3 builtup) + d + noise,
// with occ the occupancy normalized to [0, 1].
struct BandRecipe {
    double a, b, c, d;
};

inline BandRecipe s1_recipe(std::size_t k) {
    static const std::array<BandRecipe, 2> r{{{0.0, 0.0, 1.0, -0.5}, {0.3, 0.8, 0.0, 0.0}}};
    const auto base = r[k % r.size()];
    const double shift = 0.1 * static_cast<double>(k / r.size());
    return {base.a, base.b, base.c, base.d + shift};
}

inline BandRecipe s2_recipe(std::size_t k) {
    static const std::array<BandRecipe, 4> r{
        {{1.0, 0.0, 0.0, 0.0}, {0.0, 1.0, 0.0, 0.0}, {0.5, 0.5, 0.0, -0.2}, {0.0, -0.3, 0.7, 0.1}}};
    const auto base = r[k % r.size()];
    const double shift = 0.1 * static_cast<double>(k / r.size());
    return {base.a, base.b, base.c, base.d + shift};
}

}  // namespace detail

inline World generate_world(const WorldConfig& cfg) {
    cfg.validate();
    const std::size_t w = cfg.width;
    const std::size_t h = cfg.height;
    const std::size_t n = w * h;
    const GeoTransform t{0.0, static_cast<double>(h) * cfg.pixel_size, cfg.pixel_size, cfg.pixel_size};
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    // built-up: clipped sum of Gaussian blobs truncated at 3 sigma
    std::vector<double> builtup(n, 0.0);
    for (std::size_t k = 0; k < cfg.n_blobs; ++k) {
        const double cx = unif(rng) * static_cast<double>(w);
        const double cy = unif(rng) * static_cast<double>(h);
        const double sigma = cfg.blob_sigma_min + (cfg.blob_sigma_max - cfg.blob_sigma_min) * unif(rng);
        const double amp = cfg.blob_amplitude_min + (cfg.blob_amplitude_max - cfg.blob_amplitude_min) * unif(rng);
        const double reach = 3.0 * sigma;
        const auto r0 = static_cast<std::size_t>(std::max(0.0, std::floor(cy - reach)));
        const auto r1 = static_cast<std::size_t>(std::min(static_cast<double>(h - 1), std::ceil(cy + reach)));
        const auto c0 = static_cast<std::size_t>(std::max(0.0, std::floor(cx - reach)));
        const auto c1 = static_cast<std::size_t>(std::min(static_cast<double>(w - 1), std::ceil(cx + reach)));
        for (std::size_t r = r0; r <= r1; ++r) {
            for (std::size_t c = c0; c <= c1; ++c) {
                const double dx = static_cast<double>(c) + 0.5 - cx;
                const double dy = static_cast<double>(r) + 0.5 - cy;
                const double d2 = dx * dx + dy * dy;
                if (d2 > reach * reach) continue;
                builtup[r * w + c] += amp * std::exp(-0.5 * d2 / (sigma * sigma));
            }
        }
    }

    // occupancy: tilted ramp plus a gentle wave, normalized to [0, 1]
    const double theta = 2.0 * std::numbers::pi * unif(rng);
    const double phi1 = 2.0 * std::numbers::pi * unif(rng);
    const double phi2 = 2.0 * std::numbers::pi * unif(rng);
    std::vector<double> occ01(n);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const double x = (static_cast<double>(c) + 0.5) / static_cast<double>(w);
            const double y = (static_cast<double>(r) + 0.5) / static_cast<double>(h);
            const double u = (x - 0.5) * std::cos(theta) + (y - 0.5) * std::sin(theta);
            const double wave = std::sin(2.0 * std::numbers::pi * x + phi1) * std::cos(2.0 * std::numbers::pi * y + phi2);
            occ01[r * w + c] = std::clamp(0.5 + 0.6 * u + 0.15 * wave, 0.0, 1.0);
        }
    }

    World world;
    const BandInfo pop_band{"population", FeatureGroup::AUX};
    world.truth_builtup = Grid(w, h, {{"builtup", FeatureGroup::AUX}}, t);
    world.truth_occupancy = Grid(w, h, {{"occupancy", FeatureGroup::AUX}}, t);
    world.truth_population = Grid(w, h, {pop_band}, t);
    world.builtup_labels = Grid(w, h, {{"builtup_label", FeatureGroup::AUX}}, t);
    for (std::size_t p = 0; p < n; ++p) {
        const float b = static_cast<float>(std::min(1.0, builtup[p]));
        const float o = static_cast<float>(cfg.occupancy_min + (cfg.occupancy_max - cfg.occupancy_min) * occ01[p]);
        world.truth_builtup.value(0, p) = b;
        world.truth_occupancy.value(0, p) = o;
        world.truth_population.value(0, p) = b * o;
        world.builtup_labels.value(0, p) = b > 0.5f ? 1.0f : 0.0f;
    }

    // inputs: noisy transforms of the latent fields, independent noise per member
    std::vector<BandInfo> bands;
    std::vector<detail::BandRecipe> recipes;
    for (std::size_t k = 0; k < cfg.s1_bands; ++k) {
        bands.push_back({"S1_" + std::to_string(k), FeatureGroup::S1});
        recipes.push_back(detail::s1_recipe(k));
    }
    for (std::size_t k = 0; k < cfg.s2_bands; ++k) {
        bands.push_back({"S2_" + std::to_string(k), FeatureGroup::S2});
        recipes.push_back(detail::s2_recipe(k));
    }
    std::normal_distribution<double> noise(0.0, 1.0);
    world.inputs.timestamps = season_labels(cfg.members);
    for (std::size_t m = 0; m < cfg.members; ++m) {
        Grid g(w, h, bands, t);
        for (std::size_t b = 0; b < bands.size(); ++b) {
            const auto& rc = recipes[b];
            for (std::size_t p = 0; p < n; ++p) {
                const double bu = world.truth_builtup.value(0, p);
                const double e = cfg.noise_sigma > 0.0 ? cfg.noise_sigma * noise(rng) : 0.0;
                g.value(b, p) = static_cast<float>(rc.a * bu + rc.b * occ01[p] + rc.c * std::tanh(3.0 * bu) + rc.d + e);
            }
        }
        world.inputs.members.push_back(std::move(g));
    }

    // regions: Voronoi cells of distinct random pixel sites, ids 1..n_regions
    std::vector<std::size_t> sites;
    {
        std::vector<std::size_t> all(n);
        for (std::size_t p = 0; p < n; ++p) all[p] = p;
        for (std::size_t k = 0; k < cfg.n_regions; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, n - 1);
            std::swap(all[k], all[pick(rng)]);
            sites.push_back(all[k]);
        }
    }
    world.regions = RegionMap(w, h, t);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < sites.size(); ++k) {
                const double dr = static_cast<double>(sites[k] / w) - static_cast<double>(r);
                const double dc = static_cast<double>(sites[k] % w) - static_cast<double>(c);
                const double d = dr * dr + dc * dc;
                if (d < best_d) {
                    best_d = d;
                    best = k;
                }
            }
            world.regions.at(r, c) = static_cast<std::uint32_t>(best + 1);
        }
    }

    // census: zonal sums of the truth, snapped to a grid on which every partial
    // sum is exact so merged tables conserve the national total bit for bit
    const ZonalSums sums = zonal_sum(world.truth_population, world.regions, 0);
    double total = 0.0;
    for (const auto& [_, z] : sums) total += z.sum;
    const double q = exact_sum_quantum(total);
    world.census.label = "synthetic seed " + std::to_string(cfg.seed);
    for (const auto& [id, z] : sums) world.census.entries[id] = quantize(z.sum, q);
    return world;
}

struct CoarsenedCensus {
    RegionMap map;
    CensusTable census;
    std::vector<MergeStep> log;
};

// Merges regions down to `target_count` and sums the census of merged regions.
inline CoarsenedCensus coarsen_census(const RegionMap& map, const CensusTable& census, std::size_t target_count) {
    MergeResult merged = merge_smallest(map, target_count);
    CoarsenedCensus out{std::move(merged.map), {}, std::move(merged.log)};
    out.census.label = census.label;
    for (const auto& [id, c] : census.entries) {
        auto it = merged.relabel.find(id);
        if (it == merged.relabel.end()) throw DataError("census region " + std::to_string(id) + " not in map");
        out.census.entries[it->second] += c;
    }
    return out;
}

// The census ladder used for scalability experiments.
inline const std::vector<std::size_t>& default_coarsening_schedule() {
    static const std::vector<std::size_t> s{512, 156, 128, 64, 32, 16};
    return s;
}

}  // namespace popgrid
