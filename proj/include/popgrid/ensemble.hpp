#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "popgrid/error.hpp"
#include "popgrid/grid.hpp"
#include "popgrid/predictor.hpp"

namespace popgrid {

enum class BagMode { single, seasons_only, members_only, full };

inline std::string_view to_string(BagMode m) {
    switch (m) {
        case BagMode::single: return "single";
        case BagMode::seasons_only: return "seasons_only";
        case BagMode::members_only: return "members_only";
        case BagMode::full: return "full";
    }
    return "single";
}

inline BagMode parse_bag_mode(std::string_view s) {
    if (s == "single") return BagMode::single;
    if (s == "seasons_only") return BagMode::seasons_only;
    if (s == "members_only") return BagMode::members_only;
    if (s == "full") return BagMode::full;
    throw DataError("unknown bag mode '" + std::string(s) + "'");
}

struct Bag {
    std::vector<PredictorParams> members;
    GridStack composites;
    BagMode mode = BagMode::full;
};

struct BagPrediction {
    // population, builtup, occupancy (means over the selection; builtup and
    // occupancy means are diagnostics, not physical quantities), member_std
    // (population spread across estimates).
    GridD grid;
    std::size_t estimate_count = 0;
};

namespace detail {

// Members ordered by seed, ties broken by their trainable parameters, so the
// reduction order does not depend on how the bag was listed.
inline std::vector<std::size_t> member_order(const std::vector<PredictorParams>& members) {
    std::vector<std::size_t> idx(members.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<Eigen::VectorXd> flat;
    for (const auto& m : members) flat.push_back(flatten_trainable(m));
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (members[a].provenance.seed != members[b].provenance.seed) {
            return members[a].provenance.seed < members[b].provenance.seed;
        }
        return std::lexicographical_compare(flat[a].begin(), flat[a].end(), flat[b].begin(), flat[b].end());
    });
    return idx;
}

inline std::vector<std::size_t> composite_order(const GridStack& stack) {
    std::vector<std::size_t> idx(stack.members.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return stack.timestamps[a] < stack.timestamps[b]; });
    return idx;
}

}  // namespace detail

inline std::size_t estimate_count(BagMode mode, std::size_t members, std::size_t composites) {
    switch (mode) {
        case BagMode::single: return 1;
        case BagMode::seasons_only: return composites;
        case BagMode::members_only: return members;
        case BagMode::full: return members * composites;
    }
    return 0;
}

// Mean over the selected (member x composite) predictions. `single` uses the first
// member and composite, `seasons_only` the first member on every composite and
// `members_only` every member on the first composite, where "first" follows the
// fixed order (member seed, composite label).
inline BagPrediction bag_predict(const Bag& bag, const FeatureConfig& config) {
    if (bag.members.empty()) throw DataError("bag has no members");
    if (bag.composites.members.empty()) throw DataError("bag has no composites");
    bag.composites.validate();
    const auto morder = detail::member_order(bag.members);
    const auto corder = detail::composite_order(bag.composites);

    std::vector<std::size_t> ms{morder.front()};
    std::vector<std::size_t> cs{corder.front()};
    if (bag.mode == BagMode::members_only || bag.mode == BagMode::full) ms = morder;
    if (bag.mode == BagMode::seasons_only || bag.mode == BagMode::full) cs = corder;
    if (ms.empty() || cs.empty()) throw DataError("empty selection");

    std::vector<GridD> preds;
    for (auto m : ms) {
        for (auto c : cs) preds.push_back(population_forward<double>(bag.composites.members[c], bag.members[m], config));
    }
    const GridD& first = preds.front();
    GridD out(first.width(), first.height(),
              {{"population", FeatureGroup::AUX},
               {"builtup", FeatureGroup::AUX},
               {"occupancy", FeatureGroup::AUX},
               {"member_std", FeatureGroup::AUX}},
              first.transform(), 0.0, false);
    for (std::size_t p = 0; p < first.pixel_count(); ++p) {
        for (std::size_t b = 0; b < 3; ++b) {
            double s = 0.0;
            std::size_t n = 0;
            for (const auto& g : preds) {
                if (g.valid(b, p)) {
                    s += g.value(b, p);
                    ++n;
                }
            }
            if (n == 0) continue;
            const double mean = s / static_cast<double>(n);
            out.value(b, p) = mean;
            out.set_valid(b, p, true);
            if (b == 0) {
                double ss = 0.0;
                for (const auto& g : preds) {
                    if (g.valid(0, p)) ss += (g.value(0, p) - mean) * (g.value(0, p) - mean);
                }
                out.value(3, p) = std::sqrt(ss / static_cast<double>(n));
                out.set_valid(3, p, true);
            }
        }
    }
    return {std::move(out), preds.size()};
}

}  // namespace popgrid
