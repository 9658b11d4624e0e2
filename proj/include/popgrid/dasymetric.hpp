#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "popgrid/census.hpp"
#include "popgrid/error.hpp"
#include "popgrid/grid.hpp"
#include "popgrid/regions.hpp"

namespace popgrid {

struct RegionFactor {
    std::uint32_t region_id = 0;
    double predicted_sum = 0.0;
    double census = 0.0;
    double factor = 0.0;  // census / predicted_sum; NaN when predicted_sum == 0
};

struct ScaleFactorReport {
    std::vector<RegionFactor> regions;
    std::size_t positive_regions = 0;  // regions with a positive predicted sum
    double p10 = std::numeric_limits<double>::quiet_NaN();
    double median = std::numeric_limits<double>::quiet_NaN();
    double p90 = std::numeric_limits<double>::quiet_NaN();
    double national_estimate = 0.0;
    double national_census = 0.0;
    double unallocated = 0.0;  // census mass of regions predicted at zero
};

// Quantile of sorted data with linear interpolation between order statistics:
// h = (n - 1) q, result = x[floor h] + (h - floor h) (x[floor h + 1] - x[floor h]).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
    const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

namespace detail {

inline ScaleFactorReport build_report(const ZonalSums& sums, const CensusTable& census) {
    ScaleFactorReport rep;
    std::vector<double> factors;
    for (const auto& [id, z] : sums) {
        auto it = census.entries.find(id);
        if (it == census.entries.end()) throw DataError("region " + std::to_string(id) + " missing from census");
        RegionFactor f{id, z.sum, it->second, std::numeric_limits<double>::quiet_NaN()};
        if (z.sum > 0.0) {
            f.factor = it->second / z.sum;
            factors.push_back(f.factor);
            ++rep.positive_regions;
        } else {
            rep.unallocated += it->second;
        }
        rep.national_estimate += z.sum;
        rep.national_census += it->second;
        rep.regions.push_back(f);
    }
    std::sort(factors.begin(), factors.end());
    rep.p10 = quantile_sorted(factors, 0.1);
    rep.median = quantile_sorted(factors, 0.5);
    rep.p90 = quantile_sorted(factors, 0.9);
    return rep;
}

}  // namespace detail

// Per-region census / predicted ratios on band 0 without touching the map.
template <class T>
ScaleFactorReport scale_factors(const BasicGrid<T>& pop, const RegionMap& map, const CensusTable& census) {
    return detail::build_report(zonal_sum(pop, map, 0), census);
}

template <class T>
struct RescaleResult {
    BasicGrid<T> grid;
    ScaleFactorReport report;
};

// p_adj = p / sum_region(p) * census on band 0. Regions whose prediction sums to 0
// stay at 0 and their census mass is reported as unallocated. Pixels outside every
// region and the remaining bands are copied unchanged.
template <class T>
RescaleResult<T> dasymetric_rescale(const BasicGrid<T>& pop, const RegionMap& map, const CensusTable& census) {
    RescaleResult<T> out{pop, scale_factors(pop, map, census)};
    std::map<std::uint32_t, std::pair<double, double>> ratio;  // id -> (census, sum)
    for (const auto& f : out.report.regions) ratio[f.region_id] = {f.census, f.predicted_sum};
    for (std::size_t p = 0; p < map.indices.size(); ++p) {
        const auto id = map.indices[p];
        if (id == kNoRegion || !pop.valid(0, p)) continue;
        const auto [c, s] = ratio.at(id);
        if (s > 0.0) out.grid.value(0, p) = static_cast<T>(static_cast<double>(pop.value(0, p)) / s * c);
    }
    return out;
}

inline nlohmann::json report_to_json(const ScaleFactorReport& r) {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return nlohmann::json{{"p10", num(r.p10)},
                          {"median", num(r.median)},
                          {"p90", num(r.p90)},
                          {"estimation_national", r.national_estimate},
                          {"census_national", r.national_census},
                          {"unallocated", r.unallocated},
                          {"regions", r.regions.size()},
                          {"positive_regions", r.positive_regions}};
}

inline std::string factors_to_csv(const ScaleFactorReport& r) {
    std::ostringstream out;
    out << "region_id,predicted_sum,census,factor\n";
    for (const auto& f : r.regions) {
        out << f.region_id << ',' << format_double(f.predicted_sum) << ',' << format_double(f.census) << ','
            << (std::isfinite(f.factor) ? format_double(f.factor) : std::string("nan")) << '\n';
    }
    return out.str();
}

}  // namespace popgrid
