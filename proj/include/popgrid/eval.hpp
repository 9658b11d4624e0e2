#pragma once

#include <cmath>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "popgrid/census.hpp"
#include "popgrid/error.hpp"
#include "popgrid/grid.hpp"
#include "popgrid/regions.hpp"

namespace popgrid {

struct EvalReport {
    double r2 = 0.0;
    double mae = 0.0;
    double rmse = 0.0;
    std::size_t n = 0;
    std::string unit;
};

// R^2 = 1 - SS_res / SS_tot (plain sums), MAE, RMSE.
inline EvalReport metrics(std::span<const double> truth, std::span<const double> pred, std::string unit = {}) {
    if (truth.size() != pred.size()) throw DataError("length mismatch");
    if (truth.size() < 2) throw DataError("need at least two evaluation units");
    const auto n = static_cast<double>(truth.size());
    double mean = 0.0;
    for (double t : truth) mean += t;
    mean /= n;
    double ss_res = 0.0;
    double ss_tot = 0.0;
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double e = truth[i] - pred[i];
        ss_res += e * e;
        abs_sum += std::abs(e);
        ss_tot += (truth[i] - mean) * (truth[i] - mean);
    }
    if (ss_tot == 0.0) throw DataError("zero variance in truth; R^2 undefined");
    EvalReport r;
    r.r2 = 1.0 - ss_res / ss_tot;
    r.mae = abs_sum / n;
    r.rmse = std::sqrt(ss_res / n);
    r.n = truth.size();
    r.unit = std::move(unit);
    return r;
}

// Both grids (band 0) are block-summed by `factor`, then compared over jointly valid cells.
template <class A, class B>
EvalReport evaluate_grid(const BasicGrid<A>& pred, const BasicGrid<B>& truth, std::size_t factor) {
    if (!pred.aligned_with(truth.width(), truth.height(), truth.transform())) {
        throw DataError("misaligned prediction and truth grids");
    }
    const BlockSums p = block_sums(pred, factor);
    const BlockSums t = block_sums(truth, factor);
    const std::size_t cells = p.width * p.height;
    std::vector<double> tv;
    std::vector<double> pv;
    for (std::size_t i = 0; i < cells; ++i) {
        if (p.valid[i] && t.valid[i]) {
            tv.push_back(t.sums[i]);
            pv.push_back(p.sums[i]);
        }
    }
    if (tv.empty()) throw DataError("no jointly valid cells");
    const double side_x = truth.transform().pixel_size_x * static_cast<double>(factor);
    const double side_y = truth.transform().pixel_size_y * static_cast<double>(factor);
    std::ostringstream unit;
    unit << side_x << "x" << side_y << " cell";
    return metrics(tv, pv, unit.str());
}

// Zonal sums of the prediction per block against tabulated block truth.
template <class T>
EvalReport evaluate_blocks(const BasicGrid<T>& pred, const RegionMap& blocks, const CensusTable& truth_table) {
    const ZonalSums sums = zonal_sum(pred, blocks, 0);
    std::vector<double> tv;
    std::vector<double> pv;
    for (const auto& [id, z] : sums) {
        auto it = truth_table.entries.find(id);
        if (it == truth_table.entries.end()) throw DataError("block " + std::to_string(id) + " missing truth");
        tv.push_back(it->second);
        pv.push_back(z.sum);
    }
    if (tv.size() < 2) {
        throw DataError("zero variance: fewer than two blocks");
    }
    return metrics(tv, pv, "census block");
}

// (truth, pred) pairs with values below `floor` replaced by the floor bin.
inline std::string scatter_export(std::span<const double> truth, std::span<const double> pred, double floor) {
    if (truth.size() != pred.size()) throw DataError("length mismatch");
    std::ostringstream out;
    out << "truth,pred\n";
    auto bin = [&](double v) { return v < floor ? floor : v; };
    for (std::size_t i = 0; i < truth.size(); ++i) {
        out << format_double(bin(truth[i])) << ',' << format_double(bin(pred[i])) << '\n';
    }
    return out.str();
}

inline nlohmann::json report_to_json(const EvalReport& r) {
    return nlohmann::json{{"r2", r.r2}, {"mae", r.mae}, {"rmse", r.rmse}, {"n", r.n}, {"unit", r.unit}};
}

}  // namespace popgrid
