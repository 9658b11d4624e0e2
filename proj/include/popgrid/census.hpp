#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "popgrid/error.hpp"
#include "popgrid/grid.hpp"
#include "popgrid/regions.hpp"

namespace popgrid {

struct CensusTable {
    std::map<std::uint32_t, double> entries;  // region_id -> persons
    std::string label;

    double total() const {
        double s = 0.0;
        for (const auto& [_, c] : entries) s += c;
        return s;
    }
    bool contains(std::uint32_t id) const { return entries.count(id) != 0; }
};

struct ZonalValue {
    double sum = 0.0;
    std::size_t valid_cells = 0;
    bool empty() const { return valid_cells == 0; }
};

using ZonalSums = std::map<std::uint32_t, ZonalValue>;

// Per-region sum of valid cells of `band`. Regions without any valid cell report
// a zero sum and empty() == true.
template <class T>
ZonalSums zonal_sum(const BasicGrid<T>& grid, const RegionMap& map, std::size_t band = 0) {
    if (!map.aligned_with(grid)) throw DataError("misaligned inputs: grid and region map differ");
    if (band >= grid.band_count()) throw DataError("zonal_sum: band out of range");
    ZonalSums out;
    for (auto id : map.ids()) out[id];
    for (std::size_t p = 0; p < map.indices.size(); ++p) {
        const auto id = map.indices[p];
        if (id == kNoRegion || !grid.valid(band, p)) continue;
        auto& z = out[id];
        z.sum += grid.value(band, p);
        ++z.valid_cells;
    }
    return out;
}

struct DatasetDifficulty {
    double upscaling = 0.0;   // S
    std::size_t n_regions = 0;  // N
    double difficulty = 0.0;  // D = S / N
};

inline DatasetDifficulty difficulty(double avg_region_area, double cell_area, std::size_t n_regions) {
    if (!(avg_region_area > 0.0) || !(cell_area > 0.0) || n_regions < 1) {
        throw DataError("difficulty requires positive areas and at least one region");
    }
    DatasetDifficulty d;
    d.upscaling = avg_region_area / cell_area;
    d.n_regions = n_regions;
    d.difficulty = d.upscaling / static_cast<double>(n_regions);
    return d;
}

// Difficulty of a rasterized partition against a target output cell area
// (1 ha = 10'000 map units^2 for metric grids). Uses the mean region area.
inline DatasetDifficulty difficulty_of(const RegionMap& map, double target_cell_area = 10'000.0) {
    const auto counts = map.pixel_counts();
    if (counts.empty()) throw DataError("difficulty of an empty region map");
    double total = 0.0;
    for (const auto& [_, n] : counts) total += static_cast<double>(n);
    const double mean_area = total / static_cast<double>(counts.size()) * map.transform.cell_area();
    return difficulty(mean_area, target_cell_area, counts.size());
}

namespace detail {

inline std::string trim(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    return s.substr(i);
}

}  // namespace detail

inline CensusTable parse_census_csv(const std::string& text, std::string label = {}) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || detail::trim(line) != "region_id,count") {
        throw FormatError("census CSV must start with header 'region_id,count'");
    }
    CensusTable table;
    table.label = std::move(label);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
            throw FormatError("malformed row at line " + std::to_string(lineno));
        }
        const std::string id_s = detail::trim(line.substr(0, comma));
        const std::string count_s = detail::trim(line.substr(comma + 1));
        std::uint64_t id = 0;
        auto [p1, e1] = std::from_chars(id_s.data(), id_s.data() + id_s.size(), id);
        if (e1 != std::errc() || p1 != id_s.data() + id_s.size() || id >= kNoRegion) {
            throw FormatError("malformed row at line " + std::to_string(lineno) + ": bad region_id");
        }
        double count = 0.0;
        auto [p2, e2] = std::from_chars(count_s.data(), count_s.data() + count_s.size(), count);
        if (e2 != std::errc() || p2 != count_s.data() + count_s.size() || !std::isfinite(count)) {
            throw FormatError("malformed row at line " + std::to_string(lineno) + ": bad count");
        }
        if (count < 0.0) throw DataError("negative count for region " + id_s);
        if (!table.entries.emplace(static_cast<std::uint32_t>(id), count).second) {
            throw DataError("duplicate region_id " + id_s);
        }
    }
    return table;
}

inline CensusTable load_census_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_census_csv(ss.str(), path.filename().string());
}

inline std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

inline std::string census_to_csv(const CensusTable& table) {
    std::string out = "region_id,count\n";
    for (const auto& [id, c] : table.entries) out += std::to_string(id) + "," + format_double(c) + "\n";
    return out;
}

inline void write_census_csv(const CensusTable& table, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << census_to_csv(table);
}

}  // namespace popgrid
