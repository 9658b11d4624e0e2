#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "popgrid/error.hpp"
#include "popgrid/grid.hpp"
#include "popgrid/gridpack.hpp"

namespace popgrid {

inline constexpr std::uint32_t kNoRegion = 0xFFFFFFFFu;

struct Point {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point&, const Point&) = default;
};

using Ring = std::vector<Point>;     // closed: front() == back()
using Polygon = std::vector<Ring>;   // exterior first, then holes

struct Region {
    std::uint32_t region_id = 0;
    std::vector<Polygon> polygons;
};

struct RegionPartition {
    std::vector<Region> regions;
};

// Per-pixel region ids aligned to a Grid; kNoRegion marks pixels outside every region.
struct RegionMap {
    std::size_t width = 0;
    std::size_t height = 0;
    GeoTransform transform;
    std::vector<std::uint32_t> indices;

    RegionMap() = default;
    RegionMap(std::size_t w, std::size_t h, GeoTransform t, std::uint32_t fill = kNoRegion)
        : width(w), height(h), transform(t), indices(w * h, fill) {}

    std::size_t pixel_count() const { return width * height; }
    std::uint32_t at(std::size_t row, std::size_t col) const { return indices[row * width + col]; }
    std::uint32_t& at(std::size_t row, std::size_t col) { return indices[row * width + col]; }

    std::vector<std::uint32_t> ids() const {
        std::set<std::uint32_t> s;
        for (auto v : indices) {
            if (v != kNoRegion) s.insert(v);
        }
        return {s.begin(), s.end()};
    }

    std::map<std::uint32_t, std::size_t> pixel_counts() const {
        std::map<std::uint32_t, std::size_t> c;
        for (auto v : indices) {
            if (v != kNoRegion) ++c[v];
        }
        return c;
    }

    // Pixel indices per region, ascending within each region.
    std::map<std::uint32_t, std::vector<std::size_t>> members() const {
        std::map<std::uint32_t, std::vector<std::size_t>> m;
        for (std::size_t p = 0; p < indices.size(); ++p) {
            if (indices[p] != kNoRegion) m[indices[p]].push_back(p);
        }
        return m;
    }

    template <class T>
    bool aligned_with(const BasicGrid<T>& g) const {
        return g.aligned_with(width, height, transform);
    }
    bool aligned_with(const RegionMap& o) const {
        return width == o.width && height == o.height && transform == o.transform;
    }

    friend bool operator==(const RegionMap&, const RegionMap&) = default;
};

// ---------------------------------------------------------------------------
// GeoJSON subset: FeatureCollection of Polygon / MultiPolygon features carrying
// an integer "region_id" property.

namespace detail {

inline Ring parse_ring(const nlohmann::json& j) {
    if (!j.is_array()) throw FormatError("malformed geometry: ring is not an array");
    Ring ring;
    for (const auto& pt : j) {
        if (!pt.is_array() || pt.size() < 2 || !pt[0].is_number() || !pt[1].is_number()) {
            throw FormatError("malformed geometry: position must be [x, y]");
        }
        ring.push_back({pt[0].get<double>(), pt[1].get<double>()});
    }
    if (ring.size() < 4) throw FormatError("malformed geometry: ring needs at least 3 distinct vertices");
    if (!(ring.front() == ring.back())) throw FormatError("malformed geometry: ring is not closed");
    return ring;
}

inline Polygon parse_polygon(const nlohmann::json& j) {
    if (!j.is_array() || j.empty()) throw FormatError("malformed geometry: polygon needs an exterior ring");
    Polygon poly;
    for (const auto& r : j) poly.push_back(parse_ring(r));
    return poly;
}

}  // namespace detail

inline RegionPartition parse_regions(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed JSON: ") + e.what());
    }
    if (!doc.is_object() || doc.value("type", "") != "FeatureCollection" || !doc.contains("features") ||
        !doc["features"].is_array()) {
        throw FormatError("malformed JSON: expected a FeatureCollection");
    }
    RegionPartition out;
    std::set<std::uint32_t> seen;
    for (const auto& f : doc["features"]) {
        if (!f.is_object() || !f.contains("geometry") || !f["geometry"].is_object()) {
            throw FormatError("malformed JSON: feature without geometry");
        }
        const auto& geom = f["geometry"];
        const std::string type = geom.value("type", "");
        if (type != "Polygon" && type != "MultiPolygon") throw FormatError("unsupported geometry '" + type + "'");

        if (!f.contains("properties") || !f["properties"].is_object() || !f["properties"].contains("region_id")) {
            throw FormatError("missing region_id");
        }
        const auto& rid = f["properties"]["region_id"];
        if (!rid.is_number_integer() || rid.get<std::int64_t>() < 0 ||
            rid.get<std::int64_t>() >= static_cast<std::int64_t>(kNoRegion)) {
            throw FormatError("region_id must be an integer in [0, 2^32 - 1)");
        }
        const auto id = static_cast<std::uint32_t>(rid.get<std::int64_t>());
        if (!seen.insert(id).second) throw FormatError("duplicate region_id " + std::to_string(id));

        Region region;
        region.region_id = id;
        if (!geom.contains("coordinates")) throw FormatError("malformed geometry: no coordinates");
        if (type == "Polygon") {
            region.polygons.push_back(detail::parse_polygon(geom["coordinates"]));
        } else {
            if (!geom["coordinates"].is_array()) throw FormatError("malformed geometry: MultiPolygon coordinates");
            for (const auto& p : geom["coordinates"]) region.polygons.push_back(detail::parse_polygon(p));
        }
        out.regions.push_back(std::move(region));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rasterization: a pixel belongs to a region iff its center is inside the
// region's rings under the even-odd rule, or exactly on one of its edges.
// Overlaps (shared edges included) go to the lowest region_id.

namespace detail {

inline void mark_boundary(const Ring& ring, const GeoTransform& t, std::size_t width, std::size_t height,
                          std::vector<std::uint8_t>& cover) {
    auto col_of = [&](double x) { return (x - t.origin_x) / t.pixel_size_x - 0.5; };
    auto row_of = [&](double y) { return (t.origin_y - y) / t.pixel_size_y - 0.5; };
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
        const Point a = ring[i];
        const Point b = ring[i + 1];
        const double rlo = std::ceil(row_of(std::max(a.y, b.y)));
        const double rhi = std::floor(row_of(std::min(a.y, b.y)));
        for (double rr = std::max(0.0, rlo); rr <= rhi && rr < static_cast<double>(height); rr += 1.0) {
            const auto row = static_cast<std::size_t>(rr);
            const double yc = t.center_y(row);
            if (yc < std::min(a.y, b.y) || yc > std::max(a.y, b.y)) continue;
            if (a.y == b.y) {
                const double clo = std::ceil(col_of(std::min(a.x, b.x)));
                const double chi = std::floor(col_of(std::max(a.x, b.x)));
                for (double cc = std::max(0.0, clo); cc <= chi && cc < static_cast<double>(width); cc += 1.0) {
                    const auto col = static_cast<std::size_t>(cc);
                    const double xc = t.center_x(col);
                    if (xc >= std::min(a.x, b.x) && xc <= std::max(a.x, b.x)) cover[row * width + col] = 1;
                }
            } else {
                const double x = a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y);
                const double cc = std::round(col_of(x));
                if (cc >= 0.0 && cc < static_cast<double>(width)) {
                    const auto col = static_cast<std::size_t>(cc);
                    if (t.center_x(col) == x) cover[row * width + col] = 1;
                }
            }
        }
    }
}

// Pixel-center coverage of one region's polygon set.
inline std::vector<std::uint8_t> region_coverage(const Region& region, const GeoTransform& t, std::size_t width,
                                                 std::size_t height) {
    std::vector<std::uint8_t> cover(width * height, 0);
    std::vector<const Ring*> rings;
    double ymin = std::numeric_limits<double>::infinity();
    double ymax = -ymin;
    for (const auto& poly : region.polygons) {
        for (const auto& ring : poly) {
            rings.push_back(&ring);
            for (const auto& p : ring) {
                ymin = std::min(ymin, p.y);
                ymax = std::max(ymax, p.y);
            }
        }
    }
    if (rings.empty()) return cover;

    const double rlo = std::max(0.0, std::ceil((t.origin_y - ymax) / t.pixel_size_y - 0.5));
    const double rhi = std::floor((t.origin_y - ymin) / t.pixel_size_y - 0.5);
    std::vector<double> xs;
    for (double rr = rlo; rr <= rhi && rr < static_cast<double>(height); rr += 1.0) {
        const auto row = static_cast<std::size_t>(rr);
        const double yc = t.center_y(row);
        xs.clear();
        for (const Ring* ring : rings) {
            for (std::size_t i = 0; i + 1 < ring->size(); ++i) {
                const Point a = (*ring)[i];
                const Point b = (*ring)[i + 1];
                if ((a.y > yc) != (b.y > yc)) xs.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            const double xa = xs[k];
            const double xb = xs[k + 1];
            double c0 = std::max(0.0, std::ceil((xa - t.origin_x) / t.pixel_size_x - 0.5));
            // correct for rounding in the division so the test below is authoritative
            while (c0 > 0.0 && t.center_x(static_cast<std::size_t>(c0 - 1.0)) >= xa) c0 -= 1.0;
            for (double cc = c0; cc < static_cast<double>(width); cc += 1.0) {
                const auto col = static_cast<std::size_t>(cc);
                const double xc = t.center_x(col);
                if (xc > xb) break;
                if (xc > xa && xc < xb) cover[row * width + col] = 1;
            }
        }
    }
    for (const Ring* ring : rings) mark_boundary(*ring, t, width, height, cover);
    return cover;
}

}  // namespace detail

inline RegionMap rasterize(const RegionPartition& partition, const GeoTransform& transform, std::size_t width,
                           std::size_t height) {
    if (width == 0 || height == 0) throw DataError("zero-area raster");
    if (!(transform.pixel_size_x > 0.0) || !(transform.pixel_size_y > 0.0)) {
        throw DataError("pixel sizes must be positive");
    }
    std::vector<const Region*> order;
    for (const auto& r : partition.regions) order.push_back(&r);
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->region_id < b->region_id; });

    RegionMap map(width, height, transform);
    for (const Region* r : order) {
        const auto cover = detail::region_coverage(*r, transform, width, height);
        for (std::size_t p = 0; p < cover.size(); ++p) {
            if (cover[p] && map.indices[p] == kNoRegion) map.indices[p] = r->region_id;
        }
    }
    return map;
}

// ---------------------------------------------------------------------------
// Region merging: the globally smallest region absorbs into (or is absorbed by)
// its smallest rook-adjacent neighbor; the merged region keeps the smaller id.
// Ties on pixel count go to the lower id.

struct MergeStep {
    std::uint32_t smallest_id = 0;
    std::uint32_t partner_id = 0;
    std::uint32_t kept_id = 0;
    std::size_t smallest_pixels = 0;
    std::size_t partner_pixels = 0;
    bool centroid_fallback = false;  // smallest region had no neighbor
};

struct MergeResult {
    RegionMap map;
    std::vector<MergeStep> log;
    std::map<std::uint32_t, std::uint32_t> relabel;  // original id -> surviving id
};

inline MergeResult merge_smallest(const RegionMap& input, std::size_t target_count) {
    auto counts = input.pixel_counts();
    if (target_count < 1 || counts.size() < target_count) {
        throw DataError("merge target must satisfy 1 <= target <= current region count");
    }
    struct Centroid {
        double sx = 0.0;
        double sy = 0.0;
    };
    std::map<std::uint32_t, Centroid> centroid;
    std::map<std::uint32_t, std::set<std::uint32_t>> adj;
    for (auto& [id, _] : counts) adj[id];
    for (std::size_t r = 0; r < input.height; ++r) {
        for (std::size_t c = 0; c < input.width; ++c) {
            const auto id = input.at(r, c);
            if (id == kNoRegion) continue;
            centroid[id].sx += static_cast<double>(c);
            centroid[id].sy += static_cast<double>(r);
            if (c + 1 < input.width) {
                const auto o = input.at(r, c + 1);
                if (o != kNoRegion && o != id) {
                    adj[id].insert(o);
                    adj[o].insert(id);
                }
            }
            if (r + 1 < input.height) {
                const auto o = input.at(r + 1, c);
                if (o != kNoRegion && o != id) {
                    adj[id].insert(o);
                    adj[o].insert(id);
                }
            }
        }
    }

    MergeResult out;
    for (auto& [id, _] : counts) out.relabel[id] = id;
    auto smaller = [&](std::uint32_t a, std::uint32_t b) {
        return counts[a] != counts[b] ? counts[a] < counts[b] : a < b;
    };

    while (counts.size() > target_count) {
        std::uint32_t s = counts.begin()->first;
        for (auto& [id, _] : counts) {
            if (smaller(id, s)) s = id;
        }
        MergeStep step;
        step.smallest_id = s;
        step.smallest_pixels = counts[s];
        std::uint32_t partner = kNoRegion;
        if (!adj[s].empty()) {
            for (auto n : adj[s]) {
                if (partner == kNoRegion || smaller(n, partner)) partner = n;
            }
        } else {
            step.centroid_fallback = true;
            const double cx = centroid[s].sx / static_cast<double>(counts[s]);
            const double cy = centroid[s].sy / static_cast<double>(counts[s]);
            double best = std::numeric_limits<double>::infinity();
            for (auto& [id, n] : counts) {
                if (id == s) continue;
                const double dx = centroid[id].sx / static_cast<double>(n) - cx;
                const double dy = centroid[id].sy / static_cast<double>(n) - cy;
                const double d = dx * dx + dy * dy;
                if (d < best) {
                    best = d;
                    partner = id;
                }
            }
        }
        step.partner_id = partner;
        step.partner_pixels = counts[partner];
        const std::uint32_t keep = std::min(s, partner);
        const std::uint32_t gone = std::max(s, partner);
        step.kept_id = keep;

        counts[keep] += counts[gone];
        counts.erase(gone);
        centroid[keep].sx += centroid[gone].sx;
        centroid[keep].sy += centroid[gone].sy;
        centroid.erase(gone);
        for (auto n : adj[gone]) {
            adj[n].erase(gone);
            if (n != keep) {
                adj[n].insert(keep);
                adj[keep].insert(n);
            }
        }
        adj.erase(gone);
        adj[keep].erase(keep);
        for (auto& [orig, cur] : out.relabel) {
            if (cur == gone) cur = keep;
        }
        out.log.push_back(step);
    }

    out.map = input;
    for (auto& v : out.map.indices) {
        if (v != kNoRegion) v = out.relabel.at(v);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Boundary matching by pixel-set intersection-over-union. For each region of
// `a`, its best partner in `b` (ties: lower id) is reported when IoU >= threshold.

struct IouMatch {
    std::uint32_t id_a = 0;
    std::uint32_t id_b = 0;
    double iou = 0.0;
};

inline std::vector<IouMatch> iou_match(const RegionMap& a, const RegionMap& b, double threshold) {
    if (!a.aligned_with(b)) throw DataError("misaligned rasters");
    if (!(threshold > 0.0 && threshold <= 1.0)) throw DataError("threshold must lie in (0, 1]");
    const auto ca = a.pixel_counts();
    const auto cb = b.pixel_counts();
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> inter;
    for (std::size_t p = 0; p < a.indices.size(); ++p) {
        if (a.indices[p] != kNoRegion && b.indices[p] != kNoRegion) ++inter[{a.indices[p], b.indices[p]}];
    }
    std::vector<IouMatch> out;
    auto it = inter.begin();
    for (const auto& [ida, na] : ca) {
        IouMatch best{ida, kNoRegion, 0.0};
        for (; it != inter.end() && it->first.first == ida; ++it) {
            const double i = static_cast<double>(it->second);
            const double u = static_cast<double>(na + cb.at(it->first.second)) - i;
            const double iou = i / u;
            if (iou > best.iou) best = {ida, it->first.second, iou};
        }
        if (best.id_b != kNoRegion && best.iou >= threshold) out.push_back(best);
    }
    return out;
}

// ---------------------------------------------------------------------------
// RegionMap persistence: GridPack with dtype u32 and a single "region_id" band.

inline void write_region_map(const RegionMap& map, const std::filesystem::path& path) {
    RawPack pack;
    pack.width = map.width;
    pack.height = map.height;
    pack.dtype = PackDtype::u32;
    pack.transform = map.transform;
    pack.bands = {{"region_id", FeatureGroup::AUX}};
    pack.words = map.indices;
    pack.mask.resize(map.indices.size());
    for (std::size_t i = 0; i < map.indices.size(); ++i) pack.mask[i] = map.indices[i] != kNoRegion ? 1 : 0;
    write_file_bytes(path, encode_gridpack(pack));
}

inline RegionMap read_region_map(const std::filesystem::path& path) {
    const RawPack pack = decode_gridpack(read_file_bytes(path));
    if (pack.dtype != PackDtype::u32) throw FormatError("expected dtype u32 for a region map");
    if (pack.bands.size() != 1) throw FormatError("region map must have exactly one band");
    RegionMap map(pack.width, pack.height, pack.transform);
    for (std::size_t i = 0; i < pack.words.size(); ++i) map.indices[i] = pack.mask[i] ? pack.words[i] : kNoRegion;
    return map;
}

}  // namespace popgrid
