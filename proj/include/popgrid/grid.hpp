#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "popgrid/error.hpp"

namespace popgrid {

enum class FeatureGroup { S1, S2, AUX };

inline std::string_view to_string(FeatureGroup g) {
    switch (g) {
        case FeatureGroup::S1: return "S1";
        case FeatureGroup::S2: return "S2";
        case FeatureGroup::AUX: return "AUX";
    }
    return "AUX";
}

inline FeatureGroup parse_feature_group(std::string_view s) {
    if (s == "S1") return FeatureGroup::S1;
    if (s == "S2") return FeatureGroup::S2;
    if (s == "AUX") return FeatureGroup::AUX;
    throw FormatError("unknown feature group '" + std::string(s) + "'");
}

// Affine pixel -> map mapping for a north-up raster. Pixel (col, row) has its
// center at (origin_x + (col + 0.5) * pixel_size_x, origin_y - (row + 0.5) * pixel_size_y).
struct GeoTransform {
    double origin_x = 0.0;
    double origin_y = 0.0;
    double pixel_size_x = 1.0;
    double pixel_size_y = 1.0;

    double center_x(std::size_t col) const { return origin_x + (static_cast<double>(col) + 0.5) * pixel_size_x; }
    double center_y(std::size_t row) const { return origin_y - (static_cast<double>(row) + 0.5) * pixel_size_y; }
    double cell_area() const { return pixel_size_x * pixel_size_y; }

    friend bool operator==(const GeoTransform&, const GeoTransform&) = default;
};

struct BandInfo {
    std::string name;
    FeatureGroup group = FeatureGroup::AUX;

    friend bool operator==(const BandInfo&, const BandInfo&) = default;
};

// Multi-band raster, band-sequential and row-major, with a per-cell-per-band
// validity mask. Invalid cells keep whatever value they hold but are ignored by
// every statistic. Storage and files use float; double grids carry results that
// must conserve mass beyond single precision (rescaled maps, ensemble means).
template <class T>
class BasicGrid {
public:
    using value_type = T;

    BasicGrid() = default;

    BasicGrid(std::size_t width, std::size_t height, std::vector<BandInfo> bands, GeoTransform transform = {},
              T fill = T{}, bool valid = true)
        : width_(width),
          height_(height),
          bands_(std::move(bands)),
          transform_(transform),
          values_(width * height * bands_.size(), fill),
          mask_(width * height * bands_.size(), valid ? 1 : 0) {
        if (!(transform_.pixel_size_x > 0.0) || !(transform_.pixel_size_y > 0.0)) {
            throw DataError("pixel sizes must be positive");
        }
    }

    std::size_t width() const { return width_; }
    std::size_t height() const { return height_; }
    std::size_t band_count() const { return bands_.size(); }
    std::size_t pixel_count() const { return width_ * height_; }
    const GeoTransform& transform() const { return transform_; }
    void set_transform(const GeoTransform& t) { transform_ = t; }
    const std::vector<BandInfo>& bands() const { return bands_; }
    const BandInfo& band_info(std::size_t b) const { return bands_.at(b); }

    std::size_t index(std::size_t band, std::size_t row, std::size_t col) const {
        return (band * height_ + row) * width_ + col;
    }

    T value(std::size_t band, std::size_t pixel) const { return values_[band * pixel_count() + pixel]; }
    T& value(std::size_t band, std::size_t pixel) { return values_[band * pixel_count() + pixel]; }
    bool valid(std::size_t band, std::size_t pixel) const { return mask_[band * pixel_count() + pixel] != 0; }
    void set_valid(std::size_t band, std::size_t pixel, bool v) { mask_[band * pixel_count() + pixel] = v ? 1 : 0; }

    T at(std::size_t band, std::size_t row, std::size_t col) const { return values_[index(band, row, col)]; }
    T& at(std::size_t band, std::size_t row, std::size_t col) { return values_[index(band, row, col)]; }

    std::span<const T> band(std::size_t b) const {
        return std::span<const T>(values_).subspan(b * pixel_count(), pixel_count());
    }
    std::span<T> band(std::size_t b) { return std::span<T>(values_).subspan(b * pixel_count(), pixel_count()); }
    std::span<const std::uint8_t> band_mask(std::size_t b) const {
        return std::span<const std::uint8_t>(mask_).subspan(b * pixel_count(), pixel_count());
    }

    const std::vector<T>& values() const { return values_; }
    std::vector<T>& values() { return values_; }
    const std::vector<std::uint8_t>& mask() const { return mask_; }
    std::vector<std::uint8_t>& mask() { return mask_; }

    // Index of the band with the given name, or band_count() if absent.
    std::size_t find_band(std::string_view name) const {
        for (std::size_t b = 0; b < bands_.size(); ++b) {
            if (bands_[b].name == name) return b;
        }
        return bands_.size();
    }

    bool same_layout(const BasicGrid& o) const {
        return width_ == o.width_ && height_ == o.height_ && transform_ == o.transform_ && bands_ == o.bands_;
    }
    bool aligned_with(std::size_t w, std::size_t h, const GeoTransform& t) const {
        return width_ == w && height_ == h && transform_ == t;
    }

    // A new grid holding only the listed bands, in the listed order.
    BasicGrid select_bands(std::span<const std::size_t> which) const {
        std::vector<BandInfo> info;
        for (auto b : which) info.push_back(bands_.at(b));
        BasicGrid out(width_, height_, std::move(info), transform_);
        for (std::size_t i = 0; i < which.size(); ++i) {
            std::copy_n(values_.begin() + which[i] * pixel_count(), pixel_count(),
                        out.values_.begin() + i * pixel_count());
            std::copy_n(mask_.begin() + which[i] * pixel_count(), pixel_count(), out.mask_.begin() + i * pixel_count());
        }
        return out;
    }

    // Appends band 0 of `other` (same width/height/transform) under a new name.
    void append_band(const BasicGrid& other, std::size_t other_band, BandInfo info) {
        if (!other.aligned_with(width_, height_, transform_)) throw DataError("appended band is misaligned");
        bands_.push_back(std::move(info));
        auto src = other.band(other_band);
        auto msk = other.band_mask(other_band);
        values_.insert(values_.end(), src.begin(), src.end());
        mask_.insert(mask_.end(), msk.begin(), msk.end());
    }

    friend bool operator==(const BasicGrid&, const BasicGrid&) = default;

    template <class U>
    friend class BasicGrid;

    template <class U>
    BasicGrid<U> cast() const {
        BasicGrid<U> out(width_, height_, bands_, transform_);
        for (std::size_t i = 0; i < values_.size(); ++i) out.values_[i] = static_cast<U>(values_[i]);
        out.mask_ = mask_;
        return out;
    }

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<BandInfo> bands_;
    GeoTransform transform_;
    std::vector<T> values_;
    std::vector<std::uint8_t> mask_;
};

using Grid = BasicGrid<float>;
using GridD = BasicGrid<double>;

// Time-indexed inputs, e.g. seasonal composites.
struct GridStack {
    std::vector<Grid> members;
    std::vector<std::string> timestamps;

    void validate() const {
        if (members.size() != timestamps.size()) throw DataError("stack: one timestamp per member required");
        std::set<std::string> seen(timestamps.begin(), timestamps.end());
        if (seen.size() != timestamps.size()) throw DataError("stack: timestamps must be unique");
        for (const auto& m : members) {
            if (!m.same_layout(members.front())) throw DataError("stack: members differ in layout");
        }
    }
};

enum class CompositeMethod { median, mean };

// Per pixel and band, the median (even count: mean of the two middle values) or
// mean over valid members.
inline Grid composite(const GridStack& stack, CompositeMethod method) {
    if (stack.members.empty()) throw DataError("empty stack");
    stack.validate();
    const Grid& first = stack.members.front();
    Grid out(first.width(), first.height(), first.bands(), first.transform(), 0.0f, false);
    std::vector<double> buf;
    buf.reserve(stack.members.size());
    for (std::size_t b = 0; b < first.band_count(); ++b) {
        for (std::size_t p = 0; p < first.pixel_count(); ++p) {
            buf.clear();
            for (const auto& m : stack.members) {
                if (m.valid(b, p)) buf.push_back(m.value(b, p));
            }
            if (buf.empty()) continue;
            double v = 0.0;
            if (method == CompositeMethod::mean) {
                for (double x : buf) v += x;
                v /= static_cast<double>(buf.size());
            } else {
                std::sort(buf.begin(), buf.end());
                const std::size_t n = buf.size();
                v = (n % 2 == 1) ? buf[n / 2] : 0.5 * (buf[n / 2 - 1] + buf[n / 2]);
            }
            out.value(b, p) = static_cast<float>(v);
            out.set_valid(b, p, true);
        }
    }
    return out;
}

// Double-precision block sums, the exact layer underneath block_aggregate.
struct BlockSums {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t bands = 0;
    std::vector<double> sums;        // band-sequential, row-major
    std::vector<std::uint8_t> valid;  // 0 iff the whole block was invalid
};

template <class T>
BlockSums block_sums(const BasicGrid<T>& grid, std::size_t factor) {
    if (factor == 0 || grid.width() % factor != 0 || grid.height() % factor != 0) {
        throw DataError("grid dimensions are not divisible by the aggregation factor");
    }
    BlockSums out;
    out.width = grid.width() / factor;
    out.height = grid.height() / factor;
    out.bands = grid.band_count();
    out.sums.assign(out.width * out.height * out.bands, 0.0);
    out.valid.assign(out.sums.size(), 0);
    for (std::size_t b = 0; b < grid.band_count(); ++b) {
        for (std::size_t orow = 0; orow < out.height; ++orow) {
            for (std::size_t ocol = 0; ocol < out.width; ++ocol) {
                double s = 0.0;
                bool any = false;
                for (std::size_t r = orow * factor; r < (orow + 1) * factor; ++r) {
                    for (std::size_t c = ocol * factor; c < (ocol + 1) * factor; ++c) {
                        const std::size_t p = r * grid.width() + c;
                        if (grid.valid(b, p)) {
                            s += grid.value(b, p);
                            any = true;
                        }
                    }
                }
                const std::size_t o = (b * out.height + orow) * out.width + ocol;
                out.sums[o] = s;
                out.valid[o] = any ? 1 : 0;
            }
        }
    }
    return out;
}

// Sum-aggregates factor x factor blocks. Invalid inputs contribute 0; an output
// cell is invalid only when its entire block is.
template <class T>
BasicGrid<T> block_aggregate(const BasicGrid<T>& grid, std::size_t factor) {
    const BlockSums s = block_sums(grid, factor);
    GeoTransform t = grid.transform();
    t.pixel_size_x *= static_cast<double>(factor);
    t.pixel_size_y *= static_cast<double>(factor);
    BasicGrid<T> out(s.width, s.height, grid.bands(), t, T{}, false);
    for (std::size_t i = 0; i < s.sums.size(); ++i) {
        out.values()[i] = static_cast<T>(s.sums[i]);
        out.mask()[i] = s.valid[i];
    }
    return out;
}

// One affine jitter x -> contrast * x + brightness per band.
struct BandJitter {
    double contrast = 1.0;
    double brightness = 0.0;
};

inline std::vector<BandJitter> draw_band_jitter(std::size_t bands, double brightness_sigma, double contrast_sigma,
                                                std::mt19937_64& rng) {
    std::vector<BandJitter> out(bands);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (auto& j : out) {
        j.contrast = 1.0 + contrast_sigma * unit(rng);
        j.brightness = brightness_sigma * unit(rng);
    }
    return out;
}

inline Grid photometric_augment(const Grid& grid, double brightness_sigma, double contrast_sigma,
                                std::uint64_t rng_seed) {
    if (brightness_sigma < 0.0 || contrast_sigma < 0.0) throw DataError("augmentation sigmas must be >= 0");
    if (brightness_sigma == 0.0 && contrast_sigma == 0.0) return grid;
    std::mt19937_64 rng(rng_seed);
    const auto jitter = draw_band_jitter(grid.band_count(), brightness_sigma, contrast_sigma, rng);
    Grid out = grid;
    for (std::size_t b = 0; b < grid.band_count(); ++b) {
        for (float& v : out.band(b)) {
            v = static_cast<float>(jitter[b].contrast * static_cast<double>(v) + jitter[b].brightness);
        }
    }
    return out;
}

}  // namespace popgrid
