#pragma once

// GridPack container:
//   bytes 0..3   ASCII "GPK1"
//   bytes 4..7   little-endian u32 header length H
//   bytes 8..8+H UTF-8 JSON header
//                {"bands","band_names","dtype","groups","height","transform","width"}
//   payload      width*height*bands little-endian 4-byte words, band-sequential, row-major
//   mask         per band ceil(width*height/8) bytes, one bit per cell, LSB first
//
// The JSON header is emitted with sorted keys so identical grids produce identical bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "popgrid/error.hpp"
#include "popgrid/grid.hpp"

namespace popgrid {

enum class PackDtype { f32, u32 };

// Format-level view of a GridPack file: header plus raw 32-bit words and a
// byte-per-cell validity mask.
struct RawPack {
    std::size_t width = 0;
    std::size_t height = 0;
    PackDtype dtype = PackDtype::f32;
    GeoTransform transform;
    std::vector<BandInfo> bands;
    std::vector<std::uint32_t> words;
    std::vector<std::uint8_t> mask;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::size_t mask_bytes_per_band(std::size_t cells) { return (cells + 7) / 8; }

}  // namespace detail

inline std::string encode_gridpack(const RawPack& pack) {
    const std::size_t cells = pack.width * pack.height;
    if (pack.words.size() != cells * pack.bands.size() || pack.mask.size() != pack.words.size()) {
        throw DataError("grid payload does not match its dimensions");
    }
    nlohmann::json header;
    header["width"] = pack.width;
    header["height"] = pack.height;
    header["bands"] = pack.bands.size();
    header["dtype"] = pack.dtype == PackDtype::f32 ? "f32" : "u32";
    header["transform"] = {pack.transform.origin_x, pack.transform.origin_y, pack.transform.pixel_size_x,
                           pack.transform.pixel_size_y};
    header["band_names"] = nlohmann::json::array();
    header["groups"] = nlohmann::json::array();
    for (const auto& b : pack.bands) {
        header["band_names"].push_back(b.name);
        header["groups"].push_back(std::string(to_string(b.group)));
    }
    const std::string text = header.dump();

    std::string out;
    const std::size_t mask_len = pack.bands.size() * detail::mask_bytes_per_band(cells);
    out.reserve(8 + text.size() + 4 * pack.words.size() + mask_len);
    out += "GPK1";
    detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    for (std::uint32_t w : pack.words) detail::put_u32(out, w);
    for (std::size_t b = 0; b < pack.bands.size(); ++b) {
        std::string bits(detail::mask_bytes_per_band(cells), '\0');
        for (std::size_t i = 0; i < cells; ++i) {
            if (pack.mask[b * cells + i]) bits[i / 8] = static_cast<char>(bits[i / 8] | (1u << (i % 8)));
        }
        out += bits;
    }
    return out;
}

inline RawPack decode_gridpack(const std::string& bytes) {
    const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 4 || std::memcmp(data, "GPK1", 4) != 0) throw FormatError("bad magic");
    if (bytes.size() < 8) throw FormatError("truncated header");
    const std::size_t hlen = detail::get_u32(data + 4);
    if (bytes.size() < 8 + hlen) throw FormatError("truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(hlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed header: ") + e.what());
    }

    RawPack pack;
    try {
        const std::string dtype = header.at("dtype").get<std::string>();
        if (dtype == "f32") {
            pack.dtype = PackDtype::f32;
        } else if (dtype == "u32") {
            pack.dtype = PackDtype::u32;
        } else {
            throw FormatError("unsupported dtype '" + dtype + "'");
        }
        pack.width = header.at("width").get<std::size_t>();
        pack.height = header.at("height").get<std::size_t>();
        const auto nbands = header.at("bands").get<std::size_t>();
        const auto t = header.at("transform").get<std::vector<double>>();
        if (t.size() != 4) throw FormatError("malformed header: transform needs 4 numbers");
        pack.transform = {t[0], t[1], t[2], t[3]};
        const auto names = header.at("band_names").get<std::vector<std::string>>();
        const auto groups = header.at("groups").get<std::vector<std::string>>();
        if (names.size() != nbands || groups.size() != nbands) {
            throw FormatError("malformed header: band_names/groups length differs from bands");
        }
        for (std::size_t b = 0; b < nbands; ++b) pack.bands.push_back({names[b], parse_feature_group(groups[b])});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed header: ") + e.what());
    }
    if (!(pack.transform.pixel_size_x > 0.0) || !(pack.transform.pixel_size_y > 0.0)) {
        throw FormatError("malformed header: pixel sizes must be positive");
    }

    const std::size_t cells = pack.width * pack.height;
    const std::size_t nwords = cells * pack.bands.size();
    const std::size_t payload = 4 * nwords;
    const std::size_t mask_len = pack.bands.size() * detail::mask_bytes_per_band(cells);
    const std::size_t body = bytes.size() - 8 - hlen;
    if (body < payload) throw FormatError("truncated payload");
    if (body != payload + mask_len) throw FormatError("header/payload size mismatch");

    const unsigned char* p = data + 8 + hlen;
    pack.words.resize(nwords);
    for (std::size_t i = 0; i < nwords; ++i) pack.words[i] = detail::get_u32(p + 4 * i);
    const unsigned char* m = p + payload;
    pack.mask.resize(nwords);
    for (std::size_t b = 0; b < pack.bands.size(); ++b) {
        const unsigned char* mb = m + b * detail::mask_bytes_per_band(cells);
        for (std::size_t i = 0; i < cells; ++i) pack.mask[b * cells + i] = (mb[i / 8] >> (i % 8)) & 1u;
    }
    return pack;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("I/O failure writing '" + path.string() + "'");
}

inline RawPack to_raw_pack(const Grid& grid) {
    RawPack pack;
    pack.width = grid.width();
    pack.height = grid.height();
    pack.dtype = PackDtype::f32;
    pack.transform = grid.transform();
    pack.bands = grid.bands();
    pack.words.reserve(grid.values().size());
    for (float v : grid.values()) pack.words.push_back(std::bit_cast<std::uint32_t>(v));
    pack.mask = grid.mask();
    return pack;
}

inline Grid from_raw_pack(const RawPack& pack) {
    if (pack.dtype != PackDtype::f32) throw FormatError("expected dtype f32, found u32");
    Grid grid(pack.width, pack.height, pack.bands, pack.transform);
    for (std::size_t i = 0; i < pack.words.size(); ++i) {
        grid.values()[i] = std::bit_cast<float>(pack.words[i]);
        grid.mask()[i] = pack.mask[i];
    }
    return grid;
}

inline void write_gridpack(const Grid& grid, const std::filesystem::path& path) {
    write_file_bytes(path, encode_gridpack(to_raw_pack(grid)));
}

inline Grid read_gridpack(const std::filesystem::path& path) {
    return from_raw_pack(decode_gridpack(read_file_bytes(path)));
}

}  // namespace popgrid
