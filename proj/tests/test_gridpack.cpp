#include <gtest/gtest.h>

#include <bit>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "popgrid/gridpack.hpp"

using namespace popgrid;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "popgrid_test_gridpack";
    fs::create_directories(dir);
    return dir / name;
}

std::size_t header_len(const std::string& bytes) {
    return detail::get_u32(reinterpret_cast<const unsigned char*>(bytes.data()) + 4);
}

}  // namespace

TEST(GridPack, RoundTrip7x5x3) {
    std::mt19937_64 rng(11);
    const Grid g = oracle::random_grid(
        rng, 7, 5, {{"vv", FeatureGroup::S1}, {"red", FeatureGroup::S2}, {"aux", FeatureGroup::AUX}}, 0.3,
        {100.5, 200.25, 10.0, 10.0});
    const auto path = scratch("rt.gpk");
    write_gridpack(g, path);
    const Grid back = read_gridpack(path);
    EXPECT_EQ(back, g);
}

TEST(GridPack, RoundTripIsBitExactForSpecialFloats) {
    Grid g(4, 1, {{"b", FeatureGroup::AUX}});
    g.values() = {-0.0f, std::numeric_limits<float>::denorm_min(), std::numeric_limits<float>::max(), 1e-30f};
    const Grid back = from_raw_pack(decode_gridpack(encode_gridpack(to_raw_pack(g))));
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(std::bit_cast<std::uint32_t>(back.values()[i]), std::bit_cast<std::uint32_t>(g.values()[i]));
    }
}

TEST(GridPack, SameGridSameBytes) {
    std::mt19937_64 rng(12);
    const Grid g = oracle::random_grid(rng, 3, 3, {{"b", FeatureGroup::S2}}, 0.5);
    write_gridpack(g, scratch("a.gpk"));
    write_gridpack(g, scratch("b.gpk"));
    EXPECT_EQ(read_file_bytes(scratch("a.gpk")), read_file_bytes(scratch("b.gpk")));
}

TEST(GridPack, SingleZeroCellPayload) {
    Grid g(1, 1, {{"b", FeatureGroup::AUX}});
    const std::string bytes = encode_gridpack(to_raw_pack(g));
    const std::size_t h = header_len(bytes);
    ASSERT_EQ(bytes.size(), 8 + h + 4 + 1);
    EXPECT_EQ(bytes.substr(8 + h, 4), std::string(4, '\0'));
    EXPECT_EQ(bytes.substr(0, 4), "GPK1");
}

TEST(GridPack, AllInvalidMaskIsZeroBits) {
    Grid g(5, 3, {{"a", FeatureGroup::AUX}, {"b", FeatureGroup::AUX}}, {}, 1.0f, false);
    const std::string bytes = encode_gridpack(to_raw_pack(g));
    const std::size_t mask_start = 8 + header_len(bytes) + 4 * 30;
    ASSERT_EQ(bytes.size(), mask_start + 2 * 2);
    for (std::size_t i = mask_start; i < bytes.size(); ++i) EXPECT_EQ(bytes[i], '\0');
}

TEST(GridPack, MaskBitsAreLsbFirst) {
    Grid g(3, 3, {{"a", FeatureGroup::AUX}}, {}, 0.0f, false);
    g.set_valid(0, 0, true);
    g.set_valid(0, 8, true);
    const std::string bytes = encode_gridpack(to_raw_pack(g));
    const std::size_t m = 8 + header_len(bytes) + 36;
    EXPECT_EQ(static_cast<unsigned char>(bytes[m]), 0x01);
    EXPECT_EQ(static_cast<unsigned char>(bytes[m + 1]), 0x01);
}

TEST(GridPack, HeaderKeysSorted) {
    Grid g(1, 1, {{"b", FeatureGroup::S1}});
    const std::string bytes = encode_gridpack(to_raw_pack(g));
    const std::string header = bytes.substr(8, header_len(bytes));
    EXPECT_EQ(header.find("\"band_names\""), 1u);
    EXPECT_LT(header.find("\"transform\""), header.find("\"width\""));
}

TEST(GridPack, BadMagic) {
    std::string bytes = encode_gridpack(to_raw_pack(Grid(1, 1, {{"b", FeatureGroup::AUX}})));
    bytes.replace(0, 4, "XXXX");
    try {
        decode_gridpack(bytes);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_STREQ(e.what(), "bad magic");
    }
}

TEST(GridPack, TruncatedPayload) {
    const std::string bytes = encode_gridpack(to_raw_pack(Grid(4, 4, {{"b", FeatureGroup::AUX}})));
    const std::size_t h = header_len(bytes);
    try {
        decode_gridpack(bytes.substr(0, 8 + h + 10));
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_STREQ(e.what(), "truncated payload");
    }
}

TEST(GridPack, SizeMismatch) {
    std::string bytes = encode_gridpack(to_raw_pack(Grid(4, 4, {{"b", FeatureGroup::AUX}})));
    bytes += "extra";
    try {
        decode_gridpack(bytes);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_STREQ(e.what(), "header/payload size mismatch");
    }
}

TEST(GridPack, UnsupportedDtype) {
    std::string bytes = encode_gridpack(to_raw_pack(Grid(1, 1, {{"b", FeatureGroup::AUX}})));
    const auto pos = bytes.find("\"f32\"");
    bytes.replace(pos, 5, "\"f64\"");
    EXPECT_THROW(decode_gridpack(bytes), FormatError);
    try {
        decode_gridpack(bytes);
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("unsupported dtype"), std::string::npos);
    }
}

TEST(GridPack, MalformedHeader) {
    std::string bytes = encode_gridpack(to_raw_pack(Grid(1, 1, {{"b", FeatureGroup::AUX}})));
    bytes[8] = '[';
    EXPECT_THROW(decode_gridpack(bytes), FormatError);
    EXPECT_THROW(decode_gridpack("GPK1"), FormatError);
}

TEST(GridPack, U32RejectedAsFloatGrid) {
    RawPack p = to_raw_pack(Grid(1, 1, {{"b", FeatureGroup::AUX}}));
    p.dtype = PackDtype::u32;
    EXPECT_THROW(from_raw_pack(decode_gridpack(encode_gridpack(p))), FormatError);
}

TEST(GridPack, MissingFileIsDataError) { EXPECT_THROW(read_gridpack(scratch("does_not_exist.gpk")), DataError); }

TEST(GridPack, RandomRoundTrips) {
    std::mt19937_64 rng(13);
    std::uniform_int_distribution<std::size_t> dim(1, 17);
    std::uniform_int_distribution<std::size_t> nb(1, 4);
    for (int i = 0; i < 100; ++i) {
        std::vector<BandInfo> bands;
        const std::size_t n = nb(rng);
        for (std::size_t b = 0; b < n; ++b) bands.push_back({"b" + std::to_string(b), FeatureGroup(b % 3)});
        const Grid g = oracle::random_grid(rng, dim(rng), dim(rng), bands, 0.3, {1.0, 2.0, 0.5, 0.25});
        const std::string bytes = encode_gridpack(to_raw_pack(g));
        const Grid back = from_raw_pack(decode_gridpack(bytes));
        ASSERT_EQ(back, g);
        ASSERT_EQ(encode_gridpack(to_raw_pack(back)), bytes);
    }
}
