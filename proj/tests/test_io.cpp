#include <gtest/gtest.h>

#include <filesystem>

#include "popgrid/io.hpp"
#include "popgrid/pretrain.hpp"
#include "popgrid/synth.hpp"

using namespace popgrid;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("popgrid_io_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

Grid reference() {
    return Grid(5, 4, {{"S1_0", FeatureGroup::S1}, {"S2_0", FeatureGroup::S2}, {"dem", FeatureGroup::AUX}}, {0, 40, 10, 10});
}

std::vector<double> flat(const PredictorParams& p) {
    std::vector<double> v;
    if (p.builtup) p.builtup->for_each([&](double x) { v.push_back(x); });
    p.occupancy.for_each([&](double x) { v.push_back(x); });
    return v;
}

}  // namespace

TEST(Params, JsonRoundTripIsExact) {
    FeatureConfig fc;
    fc.window_radius = 1;
    const std::vector<std::size_t> widths{7, 3};
    for (Variant v : {Variant::factored, Variant::direct, Variant::external_weights}) {
        const PredictorParams p = make_predictor(v, reference(), fc, 17, std::nullopt, "dem", widths);
        const PredictorParams q = params_from_json(params_to_json(p));
        EXPECT_EQ(q.variant, p.variant);
        EXPECT_EQ(q.features.window_radius, 1);
        EXPECT_EQ(q.features.groups, p.features.groups);
        EXPECT_EQ(q.feature_band_names, p.feature_band_names);
        EXPECT_EQ(q.builtup.has_value(), p.builtup.has_value());
        if (p.builtup) {
            EXPECT_EQ(q.builtup->frozen, p.builtup->frozen);
        }
        EXPECT_EQ(flat(q), flat(p));
        EXPECT_EQ(params_to_json(q).dump(), params_to_json(p).dump());
    }
}

TEST(Params, FileRoundTrip) {
    const fs::path d = scratch("params");
    const PredictorParams p = make_predictor(Variant::factored, reference(), FeatureConfig{}, 3);
    write_params(d / "p.json", p);
    EXPECT_EQ(flat(read_params(d / "p.json")), flat(p));
    EXPECT_THROW(read_params(d / "missing.json"), DataError);
}

TEST(Params, MalformedDocuments) {
    EXPECT_THROW(parse_json_text("{not json", "x"), FormatError);
    const PredictorParams p = make_predictor(Variant::factored, reference(), FeatureConfig{}, 3);
    auto j = params_to_json(p);
    j.erase("occupancy");
    EXPECT_THROW(params_from_json(j), FormatError);
    j = params_to_json(p);
    j["occupancy"]["head_weight"] = nlohmann::json::array({1.0});
    EXPECT_THROW(params_from_json(j), Error);
}

TEST(Branch, DocumentRoundTrip) {
    FeatureConfig fc;
    fc.groups = {FeatureGroup::S2};
    PretrainConfig pc;
    pc.features = fc;
    BranchParams b = init_builtup_branch(1, pc);
    b.frozen = true;
    const auto doc = branch_from_document(branch_document(b, fc, {"S2_0"}));
    EXPECT_EQ(doc.features.groups, fc.groups);
    EXPECT_EQ(doc.band_names, std::vector<std::string>{"S2_0"});
    std::vector<double> x, y;
    b.for_each([&](double v) { x.push_back(v); });
    doc.branch.for_each([&](double v) { y.push_back(v); });
    EXPECT_EQ(x, y);
    EXPECT_THROW(branch_from_document(nlohmann::json{{"format", "other"}}), FormatError);
}

TEST(Bag, ManifestLoadsRelativePaths) {
    const fs::path d = scratch("bag");
    WorldConfig wc;
    wc.width = 8;
    wc.height = 8;
    wc.n_regions = 2;
    wc.n_blobs = 2;
    const World w = generate_world(wc);
    write_gridpack(w.inputs.members[0], d / "c0.gpk");
    write_gridpack(w.inputs.members[1], d / "c1.gpk");
    write_params(d / "m0.json", make_predictor(Variant::factored, w.inputs.members[0], FeatureConfig{}, 1));
    write_params(d / "m1.json", make_predictor(Variant::factored, w.inputs.members[0], FeatureConfig{}, 2));
    BagManifest m;
    m.members = {"m0.json", "m1.json"};
    m.composites = {"c0.gpk", "c1.gpk"};
    m.labels = {"spring", "summer"};
    m.mode = BagMode::members_only;
    write_text_file(d / "bag.json", bag_manifest_to_json(m).dump());
    const Bag bag = load_bag(d / "bag.json");
    EXPECT_EQ(bag.members.size(), 2u);
    EXPECT_EQ(bag.composites.timestamps, m.labels);
    EXPECT_EQ(bag.mode, BagMode::members_only);
    EXPECT_EQ(bag.composites.members[1], w.inputs.members[1]);

    auto j = bag_manifest_to_json(m);
    j["labels"] = {"one"};
    EXPECT_THROW(bag_manifest_from_json(j), FormatError);
    j.erase("members");
    EXPECT_THROW(bag_manifest_from_json(j), FormatError);
}
