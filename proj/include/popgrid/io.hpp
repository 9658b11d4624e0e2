#pragma once

// JSON documents: predictor parameters, bag manifests and run manifests.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "popgrid/ensemble.hpp"
#include "popgrid/error.hpp"
#include "popgrid/gridpack.hpp"
#include "popgrid/predictor.hpp"

namespace popgrid {

using nlohmann::json;

inline std::string read_text_file(const std::filesystem::path& path) { return read_file_bytes(path); }

inline void write_text_file(const std::filesystem::path& path, const std::string& text) { write_file_bytes(path, text); }

inline json parse_json_text(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError("malformed JSON in " + what + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Predictor parameters

namespace detail {

inline json vector_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline Eigen::VectorXd vector_from_json(const json& a, Eigen::Index expected, const char* what) {
    if (!a.is_array() || static_cast<Eigen::Index>(a.size()) != expected) {
        throw FormatError(std::string("bad length for ") + what);
    }
    Eigen::VectorXd v(expected);
    for (Eigen::Index i = 0; i < expected; ++i) v(i) = a[static_cast<std::size_t>(i)].get<double>();
    return v;
}

inline json branch_to_json(const BranchParams& b) {
    json layers = json::array();
    for (const auto& l : b.hidden) {
        json w = json::array();
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
        }
        layers.push_back(
            {{"rows", l.weight.rows()}, {"cols", l.weight.cols()}, {"weight", w}, {"bias", vector_to_json(l.bias)}});
    }
    return {{"head", b.head == HeadActivation::sigmoid ? "sigmoid" : "softplus"},
            {"frozen", b.frozen},
            {"layers", layers},
            {"head_weight", vector_to_json(b.head_weight)},
            {"head_bias", b.head_bias}};
}

inline BranchParams branch_from_json(const json& j) {
    BranchParams b;
    const auto head = j.at("head").get<std::string>();
    if (head == "sigmoid") {
        b.head = HeadActivation::sigmoid;
    } else if (head == "softplus") {
        b.head = HeadActivation::softplus;
    } else {
        throw FormatError("unknown head activation '" + head + "'");
    }
    b.frozen = j.value("frozen", false);
    for (const auto& lj : j.at("layers")) {
        DenseLayer l;
        const auto rows = lj.at("rows").get<Eigen::Index>();
        const auto cols = lj.at("cols").get<Eigen::Index>();
        const Eigen::VectorXd w = vector_from_json(lj.at("weight"), rows * cols, "layer weight");
        l.weight.resize(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) l.weight(r, c) = w(r * cols + c);
        }
        l.bias = vector_from_json(lj.at("bias"), rows, "layer bias");
        b.hidden.push_back(std::move(l));
    }
    const json& hw = j.at("head_weight");
    b.head_weight = vector_from_json(hw, static_cast<Eigen::Index>(hw.size()), "head weight");
    b.head_bias = j.at("head_bias").get<double>();
    b.validate();
    return b;
}

}  // namespace detail

inline json params_to_json(const PredictorParams& p) {
    json groups = json::array();
    for (auto g : p.features.groups) groups.push_back(std::string(to_string(g)));
    json j{{"format", "popgrid-predictor"},
           {"version", 1},
           {"variant", std::string(to_string(p.variant))},
           {"features", {{"window_radius", p.features.window_radius}, {"groups", groups}}},
           {"feature_band_names", p.feature_band_names},
           {"occupancy", detail::branch_to_json(p.occupancy)},
           {"builtup", p.builtup ? detail::branch_to_json(*p.builtup) : json(nullptr)},
           {"external_weight_band", p.external_weight_band},
           {"provenance",
            {{"seed", p.provenance.seed},
             {"epochs", p.provenance.epochs},
             {"dataset", p.provenance.dataset},
             {"hidden_transfer", p.provenance.hidden_transfer}}}};
    return j;
}

inline PredictorParams params_from_json(const json& j) {
    try {
        if (j.value("format", std::string()) != "popgrid-predictor") throw FormatError("not a predictor document");
        PredictorParams p;
        p.variant = parse_variant(j.at("variant").get<std::string>());
        p.features.window_radius = j.at("features").at("window_radius").get<int>();
        p.features.groups.clear();
        for (const auto& g : j.at("features").at("groups")) p.features.groups.insert(parse_feature_group(g.get<std::string>()));
        p.feature_band_names = j.at("feature_band_names").get<std::vector<std::string>>();
        p.occupancy = detail::branch_from_json(j.at("occupancy"));
        if (!j.at("builtup").is_null()) p.builtup = detail::branch_from_json(j.at("builtup"));
        p.external_weight_band = j.value("external_weight_band", std::string());
        const json& pv = j.at("provenance");
        p.provenance.seed = pv.at("seed").get<std::uint64_t>();
        p.provenance.epochs = pv.at("epochs").get<std::size_t>();
        p.provenance.dataset = pv.value("dataset", std::string());
        p.provenance.hidden_transfer = pv.value("hidden_transfer", false);
        p.validate();
        return p;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed predictor document: ") + e.what());
    }
}

inline void write_params(const std::filesystem::path& path, const PredictorParams& p) {
    write_text_file(path, params_to_json(p).dump(1) + "\n");
}

inline PredictorParams read_params(const std::filesystem::path& path) {
    return params_from_json(parse_json_text(read_text_file(path), path.string()));
}

// A built-up branch on its own, as written by pretraining.
inline json branch_document(const BranchParams& b, const FeatureConfig& features,
                            const std::vector<std::string>& band_names) {
    json groups = json::array();
    for (auto g : features.groups) groups.push_back(std::string(to_string(g)));
    return {{"format", "popgrid-branch"},
            {"features", {{"window_radius", features.window_radius}, {"groups", groups}}},
            {"feature_band_names", band_names},
            {"branch", detail::branch_to_json(b)}};
}

struct BranchDocument {
    BranchParams branch;
    FeatureConfig features;
    std::vector<std::string> band_names;
};

inline BranchDocument branch_from_document(const json& j) {
    try {
        if (j.value("format", std::string()) != "popgrid-branch") throw FormatError("not a branch document");
        BranchDocument d;
        d.features.window_radius = j.at("features").at("window_radius").get<int>();
        d.features.groups.clear();
        for (const auto& g : j.at("features").at("groups")) d.features.groups.insert(parse_feature_group(g.get<std::string>()));
        d.band_names = j.at("feature_band_names").get<std::vector<std::string>>();
        d.branch = detail::branch_from_json(j.at("branch"));
        return d;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed branch document: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Bag manifest: member parameter files, composite files with labels, mode.
// Relative paths resolve against the manifest's directory.

struct BagManifest {
    std::vector<std::string> members;
    std::vector<std::string> composites;
    std::vector<std::string> labels;
    BagMode mode = BagMode::full;
};

inline json bag_manifest_to_json(const BagManifest& m) {
    return {{"members", m.members}, {"composites", m.composites}, {"labels", m.labels}, {"mode", std::string(to_string(m.mode))}};
}

inline BagManifest bag_manifest_from_json(const json& j) {
    try {
        BagManifest m;
        m.members = j.at("members").get<std::vector<std::string>>();
        m.composites = j.at("composites").get<std::vector<std::string>>();
        m.labels = j.value("labels", m.composites);
        m.mode = parse_bag_mode(j.value("mode", std::string("full")));
        if (m.labels.size() != m.composites.size()) throw FormatError("bag manifest: one label per composite");
        return m;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed bag manifest: ") + e.what());
    }
}

inline Bag load_bag(const std::filesystem::path& manifest_path) {
    const BagManifest m = bag_manifest_from_json(parse_json_text(read_text_file(manifest_path), manifest_path.string()));
    const auto base = manifest_path.parent_path();
    auto resolve = [&](const std::string& p) {
        const std::filesystem::path q(p);
        return q.is_absolute() ? q : base / q;
    };
    Bag bag;
    bag.mode = m.mode;
    for (const auto& p : m.members) bag.members.push_back(read_params(resolve(p)));
    for (std::size_t i = 0; i < m.composites.size(); ++i) {
        bag.composites.members.push_back(read_gridpack(resolve(m.composites[i])));
        bag.composites.timestamps.push_back(m.labels[i]);
    }
    return bag;
}

}  // namespace popgrid
