// popgrid: command-line front end.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical failure.
// Every run writes one JSON manifest next to its primary output.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include "popgrid/census.hpp"
#include "popgrid/dasymetric.hpp"
#include "popgrid/ensemble.hpp"
#include "popgrid/error.hpp"
#include "popgrid/eval.hpp"
#include "popgrid/experiments.hpp"
#include "popgrid/grid.hpp"
#include "popgrid/gridpack.hpp"
#include "popgrid/io.hpp"
#include "popgrid/predictor.hpp"
#include "popgrid/pretrain.hpp"
#include "popgrid/regions.hpp"
#include "popgrid/runtime.hpp"
#include "popgrid/synth.hpp"
#include "popgrid/training.hpp"

#ifndef POPGRID_VERSION
#define POPGRID_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace popgrid;
using nlohmann::json;

namespace {

struct Common {
    std::uint64_t seed = 0;
    int threads = 1;
    std::string manifest;  // explicit manifest path; default derived from the primary output
};

// Inputs, outputs and flags of one run, written out as its manifest.
struct RunRecord {
    std::string subcommand;
    json flags = json::object();
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    json extra = json::object();
};

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

json collect_flags(const CLI::App& sub) {
    json flags = json::object();
    for (const CLI::Option* opt : sub.get_options()) {
        const std::string name = opt->get_name(false, true);
        if (name == "--help" || name.empty()) continue;
        const auto& res = opt->results();
        if (res.empty()) continue;
        if (res.size() == 1) {
            flags[name] = res.front();
        } else {
            flags[name] = res;
        }
    }
    return flags;
}

void write_manifest(const RunRecord& rec, const Common& common, double seconds, const std::string& started) {
    fs::path path = common.manifest;
    if (path.empty()) {
        if (rec.outputs.empty()) return;
        const fs::path primary(rec.outputs.front());
        path = fs::is_directory(primary) ? primary / "manifest.json" : fs::path(primary.string() + ".manifest.json");
    }
    json m{{"subcommand", rec.subcommand},
           {"flags", rec.flags},
           {"seed", common.seed},
           {"threads", common.threads},
           {"inputs", rec.inputs},
           {"outputs", rec.outputs},
           {"tool_version", POPGRID_VERSION},
           {"started_at", started},
           {"duration_seconds", seconds}};
    if (!rec.extra.empty()) m["result"] = rec.extra;
    write_text_file(path, m.dump(2) + "\n");
}

GridStack load_stack(const std::vector<std::string>& paths, RunRecord& rec) {
    GridStack stack;
    for (const auto& p : paths) {
        stack.members.push_back(read_gridpack(p));
        stack.timestamps.push_back(fs::path(p).stem().string());
        rec.inputs.push_back(p);
    }
    stack.validate();
    return stack;
}

FeatureConfig feature_config(int radius, const std::vector<std::string>& groups) {
    FeatureConfig f;
    f.window_radius = radius;
    if (!groups.empty()) {
        f.groups.clear();
        for (const auto& g : groups) f.groups.insert(parse_feature_group(g));
    }
    f.validate();
    return f;
}

void add_external(GridStack& stack, const std::string& path, RunRecord& rec) {
    const Grid ext = read_gridpack(path);
    rec.inputs.push_back(path);
    const Grid& ref = stack.members.front();
    if (!ext.aligned_with(ref.width(), ref.height(), ref.transform())) {
        throw DataError("external weights are not aligned with the inputs");
    }
    stack = with_external_band(stack, ext);
}

void print_json(const json& j) { std::cout << j.dump(2) << "\n"; }

Grid to_float(const GridD& g) { return g.cast<float>(); }

}  // namespace

int main(int argc, char** argv) {
    configure_allocator();
    CLI::App app{"popgrid: weakly supervised population mapping from census totals"};
    app.require_subcommand(1);
    app.set_version_flag("--version", POPGRID_VERSION);

    Common common;
    RunRecord rec;
    std::function<void()> action;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--seed", common.seed, "Seed for every random choice")->capture_default_str();
        sub->add_option("--threads", common.threads, "Worker cap (computation is sequential)")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        sub->add_option("--manifest", common.manifest, "Manifest path (default: next to the primary output)");
    };

    // synth -------------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "Generate a synthetic world");
    WorldConfig wc;
    std::string synth_out;
    synth->add_option("--out-dir", synth_out, "Output directory")->required();
    synth->add_option("--width", wc.width)->capture_default_str();
    synth->add_option("--height", wc.height)->capture_default_str();
    synth->add_option("--regions", wc.n_regions)->capture_default_str();
    synth->add_option("--blobs", wc.n_blobs)->capture_default_str();
    synth->add_option("--noise", wc.noise_sigma)->capture_default_str();
    synth->add_option("--members", wc.members)->capture_default_str();
    synth->add_option("--pixel-size", wc.pixel_size)->capture_default_str();
    add_common(synth);
    synth->callback([&] {
        action = [&] {
            wc.seed = common.seed;
            const World w = generate_world(wc);
            fs::create_directories(synth_out);
            const fs::path d(synth_out);
            for (std::size_t m = 0; m < w.inputs.members.size(); ++m) {
                const auto p = d / ("input_" + w.inputs.timestamps[m] + ".gpk");
                write_gridpack(w.inputs.members[m], p);
                rec.outputs.push_back(p.string());
            }
            write_gridpack(w.truth_population, d / "truth_population.gpk");
            write_gridpack(w.truth_builtup, d / "truth_builtup.gpk");
            write_gridpack(w.truth_occupancy, d / "truth_occupancy.gpk");
            write_gridpack(w.builtup_labels, d / "builtup_labels.gpk");
            write_region_map(w.regions, d / "regions.gpk");
            write_census_csv(w.census, d / "census.csv");
            for (const char* f : {"truth_population.gpk", "truth_builtup.gpk", "truth_occupancy.gpk",
                                  "builtup_labels.gpk", "regions.gpk", "census.csv"}) {
                rec.outputs.push_back((d / f).string());
            }
            rec.outputs.insert(rec.outputs.begin(), d.string());
            rec.extra = json{{"world", wc}, {"census_total", w.census.total()}};
        };
    });

    // rasterize ---------------------------------------------------------------
    auto* rast = app.add_subcommand("rasterize", "Rasterize GeoJSON regions onto a grid");
    std::string rast_in, rast_like, rast_out;
    rast->add_option("--regions", rast_in, "GeoJSON FeatureCollection")->required();
    rast->add_option("--like", rast_like, "GridPack whose size and transform to use")->required();
    rast->add_option("--out", rast_out, "Output region map (GridPack u32)")->required();
    add_common(rast);
    rast->callback([&] {
        action = [&] {
            const Grid like = read_gridpack(rast_like);
            const auto part = parse_regions(read_text_file(rast_in));
            const RegionMap map = rasterize(part, like.transform(), like.width(), like.height());
            write_region_map(map, rast_out);
            rec.inputs = {rast_in, rast_like};
            rec.outputs = {rast_out};
            rec.extra = json{{"regions", map.ids().size()}};
        };
    });

    // composite ---------------------------------------------------------------
    auto* comp = app.add_subcommand("composite", "Per-pixel median or mean over a stack");
    std::vector<std::string> comp_in;
    std::string comp_method = "median", comp_out;
    comp->add_option("--input", comp_in, "Stack member GridPacks")->required();
    comp->add_option("--method", comp_method)->check(CLI::IsMember({"median", "mean"}))->capture_default_str();
    comp->add_option("--out", comp_out)->required();
    add_common(comp);
    comp->callback([&] {
        action = [&] {
            const GridStack s = load_stack(comp_in, rec);
            write_gridpack(composite(s, comp_method == "mean" ? CompositeMethod::mean : CompositeMethod::median),
                           comp_out);
            rec.outputs = {comp_out};
        };
    });

    // pretrain-builtup --------------------------------------------------------
    auto* pre = app.add_subcommand("pretrain-builtup", "Fit the built-up branch to binary labels");
    std::vector<std::string> pre_in, pre_groups;
    std::string pre_labels, pre_out, pre_loss;
    PretrainConfig pc;
    int pre_radius = 0;
    pre->add_option("--input", pre_in)->required();
    pre->add_option("--labels", pre_labels, "GridPack with 0/1 labels (invalid cells ignored)")->required();
    pre->add_option("--out", pre_out, "Branch JSON")->required();
    pre->add_option("--epochs", pc.epochs)->capture_default_str();
    pre->add_option("--lr", pc.lr)->capture_default_str();
    pre->add_option("--batch-pixels", pc.batch_pixels)->capture_default_str();
    pre->add_option("--pixels-per-epoch", pc.pixels_per_epoch)->capture_default_str();
    pre->add_option("--radius", pre_radius)->capture_default_str();
    pre->add_option("--groups", pre_groups, "Feature groups (S1, S2, AUX)")->delimiter(',');
    pre->add_option("--loss-csv", pre_loss, "Per-epoch loss CSV");
    add_common(pre);
    pre->callback([&] {
        action = [&] {
            const GridStack s = load_stack(pre_in, rec);
            const Grid labels = read_gridpack(pre_labels);
            rec.inputs.push_back(pre_labels);
            pc.seed = common.seed;
            pc.features = feature_config(pre_radius, pre_groups);
            const auto res = pretrain_builtup(s, labels, pc);
            const auto bands = feature_bands(s.members.front(), pc.features);
            write_text_file(pre_out, branch_document(res.branch, pc.features, band_names(s.members.front(), bands)).dump(1) + "\n");
            rec.outputs = {pre_out};
            if (!pre_loss.empty()) {
                std::ostringstream csv;
                csv << "epoch,bce\n";
                for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) csv << e << ',' << format_double(res.epoch_loss[e]) << '\n';
                write_text_file(pre_loss, csv.str());
                rec.outputs.push_back(pre_loss);
            }
            rec.extra = json{{"final_bce", res.epoch_loss.empty() ? json(nullptr) : json(res.epoch_loss.back())}};
        };
    });

    // train -------------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "Train the occupancy branch from census totals");
    std::vector<std::string> tr_in, tr_groups;
    std::string tr_regions, tr_census, tr_out, tr_variant = "factored", tr_builtup, tr_external, tr_config, tr_history;
    std::string tr_wd = "auto";
    std::size_t tr_epochs = 100;
    int tr_radius = 0;
    bool tr_transfer = false;
    tr->add_option("--input", tr_in, "Stack member GridPacks")->required();
    tr->add_option("--regions", tr_regions, "Region map GridPack")->required();
    tr->add_option("--census", tr_census, "Census CSV region_id,count")->required();
    tr->add_option("--out", tr_out, "Parameters JSON")->required();
    tr->add_option("--variant", tr_variant)
        ->check(CLI::IsMember({"factored", "direct", "external_weights", "external"}))
        ->capture_default_str();
    tr->add_option("--builtup", tr_builtup, "Pretrained built-up branch JSON");
    tr->add_option("--external", tr_external, "GridPack whose band 0 is the external weight layer");
    tr->add_option("--transfer", tr_transfer, "Copy built-up hidden layers into the occupancy branch");
    tr->add_flag("--transfer-hidden", tr_transfer, "Same as --transfer");
    tr->add_option("--epochs", tr_epochs)->capture_default_str();
    tr->add_option("--weight-decay", tr_wd, "'auto' (from census difficulty) or a number")->capture_default_str();
    tr->add_option("--radius", tr_radius)->capture_default_str();
    tr->add_option("--groups", tr_groups)->delimiter(',');
    tr->add_option("--config", tr_config, "TrainConfig JSON; explicit flags override it");
    tr->add_option("--history", tr_history, "Loss history CSV");
    add_common(tr);
    tr->callback([&] {
        action = [&] {
            GridStack s = load_stack(tr_in, rec);
            const RegionMap map = read_region_map(tr_regions);
            const CensusTable census = load_census_csv(tr_census);
            rec.inputs.insert(rec.inputs.end(), {tr_regions, tr_census});
            TrainConfig cfg;
            if (!tr_config.empty()) {
                cfg = parse_json_text(read_text_file(tr_config), tr_config).get<TrainConfig>();
                rec.inputs.push_back(tr_config);
            }
            if (tr_config.empty() || tr->count("--epochs")) cfg.epochs = tr_epochs;
            if (tr_config.empty() || tr->count("--seed")) cfg.seed = common.seed;
            const auto d = difficulty_of(map);
            if (tr_wd == "auto") {
                if (tr_config.empty() || tr->count("--weight-decay")) cfg.lambda_wd = weight_decay_from_difficulty(d.difficulty);
            } else {
                try {
                    cfg.lambda_wd = std::stod(tr_wd);
                } catch (const std::exception&) {
                    throw CLI::ValidationError("--weight-decay", "expected 'auto' or a number");
                }
            }
            if (cfg.dataset_label.empty()) cfg.dataset_label = fs::path(tr_census).stem().string();

            const FeatureConfig features = feature_config(tr_radius, tr_groups);
            const Variant variant = parse_variant(tr_variant);
            std::optional<BranchParams> builtup;
            if (!tr_builtup.empty()) {
                builtup = branch_from_document(parse_json_text(read_text_file(tr_builtup), tr_builtup)).branch;
                rec.inputs.push_back(tr_builtup);
            }
            if (variant == Variant::factored && !builtup) {
                throw CLI::RequiredError("--builtup (needed by the factored variant)");
            }
            if (variant == Variant::external_weights) {
                if (tr_external.empty()) throw CLI::RequiredError("--external (needed by the external_weights variant)");
                add_external(s, tr_external, rec);
            }
            PredictorParams p0 = make_predictor(variant, s.members.front(), features, cfg.seed,
                                                variant == Variant::factored ? builtup : std::nullopt,
                                                variant == Variant::external_weights ? kExternalBand : "");
            if (tr_transfer) {
                if (!builtup) throw CLI::RequiredError("--builtup (needed by --transfer)");
                transfer_hidden_layers(p0, *builtup);
            }
            const TrainResult res = train(s, map, census, p0, cfg);
            write_params(tr_out, res.params);
            rec.outputs = {tr_out};
            if (!tr_history.empty()) {
                write_text_file(tr_history, history_to_csv(res.history));
                rec.outputs.push_back(tr_history);
            }
            json cj = cfg;
            rec.extra = json{{"config", cj}, {"difficulty", d.difficulty}, {"upscaling", d.upscaling}};
        };
    });

    // predict -----------------------------------------------------------------
    auto* pr = app.add_subcommand("predict", "Predict population with one model or a bag");
    std::vector<std::string> pr_params, pr_in;
    std::string pr_bag, pr_mode = "full", pr_out, pr_external;
    pr->add_option("--params", pr_params, "Parameter JSON (repeat for a bag)");
    pr->add_option("--input", pr_in, "Composite GridPacks (repeat for a bag)");
    pr->add_option("--bag", pr_bag, "Bag manifest JSON (instead of --params/--input)");
    pr->add_option("--mode", pr_mode)
        ->check(CLI::IsMember({"single", "seasons_only", "members_only", "full"}))
        ->capture_default_str();
    pr->add_option("--external", pr_external, "External weight GridPack for external_weights models");
    pr->add_option("--out", pr_out, "Output GridPack: population, builtup, occupancy, member_std")->required();
    add_common(pr);
    pr->callback([&] {
        action = [&] {
            Bag bag;
            if (!pr_bag.empty()) {
                if (!pr_params.empty() || !pr_in.empty()) throw CLI::ValidationError("--bag", "excludes --params/--input");
                bag = load_bag(pr_bag);
                rec.inputs.push_back(pr_bag);
                if (pr->count("--mode")) bag.mode = parse_bag_mode(pr_mode);
            } else {
                if (pr_params.empty() || pr_in.empty()) throw CLI::RequiredError("--params and --input (or --bag)");
                for (const auto& p : pr_params) {
                    bag.members.push_back(read_params(p));
                    rec.inputs.push_back(p);
                }
                bag.composites = load_stack(pr_in, rec);
                bag.mode = parse_bag_mode(pr_mode);
            }
            if (!pr_external.empty()) add_external(bag.composites, pr_external, rec);
            const FeatureConfig features = bag.members.front().features;
            for (const auto& m : bag.members) {
                if (m.features.window_radius != features.window_radius || m.features.groups != features.groups) {
                    throw DataError("bag members use different feature configurations");
                }
            }
            const BagPrediction out = bag_predict(bag, features);
            write_gridpack(to_float(out.grid), pr_out);
            rec.outputs = {pr_out};
            rec.extra = json{{"estimate_count", out.estimate_count}, {"mode", std::string(to_string(bag.mode))}};
        };
    });

    // disaggregate ------------------------------------------------------------
    auto* dis = app.add_subcommand("disaggregate", "Rescale predictions to census totals per region");
    std::string dis_pred, dis_regions, dis_census, dis_out, dis_report, dis_factors;
    dis->add_option("--pred", dis_pred, "Prediction GridPack (band 0 = population)")->required();
    dis->add_option("--regions", dis_regions)->required();
    dis->add_option("--census", dis_census)->required();
    dis->add_option("--out", dis_out)->required();
    dis->add_option("--report", dis_report, "Scale-factor report JSON");
    dis->add_option("--factors", dis_factors, "Per-region factor CSV");
    add_common(dis);
    dis->callback([&] {
        action = [&] {
            const GridD pred = read_gridpack(dis_pred).cast<double>();
            const RegionMap map = read_region_map(dis_regions);
            const CensusTable census = load_census_csv(dis_census);
            rec.inputs = {dis_pred, dis_regions, dis_census};
            if (!map.aligned_with(pred)) throw DataError("misaligned inputs: prediction and region map differ");
            const auto res = dasymetric_rescale(pred, map, census);
            write_gridpack(to_float(res.grid), dis_out);
            rec.outputs = {dis_out};
            if (!dis_report.empty()) {
                write_text_file(dis_report, report_to_json(res.report).dump(2) + "\n");
                rec.outputs.push_back(dis_report);
            }
            if (!dis_factors.empty()) {
                write_text_file(dis_factors, factors_to_csv(res.report));
                rec.outputs.push_back(dis_factors);
            }
            rec.extra = report_to_json(res.report);
        };
    });

    // evaluate ----------------------------------------------------------------
    auto* ev = app.add_subcommand("evaluate", "R^2, MAE and RMSE against a truth grid or census blocks");
    std::string ev_pred, ev_truth, ev_blocks, ev_block_census, ev_out, ev_scatter;
    std::size_t ev_factor = 1;
    double ev_floor = 0.5;
    ev->add_option("--pred", ev_pred)->required();
    ev->add_option("--truth", ev_truth, "Truth GridPack");
    ev->add_option("--factor", ev_factor, "Block size for --truth")->check(CLI::PositiveNumber)->capture_default_str();
    ev->add_option("--blocks", ev_blocks, "Block region map (with --block-census)");
    ev->add_option("--block-census", ev_block_census, "Block truth CSV region_id,count");
    ev->add_option("--out", ev_out, "Report JSON");
    ev->add_option("--scatter", ev_scatter, "Scatter CSV truth,pred");
    ev->add_option("--floor", ev_floor, "Scatter floor bin")->capture_default_str();
    add_common(ev);
    ev->callback([&] {
        action = [&] {
            const Grid pred = read_gridpack(ev_pred);
            rec.inputs.push_back(ev_pred);
            EvalReport report;
            std::vector<double> tv;
            std::vector<double> pv;
            if (!ev_truth.empty()) {
                if (!ev_blocks.empty()) throw CLI::ValidationError("--truth", "excludes --blocks");
                const Grid truth = read_gridpack(ev_truth);
                rec.inputs.push_back(ev_truth);
                report = evaluate_grid(pred, truth, ev_factor);
                const BlockSums p = block_sums(pred, ev_factor);
                const BlockSums t = block_sums(truth, ev_factor);
                for (std::size_t i = 0; i < p.sums.size(); ++i) {
                    if (p.valid[i] && t.valid[i]) {
                        tv.push_back(t.sums[i]);
                        pv.push_back(p.sums[i]);
                    }
                }
            } else if (!ev_blocks.empty()) {
                if (ev_block_census.empty()) throw CLI::RequiredError("--block-census");
                const RegionMap blocks = read_region_map(ev_blocks);
                const CensusTable truth = load_census_csv(ev_block_census);
                rec.inputs.insert(rec.inputs.end(), {ev_blocks, ev_block_census});
                if (!blocks.aligned_with(pred)) throw DataError("misaligned inputs: prediction and blocks differ");
                report = evaluate_blocks(pred, blocks, truth);
                for (const auto& [id, z] : zonal_sum(pred, blocks, 0)) {
                    tv.push_back(truth.entries.at(id));
                    pv.push_back(z.sum);
                }
            } else {
                throw CLI::RequiredError("--truth or --blocks");
            }
            const json j = report_to_json(report);
            print_json(j);
            if (!ev_out.empty()) {
                write_text_file(ev_out, j.dump(2) + "\n");
                rec.outputs.push_back(ev_out);
            }
            if (!ev_scatter.empty()) {
                write_text_file(ev_scatter, scatter_export(tv, pv, ev_floor));
                rec.outputs.push_back(ev_scatter);
            }
            rec.extra = j;
        };
    });

    // merge-regions -----------------------------------------------------------
    auto* mr = app.add_subcommand("merge-regions", "Merge smallest adjacent regions down to a target count");
    std::string mr_regions, mr_census, mr_out, mr_out_census, mr_log;
    std::size_t mr_target = 16;
    mr->add_option("--regions", mr_regions)->required();
    mr->add_option("--census", mr_census, "Census CSV to coarsen alongside the map");
    mr->add_option("--target", mr_target)->required();
    mr->add_option("--out", mr_out, "Merged region map")->required();
    mr->add_option("--out-census", mr_out_census, "Merged census CSV (requires --census)");
    mr->add_option("--log", mr_log, "Merge log CSV");
    add_common(mr);
    mr->callback([&] {
        action = [&] {
            const RegionMap map = read_region_map(mr_regions);
            rec.inputs.push_back(mr_regions);
            std::vector<MergeStep> log;
            if (!mr_census.empty()) {
                const CensusTable census = load_census_csv(mr_census);
                rec.inputs.push_back(mr_census);
                auto c = coarsen_census(map, census, mr_target);
                write_region_map(c.map, mr_out);
                rec.outputs = {mr_out};
                if (!mr_out_census.empty()) {
                    write_census_csv(c.census, mr_out_census);
                    rec.outputs.push_back(mr_out_census);
                }
                log = std::move(c.log);
            } else {
                if (!mr_out_census.empty()) throw CLI::RequiredError("--census (needed by --out-census)");
                auto m = merge_smallest(map, mr_target);
                write_region_map(m.map, mr_out);
                rec.outputs = {mr_out};
                log = std::move(m.log);
            }
            if (!mr_log.empty()) {
                std::ostringstream csv;
                csv << "step,smallest_id,partner_id,kept_id,smallest_pixels,partner_pixels,centroid_fallback\n";
                for (std::size_t i = 0; i < log.size(); ++i) {
                    const auto& s = log[i];
                    csv << i << ',' << s.smallest_id << ',' << s.partner_id << ',' << s.kept_id << ','
                        << s.smallest_pixels << ',' << s.partner_pixels << ',' << (s.centroid_fallback ? 1 : 0) << '\n';
                }
                write_text_file(mr_log, csv.str());
                rec.outputs.push_back(mr_log);
            }
            rec.extra = json{{"merges", log.size()}, {"target", mr_target}};
        };
    });

    // match-regions -----------------------------------------------------------
    auto* mt = app.add_subcommand("match-regions", "Match regions of two maps by IoU");
    std::string mt_a, mt_b, mt_out;
    double mt_threshold = 0.7;
    mt->add_option("--a", mt_a, "Source region map")->required();
    mt->add_option("--b", mt_b, "Target region map")->required();
    mt->add_option("--threshold", mt_threshold)->check(CLI::Range(0.0, 1.0))->capture_default_str();
    mt->add_option("--out", mt_out, "Matches CSV id_a,id_b,iou")->required();
    add_common(mt);
    mt->callback([&] {
        action = [&] {
            const auto matches = iou_match(read_region_map(mt_a), read_region_map(mt_b), mt_threshold);
            std::ostringstream csv;
            csv << "id_a,id_b,iou\n";
            for (const auto& m : matches) csv << m.id_a << ',' << m.id_b << ',' << format_double(m.iou) << '\n';
            write_text_file(mt_out, csv.str());
            rec.inputs = {mt_a, mt_b};
            rec.outputs = {mt_out};
            rec.extra = json{{"matches", matches.size()}};
        };
    });

    // scale-report ------------------------------------------------------------
    auto* sr = app.add_subcommand("scale-report", "Census / predicted ratios per region, without rescaling");
    std::string sr_pred, sr_regions, sr_census, sr_out, sr_factors;
    sr->add_option("--pred", sr_pred)->required();
    sr->add_option("--regions", sr_regions)->required();
    sr->add_option("--census", sr_census)->required();
    sr->add_option("--out", sr_out, "Report JSON")->required();
    sr->add_option("--factors", sr_factors, "Per-region factor CSV");
    add_common(sr);
    sr->callback([&] {
        action = [&] {
            const GridD pred = read_gridpack(sr_pred).cast<double>();
            const RegionMap map = read_region_map(sr_regions);
            if (!map.aligned_with(pred)) throw DataError("misaligned inputs: prediction and region map differ");
            const auto rep = scale_factors(pred, map, load_census_csv(sr_census));
            const json j = report_to_json(rep);
            write_text_file(sr_out, j.dump(2) + "\n");
            rec.inputs = {sr_pred, sr_regions, sr_census};
            rec.outputs = {sr_out};
            if (!sr_factors.empty()) {
                write_text_file(sr_factors, factors_to_csv(rep));
                rec.outputs.push_back(sr_factors);
            }
            rec.extra = j;
        };
    });

    // ablate ------------------------------------------------------------------
    auto* ab = app.add_subcommand("ablate", "Synthetic ablation and scalability experiments");
    std::string ab_experiment = "architecture", ab_config, ab_out;
    std::vector<std::uint64_t> ab_seeds{0, 1, 2, 3, 4};
    std::vector<std::size_t> ab_ladder{100, 64, 32, 16};
    std::size_t ab_regions = 16, ab_members = 5, ab_epochs = 100;
    ab->add_option("--experiment", ab_experiment)
        ->check(CLI::IsMember({"architecture", "ensemble", "modality", "ladder", "recovery"}))
        ->capture_default_str();
    ab->add_option("--config", ab_config, "Experiment JSON {world, train, pretrain, groups, window_radius}");
    ab->add_option("--seeds", ab_seeds)->delimiter(',')->capture_default_str();
    ab->add_option("--regions", ab_regions, "Census regions after coarsening")->capture_default_str();
    ab->add_option("--ladder", ab_ladder, "Census sizes for the ladder experiment")->delimiter(',')->capture_default_str();
    ab->add_option("--members", ab_members, "Seeded models per bag (ensemble experiment)")->capture_default_str();
    ab->add_option("--epochs", ab_epochs)->capture_default_str();
    ab->add_option("--out", ab_out, "Results JSON")->required();
    add_common(ab);
    ab->callback([&] {
        action = [&] {
            ExperimentConfig cfg = default_experiment();
            if (!ab_config.empty()) {
                cfg = experiment_from_json(parse_json_text(read_text_file(ab_config), ab_config));
                rec.inputs.push_back(ab_config);
            }
            if (ab_config.empty() || ab->count("--epochs")) cfg.train.epochs = ab_epochs;
            if (ab_config.empty() || ab->count("--seed")) cfg.world.seed = common.seed;
            const World world = generate_world(cfg.world);
            json results = json::array();
            if (ab_experiment == "recovery") {
                for (auto s : ab_seeds) results.push_back(outcome_to_json(run_recovery(world, cfg, s)));
            } else if (ab_experiment == "ladder") {
                const BranchParams bu = pretrained_builtup(world, cfg);
                for (const auto& step : run_ladder(world, bu, ab_ladder, ab_seeds, cfg)) {
                    json runs = json::array();
                    for (const auto& r : step.runs) runs.push_back(outcome_to_json(r));
                    results.push_back({{"target", step.target}, {"median_r2", step.median_r2}, {"runs", runs}});
                }
            } else {
                auto c = coarsen_census(world.regions, world.census, std::min(ab_regions, world.census.entries.size()));
                std::vector<CaseSpec> cases;
                if (ab_experiment == "architecture") {
                    cases = architecture_cases(pretrained_builtup(world, cfg), cfg.features);
                } else if (ab_experiment == "ensemble") {
                    cases = ensemble_cases(pretrained_builtup(world, cfg), cfg.features, ab_members);
                } else {
                    cases = modality_cases(world, cfg);
                }
                for (const auto& row : run_cases(cases, world.inputs, c.map, c.census, world.truth_population, ab_seeds, cfg)) {
                    results.push_back(row_to_json(row));
                }
            }
            const json out{{"experiment", ab_experiment}, {"config", experiment_to_json(cfg)}, {"results", results}};
            write_text_file(ab_out, out.dump(2) + "\n");
            rec.outputs = {ab_out};
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e, std::cerr, std::cerr);
        return 1;
    }

    const CLI::App* sub = app.get_subcommands().front();
    rec.subcommand = sub->get_name();
    rec.flags = collect_flags(*sub);
    const std::string started = utc_now();
    const auto t0 = std::chrono::steady_clock::now();
    try {
        Eigen::setNbThreads(common.threads);
        action();
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_manifest(rec, common, secs, started);
    } catch (const CLI::ParseError& e) {
        std::cerr << "popgrid " << rec.subcommand << ": " << e.what() << "\n" << sub->help();
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "popgrid " << rec.subcommand << ": numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "popgrid " << rec.subcommand << ": " << e.what() << "\n";
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "popgrid " << rec.subcommand << ": " << e.what() << "\n";
        return 2;
    }
    return 0;
}
