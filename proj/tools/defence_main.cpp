#include "defence/config.hpp"
#include "defence/fenceseg.hpp"
#include "defence/fusion.hpp"
#include "defence/imgops.hpp"
#include "defence/occflow.hpp"
#include "defence/png_io.hpp"
#include "defence/synthbench.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using namespace defence;

namespace {

std::unique_ptr<FeatureBackend> make_backend(const std::string& name,
                                             const std::string& feature_file) {
    if (name == "feature-file") {
        if (feature_file.empty())
            throw std::runtime_error("classifier expects a feature file; pass --features");
        return std::make_unique<FeatureFileBackend>(feature_file);
    }
    return std::make_unique<DescriptorBackend>();
}

std::vector<std::pair<double, double>> read_joints_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::pair<double, double>> joints;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        double x, y;
        char comma;
        if (ss >> x >> comma >> y) joints.emplace_back(x, y);
    }
    return joints;
}

void write_joints_csv(const std::string& path,
                      const std::vector<std::pair<double, double>>& joints) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    for (auto [x, y] : joints) out << x << "," << y << "\n";
}

PipelineConfig load_config(const std::string& path) {
    return path.empty() ? PipelineConfig{} : parse_config_file(path);
}

int cmd_segment(const std::string& image_path, const std::string& model_path,
                const std::string& out_mask, const std::string& feature_file,
                const std::string& config_path, std::optional<int> stride,
                std::optional<double> tau) {
    PipelineConfig cfg = load_config(config_path);
    if (stride) cfg.segment.stride = *stride;
    if (tau) cfg.segment.tau = *tau;
    Image img = read_png(image_path);
    LinearClassifier clf = load_classifier(model_path);
    auto backend = make_backend(clf.backend, feature_file);
    SegmentationResult res = segment_fence(img, clf, *backend, cfg.segment);
    write_mask_png(out_mask, res.mask);
    if (res.empty) {
        std::cerr << "warning: zero texel detections, empty mask written\n";
        return 3;
    }
    return 0;
}

int cmd_flow(const std::string& ref_path, const std::string& tgt_path,
             const std::string& ref_mask_path, const std::string& tgt_mask_path,
             const std::string& out_path, const std::string& config_path,
             std::optional<double> mu) {
    PipelineConfig cfg = load_config(config_path);
    if (mu) cfg.flow.mu = *mu;
    Image ref = read_png(ref_path);
    Image tgt = read_png(tgt_path);
    BinaryMask ref_mask = ref_mask_path.empty() ? BinaryMask(ref.width, ref.height)
                                                : read_mask_png(ref_mask_path);
    BinaryMask tgt_mask = tgt_mask_path.empty() ? BinaryMask(tgt.width, tgt.height)
                                                : read_mask_png(tgt_mask_path);
    FlowResult res = estimate_flow(ref, tgt, ref_mask, tgt_mask, cfg.flow);
    if (res.low_confidence)
        std::cerr << "warning: degenerate images, zero flow written\n";
    write_flo(out_path, res.flow);
    return 0;
}

int cmd_run(const std::vector<std::string>& frame_paths,
            const std::vector<std::string>& mask_paths,
            const std::vector<std::string>& flow_paths, int ref_index,
            const std::string& model_path, const std::string& feature_file,
            const std::string& out_path, const std::string& config_path,
            std::optional<double> lambda, const std::string& keep_dir) {
    PipelineConfig cfg = load_config(config_path);
    if (lambda) cfg.lambda = *lambda;
    std::cerr << "resolved config:\n" << config_to_json(cfg) << "\n";

    std::vector<Image> frames;
    for (const auto& p : frame_paths) frames.push_back(read_png(p));

    std::vector<BinaryMask> masks;
    if (!mask_paths.empty()) {
        for (const auto& p : mask_paths) masks.push_back(read_mask_png(p));
    } else {
        if (model_path.empty())
            throw std::runtime_error("no masks given; pass --model to segment fences");
        LinearClassifier clf = load_classifier(model_path);
        auto backend = make_backend(clf.backend, feature_file);
        for (size_t i = 0; i < frames.size(); ++i) {
            SegmentationResult seg = segment_fence(frames[i], clf, *backend, cfg.segment);
            if (!keep_dir.empty())
                write_mask_png((fs::path(keep_dir) / ("mask_" + std::to_string(i) + ".png")).string(),
                               seg.mask);
            masks.push_back(std::move(seg.mask));
        }
    }

    std::optional<std::vector<FlowField>> flows;
    if (!flow_paths.empty()) {
        flows.emplace();
        for (const auto& p : flow_paths) flows->push_back(read_flo(p));
    }

    PipelineResult res = defence_pipeline(frames, masks, ref_index, cfg.pipeline_params(),
                                          flows ? &*flows : nullptr);
    write_png(out_path, res.image);
    if (!keep_dir.empty() && !flows) {
        // Re-derive flows for the intermediates directory.
        for (size_t m = 0; m < frames.size(); ++m) {
            if (static_cast<int>(m) == ref_index) continue;
            FlowResult fr = estimate_flow(frames[m], frames[ref_index], masks[m],
                                          masks[ref_index], cfg.flow);
            write_flo((fs::path(keep_dir) / ("flow_" + std::to_string(m) + ".flo")).string(),
                      fr.flow);
        }
    }
    if (res.empty_masks) {
        std::cerr << "warning: all fence masks empty, reference frame written\n";
        return 3;
    }
    if (!res.converged) {
        std::cerr << "warning: FISTA did not converge within max_iters\n";
        return 2;
    }
    return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
    std::ifstream in(spec_path);
    if (!in) throw std::runtime_error("cannot open " + spec_path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    SceneSpec spec = scene_spec_from_json(text);
    RenderedScene scene = render_scene(spec);

    fs::create_directories(out_dir);
    fs::path dir(out_dir);
    nlohmann::json manifest;
    manifest["spec"] = nlohmann::json::parse(scene_spec_to_json(spec));
    manifest["seed"] = scene.gt.seed;
    manifest["frames"] = nlohmann::json::array();
    write_png((dir / "background.png").string(), scene.gt.background);
    for (size_t m = 0; m < scene.frames.size(); ++m) {
        std::string tag = std::to_string(m);
        write_png((dir / ("frame_" + tag + ".png")).string(), scene.frames[m]);
        write_mask_png((dir / ("mask_" + tag + ".png")).string(), scene.gt.masks[m]);
        write_flo((dir / ("flow_" + tag + ".flo")).string(), scene.gt.flows[m]);
        write_joints_csv((dir / ("joints_" + tag + ".csv")).string(), scene.gt.joints[m]);
        manifest["frames"].push_back({{"frame", "frame_" + tag + ".png"},
                                      {"mask", "mask_" + tag + ".png"},
                                      {"flow", "flow_" + tag + ".flo"},
                                      {"joints", "joints_" + tag + ".csv"}});
    }
    std::ofstream mf(dir / "manifest.json");
    mf << manifest.dump(2) << "\n";
    return 0;
}

int cmd_train(const std::vector<std::string>& scene_dirs, const std::string& out_path,
              int window, int neg_per_pos, unsigned seed) {
    DescriptorBackend backend;
    std::vector<FeatureVector> positives, negatives;
    std::mt19937 rng(seed);
    for (const auto& d : scene_dirs) {
        Image img = read_png((fs::path(d) / "frame_0.png").string());
        auto joints = read_joints_csv((fs::path(d) / "joints_0.csv").string());
        std::string mask_path = (fs::path(d) / "mask_0.png").string();
        bool has_mask = fs::exists(mask_path);
        BinaryMask mask = has_mask ? read_mask_png(mask_path)
                                   : BinaryMask(img.width, img.height);
        const int half = window / 2;
        std::uniform_int_distribution<int> dx(half, img.width - 1 - half);
        std::uniform_int_distribution<int> dy(half, img.height - 1 - half);
        auto far_from_joints = [&](int nx, int ny) {
            for (auto [qx, qy] : joints) {
                double ex = nx - qx, ey = ny - qy;
                if (ex * ex + ey * ey < half * half) return false;
            }
            return true;
        };
        for (auto [jx, jy] : joints) {
            int cx = static_cast<int>(std::lround(jx));
            int cy = static_cast<int>(std::lround(jy));
            if (cx < half || cx > img.width - 1 - half || cy < half ||
                cy > img.height - 1 - half)
                continue;
            // Small positive jitter teaches tolerance to off-grid centers.
            for (auto [ox, oy] : {std::pair{0, 0}, {2, 0}, {-2, 0}, {0, 2}, {0, -2}}) {
                int px = cx + ox, py = cy + oy;
                if (px >= half && px <= img.width - 1 - half && py >= half &&
                    py <= img.height - 1 - half)
                    positives.push_back(backend.extract(img, px, py, window));
            }
            // Rejection-sample negative centers away from every joint; half
            // anywhere, half on the fence mask so plain wire segments between
            // joints become hard negatives.
            for (int k = 0; k < neg_per_pos; ++k)
                for (int tries = 0; tries < 100; ++tries) {
                    int nx = dx(rng), ny = dy(rng);
                    if (far_from_joints(nx, ny)) {
                        negatives.push_back(backend.extract(img, nx, ny, window));
                        break;
                    }
                }
            if (has_mask)
                for (int k = 0; k < neg_per_pos; ++k)
                    for (int tries = 0; tries < 200; ++tries) {
                        int nx = dx(rng), ny = dy(rng);
                        if (mask.at(nx, ny) && far_from_joints(nx, ny)) {
                            negatives.push_back(backend.extract(img, nx, ny, window));
                            break;
                        }
                    }
        }
    }
    std::cerr << "training on " << positives.size() << " positives, "
              << negatives.size() << " negatives\n";
    LinearClassifier clf = train_classifier(positives, negatives, 10.0, 150, seed);
    clf.backend = backend.name();
    save_classifier(out_path, clf);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"defence: fence segmentation, occlusion-aware flow, and multi-frame de-fencing"};
    app.require_subcommand(1);

    // segment
    auto* seg = app.add_subcommand("segment", "Segment fence pixels in one image");
    std::string seg_image, seg_model, seg_out, seg_features, seg_config;
    std::optional<int> seg_stride;
    std::optional<double> seg_tau;
    seg->add_option("--image", seg_image)->required();
    seg->add_option("--model", seg_model)->required();
    seg->add_option("--out-mask", seg_out)->required();
    seg->add_option("--features", seg_features, "FVEC feature file for the feature-file backend");
    seg->add_option("--config", seg_config);
    seg->add_option("--stride", seg_stride);
    seg->add_option("--tau", seg_tau);

    // flow
    auto* flow = app.add_subcommand("flow", "Occlusion-aware optical flow between two frames");
    std::string fl_ref, fl_tgt, fl_rmask, fl_tmask, fl_out, fl_config;
    std::optional<double> fl_mu;
    flow->add_option("--ref", fl_ref)->required();
    flow->add_option("--tgt", fl_tgt)->required();
    flow->add_option("--ref-mask", fl_rmask);
    flow->add_option("--tgt-mask", fl_tmask);
    flow->add_option("--out", fl_out)->required();
    flow->add_option("--config", fl_config);
    flow->add_option("--mu", fl_mu);

    // run
    auto* run = app.add_subcommand("run", "Full de-fencing pipeline on three frames");
    std::vector<std::string> run_frames, run_masks, run_flows;
    std::string run_model, run_features, run_out, run_config, run_keep;
    int run_ref = 1;
    std::optional<double> run_lambda;
    run->add_option("--frames", run_frames)->expected(3)->required();
    run->add_option("--ref", run_ref);
    run->add_option("--masks", run_masks)->expected(3);
    run->add_option("--flows", run_flows)->expected(3);
    run->add_option("--model", run_model);
    run->add_option("--features", run_features);
    run->add_option("--lambda", run_lambda);
    run->add_option("--out", run_out)->required();
    run->add_option("--config", run_config);
    run->add_option("--keep-intermediates", run_keep);

    // synth
    auto* synth = app.add_subcommand("synth", "Render a synthetic fenced scene with ground truth");
    std::string sy_spec, sy_out;
    synth->add_option("--spec", sy_spec)->required();
    synth->add_option("--out-dir", sy_out)->required();

    // train-classifier
    auto* train = app.add_subcommand("train-classifier", "Train a texel classifier on synth scenes");
    std::vector<std::string> tr_dirs;
    std::string tr_out;
    int tr_window = 32, tr_npp = 2;
    unsigned tr_seed = 0;
    train->add_option("--scene-dirs", tr_dirs)->required();
    train->add_option("--out", tr_out)->required();
    train->add_option("--window", tr_window);
    train->add_option("--neg-per-pos", tr_npp);
    train->add_option("--seed", tr_seed);

    // eval
    auto* eval = app.add_subcommand("eval", "Compute metrics from files");
    eval->require_subcommand(1);
    auto* ev_det = eval->add_subcommand("detection", "Joint-detection precision/recall/F");
    std::string ed_pred, ed_gt;
    double ed_radius = 5.0;
    ev_det->add_option("--pred", ed_pred)->required();
    ev_det->add_option("--gt", ed_gt)->required();
    ev_det->add_option("--radius", ed_radius);
    auto* ev_mask = eval->add_subcommand("mask", "Pixel mask precision/recall/F");
    std::string em_pred, em_gt;
    ev_mask->add_option("--pred", em_pred)->required();
    ev_mask->add_option("--gt", em_gt)->required();
    auto* ev_flow = eval->add_subcommand("flow", "Mean endpoint error");
    std::string ef_pred, ef_gt, ef_exclude;
    ev_flow->add_option("--pred", ef_pred)->required();
    ev_flow->add_option("--gt", ef_gt)->required();
    ev_flow->add_option("--exclude", ef_exclude);
    auto* ev_psnr = eval->add_subcommand("psnr", "PSNR against ground truth");
    std::string ep_pred, ep_gt, ep_region;
    ev_psnr->add_option("--pred", ep_pred)->required();
    ev_psnr->add_option("--gt", ep_gt)->required();
    ev_psnr->add_option("--region", ep_region);

    CLI11_PARSE(app, argc, argv);

    try {
        if (seg->parsed())
            return cmd_segment(seg_image, seg_model, seg_out, seg_features, seg_config,
                               seg_stride, seg_tau);
        if (flow->parsed())
            return cmd_flow(fl_ref, fl_tgt, fl_rmask, fl_tmask, fl_out, fl_config, fl_mu);
        if (run->parsed())
            return cmd_run(run_frames, run_masks, run_flows, run_ref, run_model,
                           run_features, run_out, run_config, run_lambda, run_keep);
        if (synth->parsed()) return cmd_synth(sy_spec, sy_out);
        if (train->parsed()) return cmd_train(tr_dirs, tr_out, tr_window, tr_npp, tr_seed);
        if (eval->parsed()) {
            if (ev_det->parsed()) {
                auto gt = read_joints_csv(ed_gt);
                auto pred_xy = read_joints_csv(ed_pred);
                std::vector<TexelDetection> pred;
                for (auto [x, y] : pred_xy)
                    pred.push_back({static_cast<int>(std::lround(x)),
                                    static_cast<int>(std::lround(y)), 0.0f});
                PrfScores s = detection_fmeasure(pred, gt, ed_radius);
                std::cout << "precision " << s.precision << "\nrecall " << s.recall
                          << "\nf " << s.f << "\n";
            } else if (ev_mask->parsed()) {
                PrfScores s = mask_fmeasure(read_mask_png(em_pred), read_mask_png(em_gt));
                std::cout << "precision " << s.precision << "\nrecall " << s.recall
                          << "\nf " << s.f << "\n";
            } else if (ev_flow->parsed()) {
                BinaryMask excl;
                bool has_excl = !ef_exclude.empty();
                if (has_excl) excl = read_mask_png(ef_exclude);
                double epe = endpoint_error(read_flo(ef_pred), read_flo(ef_gt),
                                            has_excl ? &excl : nullptr);
                std::cout << "epe " << epe << "\n";
            } else if (ev_psnr->parsed()) {
                BinaryMask region;
                bool has_region = !ep_region.empty();
                if (has_region) region = read_mask_png(ep_region);
                double db = psnr(read_png(ep_pred), read_png(ep_gt),
                                 has_region ? &region : nullptr);
                std::cout << "psnr " << db << "\n";
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
