#include "defence/synthbench.hpp"

#include "defence/imgops.hpp"
#include "defence/png_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace defence {

namespace {

constexpr double kPi = 3.14159265358979323846;

float sample_clamped(const Image& img, double sx, double sy, int c) {
    sx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
    sy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
    int x0 = static_cast<int>(std::floor(sx));
    int y0 = static_cast<int>(std::floor(sy));
    int x1 = std::min(x0 + 1, img.width - 1);
    int y1 = std::min(y0 + 1, img.height - 1);
    double fx = sx - x0, fy = sy - y0;
    return static_cast<float>((1 - fx) * (1 - fy) * img.at(x0, y0, c) +
                              fx * (1 - fy) * img.at(x1, y0, c) +
                              (1 - fx) * fy * img.at(x0, y1, c) +
                              fx * fy * img.at(x1, y1, c));
}

// Distance from a point to the nearest line of one lattice family. Family
// lines are spaced `spacing` apart along the unit normal `n`.
double line_family_dist(double px, double py, double nx, double ny,
                        double ox, double oy, double spacing) {
    double d = (px - ox) * nx + (py - oy) * ny;
    double m = std::fmod(std::fmod(d, spacing) + spacing, spacing);
    return std::min(m, spacing - m);
}

double lattice_dist(const LatticeSpec& lat, double px, double py) {
    double theta = lat.angle_deg * kPi / 180.0;
    double c = std::cos(theta), s = std::sin(theta);
    // Family 1 runs along (c, s): normal (-s, c). Family 2 is perpendicular.
    double d1 = line_family_dist(px, py, -s, c, lat.origin_x, lat.origin_y, lat.spacing);
    double d2 = line_family_dist(px, py, c, s, lat.origin_x, lat.origin_y, lat.spacing);
    return std::min(d1, d2);
}

}  // namespace

Image make_background(const std::string& texture, int width, int height, unsigned seed) {
    if (texture == "noise") {
        Image img(width, height, 3);
        std::mt19937 rng(seed);
        std::uniform_real_distribution<float> dist(0.0f, 1.0f);
        for (auto& v : img.data) v = dist(rng);
        img = gaussian_blur(img, 2.0);
        // Stretch each channel to [0.05, 0.95] so flow has gradient content.
        for (int c = 0; c < 3; ++c) {
            float lo = 1.0f, hi = 0.0f;
            for (int y = 0; y < height; ++y)
                for (int x = 0; x < width; ++x) {
                    lo = std::min(lo, img.at(x, y, c));
                    hi = std::max(hi, img.at(x, y, c));
                }
            float span = std::max(hi - lo, 1e-6f);
            for (int y = 0; y < height; ++y)
                for (int x = 0; x < width; ++x)
                    img.at(x, y, c) = 0.05f + 0.9f * (img.at(x, y, c) - lo) / span;
        }
        return img;
    }
    if (texture == "checker") {
        Image img(width, height, 3);
        const double period = 24.0;
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                double wave = 0.25 * (std::sin(2.0 * kPi * x / period) +
                                      std::sin(2.0 * kPi * y / period));
                double grad = 0.3 * x / std::max(1, width - 1) +
                              0.2 * y / std::max(1, height - 1);
                img.at(x, y, 0) = static_cast<float>(std::clamp(0.35 + wave + grad * 0.5, 0.0, 1.0));
                img.at(x, y, 1) = static_cast<float>(std::clamp(0.45 + wave * 0.8 + grad * 0.3, 0.0, 1.0));
                img.at(x, y, 2) = static_cast<float>(std::clamp(0.30 + wave * 0.6 + grad, 0.0, 1.0));
            }
        // A little smoothed noise on top so the texture is not periodic.
        std::mt19937 rng(seed);
        std::uniform_real_distribution<float> dist(-0.5f, 0.5f);
        Image noise(width, height, 3);
        for (auto& v : noise.data) v = dist(rng);
        noise = gaussian_blur(noise, 3.0);
        for (size_t i = 0; i < img.data.size(); ++i)
            img.data[i] = std::clamp(img.data[i] + 0.2f * noise.data[i], 0.0f, 1.0f);
        return img;
    }
    return read_png(texture);
}

Image warp_background(const Image& bg, const Motion& m) {
    Image out(bg.width, bg.height, bg.channels);
    for (int y = 0; y < bg.height; ++y)
        for (int x = 0; x < bg.width; ++x) {
            double sx = m.a11 * x + m.a12 * y + m.tx;
            double sy = m.a21 * x + m.a22 * y + m.ty;
            for (int c = 0; c < bg.channels; ++c)
                out.at(x, y, c) = sample_clamped(bg, sx, sy, c);
        }
    return out;
}

RenderedScene render_scene(const SceneSpec& spec) {
    if (spec.frames < 1) throw std::invalid_argument("render_scene: frames < 1");
    if (spec.lattice.spacing <= 2.0 * spec.lattice.thickness)
        throw std::invalid_argument("render_scene: spacing must exceed 2x thickness");

    RenderedScene scene;
    scene.gt.seed = spec.seed;
    scene.gt.background = make_background(spec.texture, spec.width, spec.height, spec.seed);
    const Image& bg = scene.gt.background;
    const LatticeSpec& lat = spec.lattice;
    const double half = lat.thickness / 2.0;

    BinaryMask mask(spec.width, spec.height);
    Image coverage(spec.width, spec.height, 1);
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
            double d = lattice_dist(lat, x, y);
            mask.set(x, y, d <= half);
            coverage.at(x, y) = lat.soft_edge
                                    ? static_cast<float>(std::clamp(half + 0.5 - d, 0.0, 1.0))
                                    : (d <= half ? 1.0f : 0.0f);
        }

    // Joint positions: intersections of the two line families.
    std::vector<std::pair<double, double>> joints;
    {
        double theta = lat.angle_deg * kPi / 180.0;
        double c = std::cos(theta), s = std::sin(theta);
        int range = static_cast<int>(
            std::ceil((spec.width + spec.height) / lat.spacing)) + 2;
        for (int i = -range; i <= range; ++i)
            for (int j = -range; j <= range; ++j) {
                double px = lat.origin_x + i * lat.spacing * c - j * lat.spacing * s;
                double py = lat.origin_y + i * lat.spacing * s + j * lat.spacing * c;
                if (px >= 0.0 && px <= spec.width - 1 && py >= 0.0 && py <= spec.height - 1)
                    joints.emplace_back(px, py);
            }
        std::sort(joints.begin(), joints.end());
    }

    for (int m = 0; m < spec.frames; ++m) {
        Motion motion = m < static_cast<int>(spec.motions.size()) ? spec.motions[m] : Motion{};
        Image warped = warp_background(bg, motion);
        Image frame(spec.width, spec.height, bg.channels);
        std::mt19937 rng(spec.seed * 7919u + static_cast<unsigned>(m) + 1u);
        std::normal_distribution<float> noise(0.0f, static_cast<float>(spec.noise_sigma));
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x) {
                float a = coverage.at(x, y);
                for (int c = 0; c < bg.channels; ++c) {
                    float fence = lat.color[bg.channels == 3 ? c : 0];
                    float v = a * fence + (1.0f - a) * warped.at(x, y, c);
                    if (spec.noise_sigma > 0.0) v += noise(rng);
                    frame.at(x, y, c) = std::clamp(v, 0.0f, 1.0f);
                }
            }
        scene.frames.push_back(std::move(frame));
        scene.gt.masks.push_back(mask);
        FlowField flow(spec.width, spec.height);
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x) {
                flow.u_at(x, y) = static_cast<float>(motion.a11 * x + motion.a12 * y + motion.tx - x);
                flow.v_at(x, y) = static_cast<float>(motion.a21 * x + motion.a22 * y + motion.ty - y);
            }
        scene.gt.flows.push_back(std::move(flow));
        scene.gt.joints.push_back(joints);
    }
    return scene;
}

SceneSpec scene_spec_from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    SceneSpec spec;
    spec.width = j.value("width", spec.width);
    spec.height = j.value("height", spec.height);
    spec.frames = j.value("frames", spec.frames);
    spec.texture = j.value("texture", spec.texture);
    spec.seed = j.value("seed", spec.seed);
    spec.noise_sigma = j.value("noise_sigma", spec.noise_sigma);
    if (j.contains("lattice")) {
        const auto& l = j["lattice"];
        spec.lattice.spacing = l.value("spacing", spec.lattice.spacing);
        spec.lattice.angle_deg = l.value("angle_deg", spec.lattice.angle_deg);
        spec.lattice.thickness = l.value("thickness", spec.lattice.thickness);
        if (l.contains("color")) {
            auto c = l["color"].get<std::vector<float>>();
            for (size_t i = 0; i < std::min<size_t>(3, c.size()); ++i)
                spec.lattice.color[i] = c[i];
        }
        if (l.contains("origin")) {
            spec.lattice.origin_x = l["origin"][0].get<double>();
            spec.lattice.origin_y = l["origin"][1].get<double>();
        }
        spec.lattice.soft_edge = l.value("soft_edge", false);
    }
    if (j.contains("motions"))
        for (const auto& m : j["motions"]) {
            if (m.is_array()) {
                spec.motions.push_back(Motion::translation(m[0].get<double>(), m[1].get<double>()));
            } else {
                auto a = m.at("matrix").get<std::vector<double>>();
                if (a.size() != 6)
                    throw std::runtime_error("scene spec: affine matrix needs 6 entries");
                Motion mo;
                mo.a11 = a[0];
                mo.a12 = a[1];
                mo.tx = a[2];
                mo.a21 = a[3];
                mo.a22 = a[4];
                mo.ty = a[5];
                spec.motions.push_back(mo);
            }
        }
    return spec;
}

std::string scene_spec_to_json(const SceneSpec& spec) {
    nlohmann::json j;
    j["width"] = spec.width;
    j["height"] = spec.height;
    j["frames"] = spec.frames;
    j["texture"] = spec.texture;
    j["seed"] = spec.seed;
    j["noise_sigma"] = spec.noise_sigma;
    j["lattice"] = {{"spacing", spec.lattice.spacing},
                    {"angle_deg", spec.lattice.angle_deg},
                    {"thickness", spec.lattice.thickness},
                    {"color", std::vector<float>(spec.lattice.color.begin(), spec.lattice.color.end())},
                    {"origin", {spec.lattice.origin_x, spec.lattice.origin_y}},
                    {"soft_edge", spec.lattice.soft_edge}};
    j["motions"] = nlohmann::json::array();
    for (const auto& m : spec.motions)
        j["motions"].push_back({{"matrix", {m.a11, m.a12, m.tx, m.a21, m.a22, m.ty}}});
    return j.dump(2);
}

double f_from_pr(double precision, double recall) {
    if (precision + recall <= 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

PrfScores detection_fmeasure(const std::vector<TexelDetection>& pred,
                             const std::vector<std::pair<double, double>>& gt_joints,
                             double radius) {
    if (radius <= 0.0) throw std::invalid_argument("detection_fmeasure: radius <= 0");
    struct Pair {
        double dist;
        size_t p, g;
    };
    std::vector<Pair> pairs;
    for (size_t p = 0; p < pred.size(); ++p)
        for (size_t g = 0; g < gt_joints.size(); ++g) {
            double dx = pred[p].x - gt_joints[g].first;
            double dy = pred[p].y - gt_joints[g].second;
            double d = std::sqrt(dx * dx + dy * dy);
            if (d <= radius) pairs.push_back({d, p, g});
        }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        if (a.p != b.p) return a.p < b.p;
        return a.g < b.g;
    });
    std::vector<bool> p_used(pred.size(), false), g_used(gt_joints.size(), false);
    size_t tp = 0;
    for (const auto& pr : pairs) {
        if (p_used[pr.p] || g_used[pr.g]) continue;
        p_used[pr.p] = true;
        g_used[pr.g] = true;
        ++tp;
    }
    PrfScores s;
    s.precision = pred.empty() ? 0.0 : static_cast<double>(tp) / pred.size();
    s.recall = gt_joints.empty() ? 0.0 : static_cast<double>(tp) / gt_joints.size();
    s.f = f_from_pr(s.precision, s.recall);
    return s;
}

PrfScores mask_fmeasure(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.width != gt.width || pred.height != gt.height)
        throw std::invalid_argument("mask_fmeasure: dimension mismatch");
    size_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        bool p = pred.data[i], g = gt.data[i];
        tp += (p && g);
        fp += (p && !g);
        fn += (!p && g);
    }
    PrfScores s;
    s.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    s.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    s.f = f_from_pr(s.precision, s.recall);
    return s;
}

double endpoint_error(const FlowField& pred, const FlowField& gt,
                      const BinaryMask* exclude) {
    if (pred.width != gt.width || pred.height != gt.height)
        throw std::invalid_argument("endpoint_error: dimension mismatch");
    double sum = 0.0;
    size_t n = 0;
    for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x) {
            if (exclude && exclude->at(x, y)) continue;
            double du = static_cast<double>(pred.u_at(x, y)) - gt.u_at(x, y);
            double dv = static_cast<double>(pred.v_at(x, y)) - gt.v_at(x, y);
            sum += std::sqrt(du * du + dv * dv);
            ++n;
        }
    if (n == 0) throw std::invalid_argument("endpoint_error: all pixels excluded");
    return sum / static_cast<double>(n);
}

double psnr(const Image& pred, const Image& gt, const BinaryMask* region) {
    if (!pred.same_size(gt) || pred.channels != gt.channels)
        throw std::invalid_argument("psnr: dimension mismatch");
    double mse = 0.0;
    size_t n = 0;
    for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x) {
            if (region && !region->at(x, y)) continue;
            for (int c = 0; c < pred.channels; ++c) {
                double d = static_cast<double>(pred.at(x, y, c)) - gt.at(x, y, c);
                mse += d * d;
                ++n;
            }
        }
    if (n == 0) throw std::invalid_argument("psnr: empty region");
    mse /= static_cast<double>(n);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace defence
