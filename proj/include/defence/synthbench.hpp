#pragma once

#include "defence/fenceseg.hpp"
#include "defence/image.hpp"

#include <array>
#include <string>
#include <tuple>
#include <vector>

namespace defence {

// Per-frame global motion: p in the frame samples the latent background at
// A p + t (identity + translation by default).
struct Motion {
    double a11 = 1.0, a12 = 0.0, a21 = 0.0, a22 = 1.0;
    double tx = 0.0, ty = 0.0;

    static Motion translation(double dx, double dy) {
        Motion m;
        m.tx = dx;
        m.ty = dy;
        return m;
    }
};

struct LatticeSpec {
    double spacing = 40.0;
    double angle_deg = 0.0;
    double thickness = 3.0;
    std::array<float, 3> color = {0.85f, 0.85f, 0.9f};
    double origin_x = 0.0;
    double origin_y = 0.0;
    bool soft_edge = false;  // 1 px alpha falloff at wire borders
};

struct SceneSpec {
    int width = 320;
    int height = 240;
    int frames = 3;
    std::string texture = "noise";  // "noise", "checker", or a PNG path
    unsigned seed = 0;
    double noise_sigma = 0.01;
    LatticeSpec lattice;
    std::vector<Motion> motions;  // per frame; identity when omitted
};

struct GroundTruth {
    Image background;                       // the latent x
    std::vector<BinaryMask> masks;          // per-frame fence support
    std::vector<FlowField> flows;           // per-frame motion fields
    std::vector<std::vector<std::pair<double, double>>> joints;
    unsigned seed = 0;
};

struct RenderedScene {
    std::vector<Image> frames;
    GroundTruth gt;
};

RenderedScene render_scene(const SceneSpec& spec);

Image make_background(const std::string& texture, int width, int height, unsigned seed);
Image warp_background(const Image& bg, const Motion& motion);

SceneSpec scene_spec_from_json(const std::string& json_text);
std::string scene_spec_to_json(const SceneSpec& spec);

struct PrfScores {
    double precision = 0.0;
    double recall = 0.0;
    double f = 0.0;
};

double f_from_pr(double precision, double recall);

// Greedy one-to-one matching by increasing distance within the radius.
PrfScores detection_fmeasure(const std::vector<TexelDetection>& pred,
                             const std::vector<std::pair<double, double>>& gt_joints,
                             double radius);

PrfScores mask_fmeasure(const BinaryMask& pred, const BinaryMask& gt);

double endpoint_error(const FlowField& pred, const FlowField& gt,
                      const BinaryMask* exclude = nullptr);

// 10 log10(1 / MSE); +infinity when MSE is zero. Region defaults to all.
double psnr(const Image& pred, const Image& gt, const BinaryMask* region = nullptr);

}  // namespace defence
