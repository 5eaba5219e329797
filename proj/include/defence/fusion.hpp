#pragma once

#include "defence/image.hpp"
#include "defence/occflow.hpp"

#include <vector>

namespace defence {

// y = O F x: backward-warp by `warp`, then zero fence and out-of-support
// pixels. `valid` is the in-bounds footprint of the warp.
struct DegradationOperator {
    FlowField warp;
    BinaryMask mask;   // true = fence, excluded from the data term
    BinaryMask valid;  // true = warp sample footprint inside the image

    static DegradationOperator identity(int width, int height);
    static DegradationOperator from_flow(const FlowField& warp, const BinaryMask& mask);
};

Image apply_degradation(const DegradationOperator& op, const Image& x);
Image adjoint_degradation(const DegradationOperator& op, const Image& r);

struct FistaProblem {
    std::vector<Image> observations;
    std::vector<DegradationOperator> ops;
    double lambda = 0.0005;
    double alpha = 0.0;      // step size; estimate_step fills it when 0
    double eps_stop = 0.0;   // default 1e-4 * sqrt(pixel count) when 0
    int max_iters = 500;
};

// Gradient of the quadratic data term: 2 * sum_m F^T O^T (O F z - y_m).
Image data_gradient(const Image& z, const FistaProblem& prob);

double data_objective(const Image& z, const FistaProblem& prob);
double fista_objective(const Image& z, const FistaProblem& prob);

// Elementwise soft-thresholding.
Image prox_l1(const Image& x, double threshold);

// 0.95 / L where L is the largest eigenvalue of the doubled normal operator,
// estimated by power iteration from a seeded random start.
double estimate_step(const FistaProblem& prob, int iters);

struct FistaResult {
    Image x;
    int iterations = 0;
    bool converged = true;
};

FistaResult fista_defence(const FistaProblem& prob, const Image& x0);

struct PipelineParams {
    FlowParams flow;
    double lambda = 0.0005;
    double eps_stop = 0.0;
    int max_iters = 500;
    int power_iters = 20;
};

struct PipelineResult {
    Image image;
    bool converged = true;
    bool empty_masks = false;
};

// Three-frame de-fencing: occlusion-aware flow from the reference to each
// other frame, degradation operators, nearest-neighbor fill init, FISTA per
// channel. Flows may be injected to skip estimation.
PipelineResult defence_pipeline(const std::vector<Image>& frames,
                                const std::vector<BinaryMask>& masks,
                                int ref_index, const PipelineParams& params,
                                const std::vector<FlowField>* flows = nullptr);

// Fills masked pixels with the nearest unmasked value (multi-source BFS).
Image fill_nearest(const Image& img, const BinaryMask& mask);

}  // namespace defence
