#pragma once

#include "defence/image.hpp"

#include <string>

namespace defence {

struct FlowParams {
    double mu = 0.01;          // smoothness weight
    double epsilon_phi = 0.001;
    double pyramid_ratio = 0.5;
    int min_dim = 16;
    int outer_iters = 3;       // IRLS rounds per linearization
    int cg_iters = 100;
    double cg_tol = 1e-4;
    int warp_updates = 3;      // re-linearizations per pyramid level
};

// Robust weight of the sqrt(s + eps^2) penalty, evaluated at s >= 0.
double phi_prime(double s, double eps);

// O = o_ref OR nn-backwarp(o_t by w, dilated 1 px) OR invalid. Selects the
// pixels where the data term is disabled.
BinaryMask combined_mask(const BinaryMask& o_ref, const BinaryMask& o_t,
                         const FlowField& w, const BinaryMask& invalid);

// One linearization of the robust incremental-flow energy: diagonal image
// operators, IRLS weights, and the stacked right-hand side. The 2x2 block
// matrix is applied operator-form.
struct LinearizedSystem {
    int width = 0;
    int height = 0;
    Image yx, yy;        // warped-image derivatives (diagonal operators)
    Image sel;           // 1 where the data term is active, 0 where disabled
    Image wd;            // data reweighting diagonal
    Image ws;            // smoothness reweighting diagonal
    double mu = 0.0;
    Image rhs_u, rhs_v;

    // A [du; dv] for the symmetric block system. Double precision end to
    // end; the Image overload is a convenience wrapper.
    void apply(const std::vector<double>& duv, std::vector<double>& out) const;
    void apply(const Image& du, const Image& dv, Image& out_u, Image& out_v) const;
};

LinearizedSystem build_system(const Image& y_ref, const Image& y_t,
                              const FlowField& w, const BinaryMask& occ,
                              const FlowParams& params);

struct IncrementResult {
    Image du, dv;
    bool converged = true;
    int iterations = 0;
};

IncrementResult solve_increment(const LinearizedSystem& sys, const FlowParams& params);

// Full IRLS loop at one linearization point: rebuilds the weights around the
// current increment each round. When given, energy_trace records the robust
// incremental energy at dw = 0 and after every round.
IncrementResult irls_solve(const Image& y_ref, const Image& y_t, const FlowField& w,
                           const BinaryMask& occ, const FlowParams& params,
                           std::vector<double>* energy_trace = nullptr);

// Robust incremental-flow energy with the smooth phi approximation, data
// term disabled on occ.
double incremental_energy(const Image& y_ref, const Image& y_t, const FlowField& w,
                          const Image& du, const Image& dv, const BinaryMask& occ,
                          const FlowParams& params);

struct FlowResult {
    FlowField flow;
    bool low_confidence = false;
};

// Coarse-to-fine incremental flow with the data term disabled under the
// combined occlusion mask.
FlowResult estimate_flow(const Image& y_ref, const Image& y_t,
                         const BinaryMask& o_ref, const BinaryMask& o_t,
                         const FlowParams& params);

// Middlebury .flo format.
FlowField read_flo(const std::string& path);
void write_flo(const std::string& path, const FlowField& flow);

}  // namespace defence
