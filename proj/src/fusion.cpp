#include "defence/fusion.hpp"

#include "defence/imgops.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <random>
#include <stdexcept>

namespace defence {

DegradationOperator DegradationOperator::identity(int width, int height) {
    DegradationOperator op;
    op.warp = FlowField(width, height);
    op.mask = BinaryMask(width, height);
    op.valid = BinaryMask(width, height, true);
    return op;
}

DegradationOperator DegradationOperator::from_flow(const FlowField& warp,
                                                   const BinaryMask& mask) {
    DegradationOperator op;
    op.warp = warp;
    op.mask = mask;
    op.valid = BinaryMask(warp.width, warp.height);
    for (int y = 0; y < warp.height; ++y)
        for (int x = 0; x < warp.width; ++x) {
            float sx = x + warp.u_at(x, y);
            float sy = y + warp.v_at(x, y);
            op.valid.set(x, y, sx >= 0.0f && sx <= warp.width - 1 && sy >= 0.0f &&
                                   sy <= warp.height - 1);
        }
    return op;
}

Image apply_degradation(const DegradationOperator& op, const Image& x) {
    if (x.width != op.warp.width || x.height != op.warp.height)
        throw std::invalid_argument("apply_degradation: dimension mismatch");
    Image out(x.width, x.height, x.channels);
    for (int y = 0; y < x.height; ++y)
        for (int px = 0; px < x.width; ++px) {
            if (op.mask.at(px, y) || !op.valid.at(px, y)) continue;
            float sx = px + op.warp.u_at(px, y);
            float sy = y + op.warp.v_at(px, y);
            int x0 = static_cast<int>(std::floor(sx));
            int y0 = static_cast<int>(std::floor(sy));
            int x1 = std::min(x0 + 1, x.width - 1);
            int y1 = std::min(y0 + 1, x.height - 1);
            float fx = sx - x0, fy = sy - y0;
            for (int c = 0; c < x.channels; ++c)
                out.at(px, y, c) = (1 - fx) * (1 - fy) * x.at(x0, y0, c) +
                                   fx * (1 - fy) * x.at(x1, y0, c) +
                                   (1 - fx) * fy * x.at(x0, y1, c) +
                                   fx * fy * x.at(x1, y1, c);
        }
    return out;
}

Image adjoint_degradation(const DegradationOperator& op, const Image& r) {
    if (r.width != op.warp.width || r.height != op.warp.height)
        throw std::invalid_argument("adjoint_degradation: dimension mismatch");
    Image out(r.width, r.height, r.channels);
    for (int y = 0; y < r.height; ++y)
        for (int px = 0; px < r.width; ++px) {
            if (op.mask.at(px, y) || !op.valid.at(px, y)) continue;
            float sx = px + op.warp.u_at(px, y);
            float sy = y + op.warp.v_at(px, y);
            int x0 = static_cast<int>(std::floor(sx));
            int y0 = static_cast<int>(std::floor(sy));
            int x1 = std::min(x0 + 1, r.width - 1);
            int y1 = std::min(y0 + 1, r.height - 1);
            float fx = sx - x0, fy = sy - y0;
            for (int c = 0; c < r.channels; ++c) {
                float v = r.at(px, y, c);
                out.at(x0, y0, c) += (1 - fx) * (1 - fy) * v;
                out.at(x1, y0, c) += fx * (1 - fy) * v;
                out.at(x0, y1, c) += (1 - fx) * fy * v;
                out.at(x1, y1, c) += fx * fy * v;
            }
        }
    return out;
}

Image data_gradient(const Image& z, const FistaProblem& prob) {
    Image grad(z.width, z.height, z.channels);
    for (size_t m = 0; m < prob.ops.size(); ++m) {
        Image r = apply_degradation(prob.ops[m], z);
        const Image& y = prob.observations[m];
        for (size_t i = 0; i < r.data.size(); ++i) r.data[i] -= y.data[i];
        // The observations are pre-masked (y = O y_raw), so the residual is
        // already zero outside the operator support.
        Image back = adjoint_degradation(prob.ops[m], r);
        for (size_t i = 0; i < grad.data.size(); ++i)
            grad.data[i] += 2.0f * back.data[i];
    }
    return grad;
}

double data_objective(const Image& z, const FistaProblem& prob) {
    double obj = 0.0;
    for (size_t m = 0; m < prob.ops.size(); ++m) {
        Image r = apply_degradation(prob.ops[m], z);
        const Image& y = prob.observations[m];
        for (size_t i = 0; i < r.data.size(); ++i) {
            double d = static_cast<double>(r.data[i]) - y.data[i];
            obj += d * d;
        }
    }
    return obj;
}

double fista_objective(const Image& z, const FistaProblem& prob) {
    double obj = data_objective(z, prob);
    for (float v : z.data) obj += prob.lambda * std::abs(v);
    return obj;
}

Image prox_l1(const Image& x, double threshold) {
    if (threshold < 0.0) throw std::invalid_argument("prox_l1: negative threshold");
    Image out(x.width, x.height, x.channels);
    for (size_t i = 0; i < x.data.size(); ++i) {
        float v = x.data[i];
        float mag = std::abs(v) - static_cast<float>(threshold);
        out.data[i] = mag > 0.0f ? std::copysign(mag, v) : 0.0f;
    }
    return out;
}

double estimate_step(const FistaProblem& prob, int iters) {
    if (iters < 5) throw std::invalid_argument("estimate_step: iters < 5");
    if (prob.ops.empty()) throw std::invalid_argument("estimate_step: no operators");
    const Image& y0 = prob.observations.front();
    Image v(y0.width, y0.height, y0.channels);
    std::mt19937 rng(12345);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    for (auto& e : v.data) e = dist(rng);

    double lam = 0.0;
    for (int it = 0; it < iters; ++it) {
        Image av(v.width, v.height, v.channels);
        for (const auto& op : prob.ops) {
            Image t = adjoint_degradation(op, apply_degradation(op, v));
            for (size_t i = 0; i < av.data.size(); ++i) av.data[i] += 2.0f * t.data[i];
        }
        double norm = 0.0;
        for (float e : av.data) norm += static_cast<double>(e) * e;
        norm = std::sqrt(norm);
        if (norm < 1e-30) throw std::runtime_error("estimate_step: problem has no data");
        lam = norm;
        for (size_t i = 0; i < v.data.size(); ++i)
            v.data[i] = static_cast<float>(av.data[i] / norm);
    }
    return 0.95 / lam;
}

FistaResult fista_defence(const FistaProblem& prob, const Image& x0) {
    double alpha = prob.alpha > 0.0 ? prob.alpha : estimate_step(prob, 20);
    double eps = prob.eps_stop > 0.0
                     ? prob.eps_stop
                     : 1e-4 * std::sqrt(static_cast<double>(x0.data.size()));

    Image x_prev = x0;
    Image z = x0;
    double t = 1.0;
    FistaResult res;
    for (int k = 1; k <= prob.max_iters; ++k) {
        Image grad = data_gradient(z, prob);
        Image step(z.width, z.height, z.channels);
        for (size_t i = 0; i < step.data.size(); ++i)
            step.data[i] = z.data[i] - static_cast<float>(alpha) * grad.data[i];
        Image x = prox_l1(step, prob.lambda * alpha);

        double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        double diff = 0.0;
        z = Image(x.width, x.height, x.channels);
        for (size_t i = 0; i < x.data.size(); ++i) {
            double d = static_cast<double>(x.data[i]) - x_prev.data[i];
            diff += d * d;
            z.data[i] = x.data[i] + static_cast<float>((t - 1.0) / t_next * d);
        }
        t = t_next;
        res.iterations = k;
        bool done = std::sqrt(diff) <= eps;
        x_prev = std::move(x);
        if (done) {
            res.x = std::move(x_prev);
            res.converged = true;
            return res;
        }
    }
    res.x = std::move(x_prev);
    res.converged = false;
    return res;
}

Image fill_nearest(const Image& img, const BinaryMask& mask) {
    Image out = img;
    if (mask.empty_mask()) return out;
    const int W = img.width, H = img.height;
    std::vector<int32_t> source(static_cast<size_t>(W) * H, -1);
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            if (!mask.at(x, y)) {
                source[static_cast<size_t>(y) * W + x] = y * W + x;
                queue.emplace_back(x, y);
            }
    if (queue.empty()) return out;  // fully masked: nothing to propagate from
    static const int nx4[] = {1, -1, 0, 0};
    static const int ny4[] = {0, 0, 1, -1};
    while (!queue.empty()) {
        auto [x, y] = queue.front();
        queue.pop_front();
        int src = source[static_cast<size_t>(y) * W + x];
        for (int k = 0; k < 4; ++k) {
            int nx = x + nx4[k], ny = y + ny4[k];
            if (nx < 0 || nx >= W || ny < 0 || ny >= H) continue;
            size_t idx = static_cast<size_t>(ny) * W + nx;
            if (source[idx] >= 0) continue;
            source[idx] = src;
            queue.emplace_back(nx, ny);
        }
    }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!mask.at(x, y)) continue;
            int src = source[static_cast<size_t>(y) * W + x];
            int sx = src % W, sy = src / W;
            for (int c = 0; c < img.channels; ++c)
                out.at(x, y, c) = img.at(sx, sy, c);
        }
    return out;
}

namespace {

Image extract_channel(const Image& img, int c) {
    Image out(img.width, img.height, 1);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) out.at(x, y) = img.at(x, y, c);
    return out;
}

}  // namespace

PipelineResult defence_pipeline(const std::vector<Image>& frames,
                                const std::vector<BinaryMask>& masks,
                                int ref_index, const PipelineParams& params,
                                const std::vector<FlowField>* flows) {
    if (frames.size() != 3 || masks.size() != 3)
        throw std::invalid_argument("defence_pipeline: expected 3 frames and 3 masks");
    if (ref_index < 0 || ref_index > 2)
        throw std::invalid_argument("defence_pipeline: ref_index out of range");

    const Image& ref = frames[ref_index];
    PipelineResult res;

    bool all_empty = true;
    for (const auto& m : masks)
        if (!m.empty_mask()) all_empty = false;
    if (all_empty) {
        res.image = ref;
        res.empty_masks = true;
        return res;
    }

    std::vector<DegradationOperator> ops(frames.size());
    for (size_t m = 0; m < frames.size(); ++m) {
        if (static_cast<int>(m) == ref_index) {
            ops[m] = DegradationOperator::identity(ref.width, ref.height);
            ops[m].mask = masks[m];
        } else if (flows) {
            ops[m] = DegradationOperator::from_flow((*flows)[m], masks[m]);
        } else {
            // Flow on the frame-m grid pointing into the reference, so the
            // warp maps the latent (reference-frame) image onto frame m.
            FlowResult fr = estimate_flow(frames[m], ref, masks[m],
                                          masks[ref_index], params.flow);
            ops[m] = DegradationOperator::from_flow(fr.flow, masks[m]);
        }
    }

    Image x0 = fill_nearest(ref, masks[ref_index]);

    Image out(ref.width, ref.height, ref.channels);
    bool converged = true;
    for (int c = 0; c < ref.channels; ++c) {
        FistaProblem prob;
        prob.lambda = params.lambda;
        prob.eps_stop = params.eps_stop;
        prob.max_iters = params.max_iters;
        prob.ops = ops;
        for (size_t m = 0; m < frames.size(); ++m) {
            Image obs = extract_channel(frames[m], c);
            for (int y = 0; y < obs.height; ++y)
                for (int px = 0; px < obs.width; ++px)
                    if (ops[m].mask.at(px, y) || !ops[m].valid.at(px, y))
                        obs.at(px, y) = 0.0f;
            prob.observations.push_back(std::move(obs));
        }
        FistaResult fr = fista_defence(prob, extract_channel(x0, c));
        converged = converged && fr.converged;
        for (int y = 0; y < ref.height; ++y)
            for (int px = 0; px < ref.width; ++px)
                out.at(px, y, c) = fr.x.at(px, y);
    }
    res.image = std::move(out);
    res.converged = converged;
    return res;
}

}  // namespace defence
