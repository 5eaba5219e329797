#include "defence/occflow.hpp"

#include "defence/imgops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace defence {

double phi_prime(double s, double eps) {
    return 0.5 / std::sqrt(s + eps * eps);
}

BinaryMask combined_mask(const BinaryMask& o_ref, const BinaryMask& o_t,
                         const FlowField& w, const BinaryMask& invalid) {
    // Nearest-neighbor backwarp of the target mask, then a 1 px dilation to
    // absorb interpolation bleed at fence borders.
    BinaryMask warped(o_t.width, o_t.height);
    for (int y = 0; y < o_t.height; ++y)
        for (int x = 0; x < o_t.width; ++x) {
            int sx = static_cast<int>(std::lround(x + w.u_at(x, y)));
            int sy = static_cast<int>(std::lround(y + w.v_at(x, y)));
            if (sx >= 0 && sx < o_t.width && sy >= 0 && sy < o_t.height)
                warped.set(x, y, o_t.at(sx, sy));
        }
    warped = dilate(warped, 1);
    BinaryMask out(o_ref.width, o_ref.height);
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = (o_ref.data[i] || warped.data[i] || invalid.data[i]) ? 1 : 0;
    return out;
}

namespace {

// Forward difference along x; last column zero.
Image diff_x(const Image& img) {
    Image out(img.width, img.height, 1);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x + 1 < img.width; ++x)
            out.at(x, y) = img.at(x + 1, y) - img.at(x, y);
    return out;
}

Image diff_y(const Image& img) {
    Image out(img.width, img.height, 1);
    for (int y = 0; y + 1 < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            out.at(x, y) = img.at(x, y + 1) - img.at(x, y);
    return out;
}

// L v = Dx^T Ws Dx v + Dy^T Ws Dy v with a per-pixel diagonal Ws.
Image apply_smoothness(const Image& v, const Image& ws) {
    Image tx = diff_x(v), ty = diff_y(v);
    for (size_t i = 0; i < tx.data.size(); ++i) {
        tx.data[i] *= ws.data[i];
        ty.data[i] *= ws.data[i];
    }
    Image out(v.width, v.height, 1);
    for (int y = 0; y < v.height; ++y)
        for (int x = 0; x < v.width; ++x) {
            float acc = 0.0f;
            if (x > 0) acc += tx.at(x - 1, y);
            if (x + 1 < v.width) acc -= tx.at(x, y);
            if (y > 0) acc += ty.at(x, y - 1);
            if (y + 1 < v.height) acc -= ty.at(x, y);
            out.at(x, y) = acc;
        }
    return out;
}

Image plane_from(const std::vector<float>& v, int w, int h) {
    Image img(w, h, 1);
    img.data = v;
    return img;
}

LinearizedSystem build_system_at(const Image& y_ref, const Image& y_t,
                                 const FlowField& w, const BinaryMask& occ,
                                 const FlowParams& params, const Image* du0,
                                 const Image* dv0) {
    if (y_ref.channels != 1 || y_t.channels != 1 || !y_ref.same_size(y_t))
        throw std::invalid_argument("build_system: grayscale images of equal size expected");
    const int W = y_ref.width, H = y_ref.height;
    const double eps = params.epsilon_phi;

    LinearizedSystem sys;
    sys.width = W;
    sys.height = H;
    sys.mu = params.mu;

    WarpResult warped = warp_image(y_t, w);
    auto [gx, gy] = image_gradients(warped.image);
    sys.yx = std::move(gx);
    sys.yy = std::move(gy);

    sys.sel = Image(W, H, 1);
    for (size_t i = 0; i < sys.sel.data.size(); ++i)
        sys.sel.data[i] = occ.data[i] ? 0.0f : 1.0f;

    // Selected data residual at the linearization point, shifted by the
    // current IRLS increment when one is given.
    Image r(W, H, 1);
    for (size_t i = 0; i < r.data.size(); ++i)
        r.data[i] = sys.sel.data[i] * (warped.image.data[i] - y_ref.data[i]);

    sys.wd = Image(W, H, 1);
    for (size_t i = 0; i < r.data.size(); ++i) {
        double ri = r.data[i];
        if (du0 && dv0)
            ri = sys.sel.data[i] *
                 (r.data[i] + sys.yx.data[i] * du0->data[i] + sys.yy.data[i] * dv0->data[i]);
        sys.wd.data[i] = static_cast<float>(phi_prime(ri * ri, eps));
    }

    Image u = plane_from(w.u, W, H);
    Image v = plane_from(w.v, W, H);
    Image ut = u, vt = v;
    if (du0 && dv0)
        for (size_t i = 0; i < ut.data.size(); ++i) {
            ut.data[i] += du0->data[i];
            vt.data[i] += dv0->data[i];
        }
    // Coupled reweighting shared by u and v.
    Image ux = diff_x(ut), uy = diff_y(ut), vx = diff_x(vt), vy = diff_y(vt);
    sys.ws = Image(W, H, 1);
    for (size_t i = 0; i < sys.ws.data.size(); ++i) {
        double g2 = static_cast<double>(ux.data[i]) * ux.data[i] +
                    static_cast<double>(uy.data[i]) * uy.data[i] +
                    static_cast<double>(vx.data[i]) * vx.data[i] +
                    static_cast<double>(vy.data[i]) * vy.data[i];
        sys.ws.data[i] = static_cast<float>(phi_prime(g2, eps));
    }

    Image lu = apply_smoothness(u, sys.ws);
    Image lv = apply_smoothness(v, sys.ws);
    sys.rhs_u = Image(W, H, 1);
    sys.rhs_v = Image(W, H, 1);
    for (size_t i = 0; i < r.data.size(); ++i) {
        float dataw = sys.wd.data[i] * sys.sel.data[i] * r.data[i];
        sys.rhs_u.data[i] = static_cast<float>(-params.mu * lu.data[i] - sys.yx.data[i] * dataw);
        sys.rhs_v.data[i] = static_cast<float>(-params.mu * lv.data[i] - sys.yy.data[i] * dataw);
    }
    return sys;
}

}  // namespace

namespace {

// Double-precision smoothness operator on a stacked plane.
void apply_smoothness_d(const double* v, const Image& ws, int W, int H, double* out) {
    std::vector<double> tx(static_cast<size_t>(W) * H, 0.0);
    std::vector<double> ty(static_cast<size_t>(W) * H, 0.0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            size_t i = static_cast<size_t>(y) * W + x;
            if (x + 1 < W) tx[i] = (v[i + 1] - v[i]) * ws.data[i];
            if (y + 1 < H) ty[i] = (v[i + W] - v[i]) * ws.data[i];
        }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            size_t i = static_cast<size_t>(y) * W + x;
            double acc = 0.0;
            if (x > 0) acc += tx[i - 1];
            if (x + 1 < W) acc -= tx[i];
            if (y > 0) acc += ty[i - W];
            if (y + 1 < H) acc -= ty[i];
            out[i] = acc;
        }
}

}  // namespace

void LinearizedSystem::apply(const std::vector<double>& duv,
                             std::vector<double>& out) const {
    const size_t n = static_cast<size_t>(width) * height;
    out.assign(2 * n, 0.0);
    std::vector<double> lu(n), lv(n);
    apply_smoothness_d(duv.data(), ws, width, height, lu.data());
    apply_smoothness_d(duv.data() + n, ws, width, height, lv.data());
    for (size_t i = 0; i < n; ++i) {
        double dw = static_cast<double>(wd.data[i]) * sel.data[i];
        double common = dw * (yx.data[i] * duv[i] + yy.data[i] * duv[n + i]);
        out[i] = yx.data[i] * common + mu * lu[i];
        out[n + i] = yy.data[i] * common + mu * lv[i];
    }
}

void LinearizedSystem::apply(const Image& du, const Image& dv, Image& out_u,
                             Image& out_v) const {
    const size_t n = static_cast<size_t>(width) * height;
    std::vector<double> x(2 * n), y;
    for (size_t i = 0; i < n; ++i) {
        x[i] = du.data[i];
        x[n + i] = dv.data[i];
    }
    apply(x, y);
    out_u = Image(width, height, 1);
    out_v = Image(width, height, 1);
    for (size_t i = 0; i < n; ++i) {
        out_u.data[i] = static_cast<float>(y[i]);
        out_v.data[i] = static_cast<float>(y[n + i]);
    }
}

LinearizedSystem build_system(const Image& y_ref, const Image& y_t,
                              const FlowField& w, const BinaryMask& occ,
                              const FlowParams& params) {
    return build_system_at(y_ref, y_t, w, occ, params, nullptr, nullptr);
}

IncrementResult solve_increment(const LinearizedSystem& sys, const FlowParams& params) {
    const size_t n = static_cast<size_t>(sys.width) * sys.height;
    IncrementResult res;
    res.du = Image(sys.width, sys.height, 1);
    res.dv = Image(sys.width, sys.height, 1);

    std::vector<double> x(2 * n, 0.0), r(2 * n), p, ap;
    for (size_t i = 0; i < n; ++i) {
        r[i] = sys.rhs_u.data[i];
        r[n + i] = sys.rhs_v.data[i];
    }
    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
        return s;
    };
    double b_norm2 = dot(r, r);
    if (b_norm2 == 0.0) return res;
    p = r;
    double rs_old = b_norm2;
    res.converged = false;
    for (int it = 0; it < params.cg_iters; ++it) {
        sys.apply(p, ap);
        double pap = dot(p, ap);
        if (pap <= 0.0) break;
        double alpha = rs_old / pap;
        for (size_t i = 0; i < 2 * n; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        double rs_new = dot(r, r);
        res.iterations = it + 1;
        if (std::sqrt(rs_new / b_norm2) < params.cg_tol) {
            res.converged = true;
            break;
        }
        double beta = rs_new / rs_old;
        for (size_t i = 0; i < 2 * n; ++i) p[i] = r[i] + beta * p[i];
        rs_old = rs_new;
    }
    for (size_t i = 0; i < n; ++i) {
        res.du.data[i] = static_cast<float>(x[i]);
        res.dv.data[i] = static_cast<float>(x[n + i]);
    }
    return res;
}

IncrementResult irls_solve(const Image& y_ref, const Image& y_t, const FlowField& w,
                           const BinaryMask& occ, const FlowParams& params,
                           std::vector<double>* energy_trace) {
    IncrementResult res;
    res.du = Image(y_ref.width, y_ref.height, 1);
    res.dv = Image(y_ref.width, y_ref.height, 1);
    if (energy_trace)
        energy_trace->push_back(
            incremental_energy(y_ref, y_t, w, res.du, res.dv, occ, params));
    for (int irls = 0; irls < params.outer_iters; ++irls) {
        LinearizedSystem sys =
            irls == 0 ? build_system(y_ref, y_t, w, occ, params)
                      : build_system_at(y_ref, y_t, w, occ, params, &res.du, &res.dv);
        IncrementResult inc = solve_increment(sys, params);
        res.du = std::move(inc.du);
        res.dv = std::move(inc.dv);
        res.converged = inc.converged;
        res.iterations += inc.iterations;
        if (energy_trace)
            energy_trace->push_back(
                incremental_energy(y_ref, y_t, w, res.du, res.dv, occ, params));
    }
    return res;
}

double incremental_energy(const Image& y_ref, const Image& y_t, const FlowField& w,
                          const Image& du, const Image& dv, const BinaryMask& occ,
                          const FlowParams& params) {
    const int W = y_ref.width, H = y_ref.height;
    const double eps2 = params.epsilon_phi * params.epsilon_phi;
    WarpResult warped = warp_image(y_t, w);
    auto [yx, yy] = image_gradients(warped.image);
    double e = 0.0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (occ.at(x, y)) continue;
            double r = warped.image.at(x, y) - y_ref.at(x, y) +
                       yx.at(x, y) * du.at(x, y) + yy.at(x, y) * dv.at(x, y);
            e += std::sqrt(r * r + eps2);
        }
    Image ut = plane_from(w.u, W, H), vt = plane_from(w.v, W, H);
    for (size_t i = 0; i < ut.data.size(); ++i) {
        ut.data[i] += du.data[i];
        vt.data[i] += dv.data[i];
    }
    Image ux = diff_x(ut), uy = diff_y(ut), vx = diff_x(vt), vy = diff_y(vt);
    for (size_t i = 0; i < ux.data.size(); ++i) {
        double g2 = static_cast<double>(ux.data[i]) * ux.data[i] +
                    static_cast<double>(uy.data[i]) * uy.data[i] +
                    static_cast<double>(vx.data[i]) * vx.data[i] +
                    static_cast<double>(vy.data[i]) * vy.data[i];
        e += params.mu * std::sqrt(g2 + eps2);
    }
    return e;
}

namespace {

// Any-true downsample of a mask to the target dimensions.
BinaryMask downsample_mask(const BinaryMask& mask, int nw, int nh) {
    BinaryMask out(nw, nh);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            int cx = std::min(nw - 1, static_cast<int>((x + 0.5) * nw / mask.width));
            int cy = std::min(nh - 1, static_cast<int>((y + 0.5) * nh / mask.height));
            out.set(cx, cy, true);
        }
    return out;
}

FlowField upscale_flow(const FlowField& w, int nw, int nh) {
    Image u = plane_from(w.u, w.width, w.height);
    Image v = plane_from(w.v, w.width, w.height);
    Image un = resample(u, nw, nh);
    Image vn = resample(v, nw, nh);
    float sx = static_cast<float>(nw) / w.width;
    float sy = static_cast<float>(nh) / w.height;
    FlowField out(nw, nh);
    for (size_t i = 0; i < out.u.size(); ++i) {
        out.u[i] = un.data[i] * sx;
        out.v[i] = vn.data[i] * sy;
    }
    return out;
}

double stddev(const Image& img) {
    double mean = 0.0;
    for (float v : img.data) mean += v;
    mean /= static_cast<double>(img.data.size());
    double var = 0.0;
    for (float v : img.data) var += (v - mean) * (v - mean);
    return std::sqrt(var / static_cast<double>(img.data.size()));
}

}  // namespace

FlowResult estimate_flow(const Image& y_ref_in, const Image& y_t_in,
                         const BinaryMask& o_ref, const BinaryMask& o_t,
                         const FlowParams& params) {
    Image y_ref = to_grayscale(y_ref_in);
    Image y_t = to_grayscale(y_t_in);
    if (!y_ref.same_size(y_t) || o_ref.width != y_ref.width ||
        o_ref.height != y_ref.height || o_t.width != y_t.width ||
        o_t.height != y_t.height)
        throw std::invalid_argument("estimate_flow: dimension mismatch");

    FlowResult res;
    if (stddev(y_ref) < 1e-6 || stddev(y_t) < 1e-6) {
        res.flow = FlowField(y_ref.width, y_ref.height);
        res.low_confidence = true;
        return res;
    }

    Pyramid pr = gaussian_pyramid(y_ref, params.pyramid_ratio, params.min_dim);
    Pyramid pt = gaussian_pyramid(y_t, params.pyramid_ratio, params.min_dim);
    int n_levels = static_cast<int>(std::min(pr.levels.size(), pt.levels.size()));

    FlowField w;
    for (int level = n_levels - 1; level >= 0; --level) {
        const Image& ref_l = pr.levels[level];
        const Image& tgt_l = pt.levels[level];
        BinaryMask oref_l = downsample_mask(o_ref, ref_l.width, ref_l.height);
        BinaryMask ot_l = downsample_mask(o_t, tgt_l.width, tgt_l.height);

        if (level == n_levels - 1)
            w = FlowField(ref_l.width, ref_l.height);
        else
            w = upscale_flow(w, ref_l.width, ref_l.height);

        for (int round = 0; round < params.warp_updates; ++round) {
            WarpResult warped = warp_image(tgt_l, w);
            BinaryMask occ = combined_mask(oref_l, ot_l, w, warped.invalid);

            IncrementResult inc = irls_solve(ref_l, tgt_l, w, occ, params);
            for (size_t i = 0; i < w.u.size(); ++i) {
                w.u[i] += inc.du.data[i];
                w.v[i] += inc.dv.data[i];
            }
        }
    }
    res.flow = std::move(w);
    return res;
}

static constexpr float kFloMagic = 202021.25f;

FlowField read_flo(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_flo: cannot open " + path);
    float magic = 0.0f;
    int32_t w = 0, h = 0;
    in.read(reinterpret_cast<char*>(&magic), 4);
    in.read(reinterpret_cast<char*>(&w), 4);
    in.read(reinterpret_cast<char*>(&h), 4);
    if (!in || magic != kFloMagic || w <= 0 || h <= 0)
        throw std::runtime_error("read_flo: bad header in " + path);
    FlowField flow(w, h);
    std::vector<float> buf(static_cast<size_t>(w) * h * 2);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (!in) throw std::runtime_error("read_flo: truncated file " + path);
    for (size_t i = 0; i < flow.u.size(); ++i) {
        flow.u[i] = buf[2 * i];
        flow.v[i] = buf[2 * i + 1];
    }
    return flow;
}

void write_flo(const std::string& path, const FlowField& flow) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_flo: cannot open " + path);
    float magic = kFloMagic;
    int32_t w = flow.width, h = flow.height;
    out.write(reinterpret_cast<const char*>(&magic), 4);
    out.write(reinterpret_cast<const char*>(&w), 4);
    out.write(reinterpret_cast<const char*>(&h), 4);
    std::vector<float> buf(static_cast<size_t>(w) * h * 2);
    for (size_t i = 0; i < flow.u.size(); ++i) {
        buf[2 * i] = flow.u[i];
        buf[2 * i + 1] = flow.v[i];
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (!out) throw std::runtime_error("write_flo: write failed for " + path);
}

}  // namespace defence
