#include "defence/fenceseg.hpp"

#include "defence/imgops.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

namespace defence {

namespace {

constexpr double kPi = 3.14159265358979323846;

float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

int clampi(int v, int lo, int hi) { return std::max(lo, std::min(hi, v)); }

void l2_normalize(float* begin, float* end) {
    double norm = 0.0;
    for (float* p = begin; p != end; ++p) norm += static_cast<double>(*p) * *p;
    norm = std::sqrt(norm);
    if (norm < 1e-12) return;  // zero block stays zero
    for (float* p = begin; p != end; ++p)
        *p = static_cast<float>(*p / norm);
}

}  // namespace

FeatureVector DescriptorBackend::extract(const Image& img, int cx, int cy,
                                         int window) const {
    const int half = window / 2;
    const int x0 = cx - half, y0 = cy - half;

    // Replicate-padded patch, grayscale plus per-channel color.
    std::vector<float> gray(static_cast<size_t>(window) * window);
    std::vector<float> color(static_cast<size_t>(window) * window * 3);
    for (int py = 0; py < window; ++py)
        for (int px = 0; px < window; ++px) {
            int sx = clampi(x0 + px, 0, img.width - 1);
            int sy = clampi(y0 + py, 0, img.height - 1);
            float r, g, b;
            if (img.channels == 3) {
                r = img.at(sx, sy, 0);
                g = img.at(sx, sy, 1);
                b = img.at(sx, sy, 2);
            } else {
                r = g = b = img.at(sx, sy);
            }
            size_t i = static_cast<size_t>(py) * window + px;
            gray[i] = 0.299f * r + 0.587f * g + 0.114f * b;
            color[3 * i + 0] = r;
            color[3 * i + 1] = g;
            color[3 * i + 2] = b;
        }

    FeatureVector feat(152, 0.0f);
    // 8-bin orientation histograms on a 4x4 spatial grid, magnitude weighted.
    for (int py = 0; py < window; ++py)
        for (int px = 0; px < window; ++px) {
            float gx = 0.5f * (gray[static_cast<size_t>(py) * window + clampi(px + 1, 0, window - 1)] -
                               gray[static_cast<size_t>(py) * window + clampi(px - 1, 0, window - 1)]);
            float gy = 0.5f * (gray[static_cast<size_t>(clampi(py + 1, 0, window - 1)) * window + px] -
                               gray[static_cast<size_t>(clampi(py - 1, 0, window - 1)) * window + px]);
            float mag = std::sqrt(gx * gx + gy * gy);
            if (mag <= 0.0f) continue;
            double angle = std::atan2(gy, gx);
            if (angle < 0.0) angle += 2.0 * kPi;
            int bin = std::min(7, static_cast<int>(angle / (2.0 * kPi / 8.0)));
            int cell_x = std::min(3, px * 4 / window);
            int cell_y = std::min(3, py * 4 / window);
            feat[(static_cast<size_t>(cell_y) * 4 + cell_x) * 8 + bin] += mag;
        }
    l2_normalize(feat.data(), feat.data() + 128);

    // 8-bin per-channel color histograms.
    for (size_t i = 0; i < gray.size(); ++i)
        for (int c = 0; c < 3; ++c) {
            int bin = std::min(7, static_cast<int>(clamp01(color[3 * i + c]) * 8.0f));
            feat[128 + c * 8 + bin] += 1.0f;
        }
    l2_normalize(feat.data() + 128, feat.data() + 152);
    return feat;
}

static constexpr char kFvecMagic[4] = {'F', 'V', 'E', 'C'};

FeatureFileBackend::FeatureFileBackend(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("FeatureFileBackend: cannot open " + path);
    char magic[4];
    uint32_t dim = 0, count = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&dim), 4);
    in.read(reinterpret_cast<char*>(&count), 4);
    if (!in || std::memcmp(magic, kFvecMagic, 4) != 0)
        throw std::runtime_error("FeatureFileBackend: bad magic in " + path);
    dim_ = static_cast<int>(dim);
    for (uint32_t i = 0; i < count; ++i) {
        int32_t cx = 0, cy = 0;
        in.read(reinterpret_cast<char*>(&cx), 4);
        in.read(reinterpret_cast<char*>(&cy), 4);
        FeatureVector v(dim);
        in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(dim) * 4);
        if (!in) throw std::runtime_error("FeatureFileBackend: truncated " + path);
        table_[{cx, cy}] = std::move(v);
    }
}

FeatureVector FeatureFileBackend::extract(const Image&, int cx, int cy, int) const {
    auto it = table_.find({cx, cy});
    if (it == table_.end())
        throw std::runtime_error("FeatureFileBackend: no feature for (" +
                                 std::to_string(cx) + ", " + std::to_string(cy) + ")");
    return it->second;
}

void write_feature_file(const std::string& path,
                        const std::map<std::pair<int, int>, FeatureVector>& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_feature_file: cannot open " + path);
    uint32_t dim = table.empty() ? 0 : static_cast<uint32_t>(table.begin()->second.size());
    uint32_t count = static_cast<uint32_t>(table.size());
    out.write(kFvecMagic, 4);
    out.write(reinterpret_cast<const char*>(&dim), 4);
    out.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& [key, v] : table) {
        int32_t cx = key.first, cy = key.second;
        out.write(reinterpret_cast<const char*>(&cx), 4);
        out.write(reinterpret_cast<const char*>(&cy), 4);
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size()) * 4);
    }
}

float LinearClassifier::score(const FeatureVector& f) const {
    double s = bias;
    for (size_t i = 0; i < weights.size(); ++i) s += static_cast<double>(weights[i]) * f[i];
    return static_cast<float>(s);
}

LinearClassifier train_classifier(const std::vector<FeatureVector>& positives,
                                  const std::vector<FeatureVector>& negatives,
                                  double c, int epochs, unsigned seed) {
    if (positives.empty() || negatives.empty())
        throw std::invalid_argument("train_classifier: need >=1 positive and negative");
    const size_t dim = positives.front().size();
    for (const auto& v : positives)
        if (v.size() != dim) throw std::invalid_argument("train_classifier: inconsistent dims");
    for (const auto& v : negatives)
        if (v.size() != dim) throw std::invalid_argument("train_classifier: inconsistent dims");

    struct Sample {
        const FeatureVector* f;
        float y;
    };
    std::vector<Sample> samples;
    samples.reserve(positives.size() + negatives.size());
    for (const auto& v : positives) samples.push_back({&v, 1.0f});
    for (const auto& v : negatives) samples.push_back({&v, -1.0f});
    const double n = static_cast<double>(samples.size());

    LinearClassifier clf;
    clf.weights.assign(dim, 0.0f);
    std::vector<double> w(dim, 0.0);
    double b = 0.0;
    std::mt19937 rng(seed);
    std::vector<size_t> order(samples.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 1; epoch <= epochs; ++epoch) {
        double lr = 0.01 / std::sqrt(static_cast<double>(epoch));
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t idx : order) {
            const Sample& s = samples[idx];
            double margin = b;
            for (size_t i = 0; i < dim; ++i) margin += w[i] * (*s.f)[i];
            margin *= s.y;
            double reg = 1.0 / (c * n);
            for (size_t i = 0; i < dim; ++i) w[i] -= lr * reg * w[i];
            if (margin < 1.0) {
                for (size_t i = 0; i < dim; ++i) w[i] += lr * s.y * (*s.f)[i];
                b += lr * s.y;
            }
        }
    }
    for (size_t i = 0; i < dim; ++i) clf.weights[i] = static_cast<float>(w[i]);
    clf.bias = static_cast<float>(b);
    return clf;
}

void save_classifier(const std::string& path, const LinearClassifier& clf) {
    nlohmann::json j;
    j["format"] = "defence-classifier";
    j["version"] = 1;
    j["dim"] = clf.weights.size();
    j["weights"] = clf.weights;
    j["bias"] = clf.bias;
    j["threshold"] = clf.threshold;
    j["backend"] = clf.backend;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_classifier: cannot open " + path);
    out << j.dump(2) << "\n";
}

LinearClassifier load_classifier(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_classifier: cannot open " + path);
    nlohmann::json j;
    in >> j;
    if (j.value("format", "") != "defence-classifier")
        throw std::runtime_error("load_classifier: not a classifier file: " + path);
    LinearClassifier clf;
    clf.weights = j.at("weights").get<FeatureVector>();
    clf.bias = j.at("bias").get<float>();
    clf.threshold = j.at("threshold").get<float>();
    clf.backend = j.value("backend", "descriptor-v1");
    if (clf.weights.size() != j.at("dim").get<size_t>())
        throw std::runtime_error("load_classifier: dim mismatch in " + path);
    return clf;
}

std::vector<TexelDetection> detect_texels(const Image& img,
                                          const LinearClassifier& clf,
                                          const FeatureBackend& backend,
                                          int stride, int window,
                                          double nms_radius) {
    if (stride < 1) throw std::invalid_argument("detect_texels: stride < 1");
    if (window > std::min(img.width, img.height))
        throw std::invalid_argument("detect_texels: window larger than image");
    if (nms_radius < 0.0) nms_radius = window / 2.0;

    const int half = window / 2;
    std::vector<TexelDetection> raw;
    for (int cy = half; cy + half <= img.height; cy += stride)
        for (int cx = half; cx + half <= img.width; cx += stride) {
            FeatureVector f = backend.extract(img, cx, cy, window);
            float s = clf.score(f);
            if (s > clf.threshold) raw.push_back({cx, cy, s});
        }

    // Greedy NMS, descending score; ties broken by scan order.
    std::vector<size_t> order(raw.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return raw[a].score > raw[b].score; });
    std::vector<TexelDetection> kept;
    for (size_t idx : order) {
        bool suppressed = false;
        for (const auto& k : kept) {
            double dx = raw[idx].x - k.x, dy = raw[idx].y - k.y;
            if (dx * dx + dy * dy <= nms_radius * nms_radius) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(raw[idx]);
    }
    return kept;
}

Lattice link_texels(const std::vector<TexelDetection>& dets, double max_link) {
    Lattice lat;
    lat.nodes = dets;
    if (dets.size() < 2) return lat;

    if (max_link <= 0.0) {
        std::vector<double> nn(dets.size(), std::numeric_limits<double>::max());
        for (size_t i = 0; i < dets.size(); ++i)
            for (size_t j = 0; j < dets.size(); ++j) {
                if (i == j) continue;
                double dx = dets[i].x - dets[j].x, dy = dets[i].y - dets[j].y;
                nn[i] = std::min(nn[i], std::sqrt(dx * dx + dy * dy));
            }
        std::sort(nn.begin(), nn.end());
        max_link = 1.8 * nn[nn.size() / 2];
    }

    std::set<std::pair<int, int>> edges;
    for (size_t i = 0; i < dets.size(); ++i) {
        int best[4] = {-1, -1, -1, -1};
        double best_d[4];
        std::fill(best_d, best_d + 4, max_link);
        for (size_t j = 0; j < dets.size(); ++j) {
            if (i == j) continue;
            double dx = dets[j].x - dets[i].x, dy = dets[j].y - dets[i].y;
            double d = std::sqrt(dx * dx + dy * dy);
            if (d > max_link || d == 0.0) continue;
            double angle = std::atan2(dy, dx);
            if (angle < 0.0) angle += 2.0 * kPi;
            int q = std::min(3, static_cast<int>(angle / (kPi / 2.0)));
            if (d < best_d[q] || best[q] < 0) {
                if (best[q] < 0 || d < best_d[q]) {
                    best[q] = static_cast<int>(j);
                    best_d[q] = d;
                }
            }
        }
        for (int q = 0; q < 4; ++q)
            if (best[q] >= 0)
                edges.insert({std::min<int>(i, best[q]), std::max<int>(i, best[q])});
    }
    lat.edges.assign(edges.begin(), edges.end());
    return lat;
}

BinaryMask rasterize_lattice(const Lattice& lat, int thickness, int w, int h) {
    if (thickness < 1) throw std::invalid_argument("rasterize_lattice: thickness < 1");
    BinaryMask mask(w, h);
    auto draw_disk = [&](int cx, int cy, int r) {
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx)
                if (dx * dx + dy * dy <= r * r) {
                    int x = cx + dx, y = cy + dy;
                    if (x >= 0 && x < w && y >= 0 && y < h) mask.set(x, y, true);
                }
    };
    for (const auto& n : lat.nodes) draw_disk(n.x, n.y, thickness);
    const double half = thickness / 2.0;
    for (auto [a, b] : lat.edges) {
        double ax = lat.nodes[a].x, ay = lat.nodes[a].y;
        double bx = lat.nodes[b].x, by = lat.nodes[b].y;
        int x_lo = clampi(static_cast<int>(std::floor(std::min(ax, bx) - half)) - 1, 0, w - 1);
        int x_hi = clampi(static_cast<int>(std::ceil(std::max(ax, bx) + half)) + 1, 0, w - 1);
        int y_lo = clampi(static_cast<int>(std::floor(std::min(ay, by) - half)) - 1, 0, h - 1);
        int y_hi = clampi(static_cast<int>(std::ceil(std::max(ay, by) + half)) + 1, 0, h - 1);
        double vx = bx - ax, vy = by - ay;
        double len2 = vx * vx + vy * vy;
        for (int y = y_lo; y <= y_hi; ++y)
            for (int x = x_lo; x <= x_hi; ++x) {
                double t = len2 > 0.0 ? ((x - ax) * vx + (y - ay) * vy) / len2 : 0.0;
                t = std::clamp(t, 0.0, 1.0);
                double px = ax + t * vx - x, py = ay + t * vy - y;
                if (px * px + py * py <= half * half) mask.set(x, y, true);
            }
    }
    return mask;
}

ScribbleResult generate_scribbles(const BinaryMask& prelim, int erode_r, int dilate_r) {
    if (erode_r < 1 || dilate_r < 1)
        throw std::invalid_argument("generate_scribbles: radii must be >= 1");
    int r = erode_r;
    BinaryMask fg = erode(prelim, r);
    while (fg.empty_mask() && r > 0) {
        --r;
        fg = erode(prelim, r);
    }
    BinaryMask bg = boundary_edges(dilate(prelim, dilate_r));

    ScribbleResult res;
    res.used_erode_radius = r;
    res.trimap = Trimap(prelim.width, prelim.height);
    for (int y = 0; y < prelim.height; ++y)
        for (int x = 0; x < prelim.width; ++x) {
            bool f = fg.at(x, y), b = bg.at(x, y);
            if (f && b)
                res.trimap.at(x, y) = TrimapLabel::Unknown;
            else if (f)
                res.trimap.at(x, y) = TrimapLabel::Foreground;
            else if (b)
                res.trimap.at(x, y) = TrimapLabel::Background;
        }
    return res;
}

namespace {

double color_dist2(const Image& img, int x0, int y0, int x1, int y1) {
    double d2 = 0.0;
    for (int c = 0; c < img.channels; ++c) {
        double d = static_cast<double>(img.at(x0, y0, c)) - img.at(x1, y1, c);
        d2 += d * d;
    }
    return d2;
}

}  // namespace

Image solve_alpha(const Image& img, const Trimap& trimap, double lambda_s,
                  double sigma_c, double cg_tol, int cg_iters) {
    const int W = img.width, H = img.height;
    if (trimap.width != W || trimap.height != H)
        throw std::invalid_argument("solve_alpha: dimension mismatch");
    bool has_fg = false, has_bg = false;
    for (auto l : trimap.labels) {
        has_fg = has_fg || l == TrimapLabel::Foreground;
        has_bg = has_bg || l == TrimapLabel::Background;
    }
    if (!has_fg || !has_bg)
        throw std::invalid_argument("solve_alpha: need foreground and background scribbles");

    const size_t n = static_cast<size_t>(W) * H;
    // Right/down edge affinities.
    std::vector<float> a_right(n, 0.0f), a_down(n, 0.0f);
    const double inv = 1.0 / (2.0 * sigma_c * sigma_c);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            size_t i = static_cast<size_t>(y) * W + x;
            if (x + 1 < W)
                a_right[i] = static_cast<float>(std::exp(-color_dist2(img, x, y, x + 1, y) * inv));
            if (y + 1 < H)
                a_down[i] = static_cast<float>(std::exp(-color_dist2(img, x, y, x, y + 1) * inv));
        }

    std::vector<float> s(n, 0.0f), scrib(n, 0.0f);
    for (size_t i = 0; i < n; ++i) {
        if (trimap.labels[i] == TrimapLabel::Foreground) {
            s[i] = 1.0f;
            scrib[i] = 1.0f;
        } else if (trimap.labels[i] == TrimapLabel::Background) {
            scrib[i] = 1.0f;
        }
    }

    // (L + lambda_s S) alpha = lambda_s s, L from edge affinities.
    auto apply_A = [&](const std::vector<double>& v, std::vector<double>& out) {
        std::fill(out.begin(), out.end(), 0.0);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                size_t i = static_cast<size_t>(y) * W + x;
                double acc = lambda_s * scrib[i] * v[i];
                if (x + 1 < W) {
                    double d = a_right[i] * (v[i] - v[i + 1]);
                    acc += d;
                    out[i + 1] -= d;
                }
                if (y + 1 < H) {
                    double d = a_down[i] * (v[i] - v[i + W]);
                    acc += d;
                    out[i + W] -= d;
                }
                out[i] += acc;
            }
    };

    std::vector<double> alpha(n);
    for (size_t i = 0; i < n; ++i) {
        if (trimap.labels[i] == TrimapLabel::Foreground)
            alpha[i] = 1.0;
        else if (trimap.labels[i] == TrimapLabel::Background)
            alpha[i] = 0.0;
        else
            alpha[i] = 0.5;
    }

    std::vector<double> b(n), r(n), p(n), ap(n);
    for (size_t i = 0; i < n; ++i) b[i] = lambda_s * scrib[i] * s[i];
    apply_A(alpha, ap);
    double b_norm = 0.0, rs = 0.0;
    for (size_t i = 0; i < n; ++i) {
        r[i] = b[i] - ap[i];
        rs += r[i] * r[i];
        b_norm += b[i] * b[i];
    }
    b_norm = std::sqrt(std::max(b_norm, 1e-300));
    p = r;
    for (int it = 0; it < cg_iters && std::sqrt(rs) / b_norm > cg_tol; ++it) {
        apply_A(p, ap);
        double pap = 0.0;
        for (size_t i = 0; i < n; ++i) pap += p[i] * ap[i];
        if (pap <= 0.0) break;
        double step = rs / pap;
        double rs_new = 0.0;
        for (size_t i = 0; i < n; ++i) {
            alpha[i] += step * p[i];
            r[i] -= step * ap[i];
            rs_new += r[i] * r[i];
        }
        double beta = rs_new / rs;
        for (size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
        rs = rs_new;
    }

    Image out(W, H, 1);
    for (size_t i = 0; i < n; ++i)
        out.data[i] = static_cast<float>(std::clamp(alpha[i], 0.0, 1.0));
    return out;
}

double alpha_energy(const Image& img, const Trimap& trimap, const Image& alpha,
                    double lambda_s, double sigma_c) {
    const int W = img.width, H = img.height;
    const double inv = 1.0 / (2.0 * sigma_c * sigma_c);
    double e = 0.0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double a = alpha.at(x, y);
            if (x + 1 < W) {
                double d = a - alpha.at(x + 1, y);
                e += std::exp(-color_dist2(img, x, y, x + 1, y) * inv) * d * d;
            }
            if (y + 1 < H) {
                double d = a - alpha.at(x, y + 1);
                e += std::exp(-color_dist2(img, x, y, x, y + 1) * inv) * d * d;
            }
            if (trimap.at(x, y) == TrimapLabel::Foreground)
                e += lambda_s * (a - 1.0) * (a - 1.0);
            else if (trimap.at(x, y) == TrimapLabel::Background)
                e += lambda_s * a * a;
        }
    return e;
}

BinaryMask threshold_alpha(const Image& alpha, double tau) {
    if (tau <= 0.0 || tau >= 1.0)
        throw std::invalid_argument("threshold_alpha: tau out of (0, 1)");
    BinaryMask mask(alpha.width, alpha.height);
    for (size_t i = 0; i < alpha.data.size(); ++i)
        mask.data[i] = alpha.data[i] >= tau ? 1 : 0;
    return mask;
}

namespace {

// Wires continue past the outermost joints, but no texel fires there. For
// every linked direction with no partner on the opposite side, append a
// synthetic node where the extended wire meets the image border.
void extend_lattice_to_borders(Lattice& lat, int w, int h) {
    const size_t n_orig = lat.nodes.size();
    std::vector<std::vector<size_t>> nbrs(n_orig);
    for (auto [a, b] : lat.edges) {
        nbrs[a].push_back(b);
        nbrs[b].push_back(a);
    }
    const double cos_tol = std::cos(30.0 * kPi / 180.0);
    for (size_t i = 0; i < n_orig; ++i)
        for (size_t j : nbrs[i]) {
            double dx = lat.nodes[i].x - lat.nodes[j].x;
            double dy = lat.nodes[i].y - lat.nodes[j].y;
            double len = std::sqrt(dx * dx + dy * dy);
            if (len <= 0.0) continue;
            dx /= len;
            dy /= len;
            bool covered = false;
            for (size_t k : nbrs[i]) {
                if (k == j) continue;
                double ex = lat.nodes[k].x - lat.nodes[i].x;
                double ey = lat.nodes[k].y - lat.nodes[i].y;
                double el = std::sqrt(ex * ex + ey * ey);
                if (el > 0.0 && (ex * dx + ey * dy) / el >= cos_tol) {
                    covered = true;
                    break;
                }
            }
            if (covered) continue;
            // Step to the first border crossing along (dx, dy).
            double t_exit = std::numeric_limits<double>::max();
            if (dx > 1e-12) t_exit = std::min(t_exit, (w - 1 - lat.nodes[i].x) / dx);
            if (dx < -1e-12) t_exit = std::min(t_exit, (0 - lat.nodes[i].x) / dx);
            if (dy > 1e-12) t_exit = std::min(t_exit, (h - 1 - lat.nodes[i].y) / dy);
            if (dy < -1e-12) t_exit = std::min(t_exit, (0 - lat.nodes[i].y) / dy);
            if (t_exit <= 1.0 || t_exit == std::numeric_limits<double>::max()) continue;
            TexelDetection border;
            border.x = static_cast<int>(std::lround(lat.nodes[i].x + t_exit * dx));
            border.y = static_cast<int>(std::lround(lat.nodes[i].y + t_exit * dy));
            border.score = 0.0f;
            lat.nodes.push_back(border);
            lat.edges.push_back({static_cast<int>(i), static_cast<int>(lat.nodes.size() - 1)});
        }
}

// Detected joints of a regular lattice satisfy p = o + i*u + j*v. Fitting
// (o, u, v) and regenerating the full grid recovers wires whose joints fall
// outside the scannable band and drops spurious links. Returns false when
// the detections do not support a stable fit.
bool fit_lattice_model(const std::vector<TexelDetection>& dets,
                       const std::vector<std::pair<int, int>>& edges,
                       int w, int h, Lattice& out) {
    if (dets.size() < 4 || edges.size() < 4) return false;

    // Two dominant edge directions, axes identified modulo 180 degrees.
    struct Vec {
        double x, y;
    };
    std::vector<Vec> evs;
    for (auto [a, b] : edges) {
        double dx = dets[b].x - dets[a].x, dy = dets[b].y - dets[a].y;
        if (dy < 0 || (dy == 0 && dx < 0)) {
            dx = -dx;
            dy = -dy;
        }
        evs.push_back({dx, dy});
    }
    auto angle_of = [](const Vec& v) { return std::atan2(v.y, v.x); };  // [0, pi)
    // Anchor on the first direction; split the rest by 45 degree proximity.
    std::vector<Vec> c1, c2;
    double a0 = angle_of(evs[0]);
    for (const auto& v : evs) {
        double da = std::fabs(angle_of(v) - a0);
        da = std::min(da, kPi - da);
        (da < kPi / 4.0 ? c1 : c2).push_back(v);
    }
    if (c1.size() < 2 || c2.size() < 2) return false;
    auto median_vec = [](std::vector<Vec>& c) {
        auto mid = [&](auto get) {
            std::vector<double> vals;
            for (const auto& v : c) vals.push_back(get(v));
            std::nth_element(vals.begin(), vals.begin() + vals.size() / 2, vals.end());
            return vals[vals.size() / 2];
        };
        return Vec{mid([](const Vec& v) { return v.x; }),
                   mid([](const Vec& v) { return v.y; })};
    };
    Vec u = median_vec(c1), v = median_vec(c2);
    double det = u.x * v.y - u.y * v.x;
    double ulen = std::hypot(u.x, u.y), vlen = std::hypot(v.x, v.y);
    if (ulen < 4.0 || vlen < 4.0 || std::fabs(det) < 0.5 * ulen * vlen) return false;

    // Anchor at the detection closest to the centroid, then refine (o, u, v)
    // by alternating integer-coordinate assignment and least squares.
    double mx = 0.0, my = 0.0;
    for (const auto& d : dets) {
        mx += d.x;
        my += d.y;
    }
    mx /= static_cast<double>(dets.size());
    my /= static_cast<double>(dets.size());
    size_t anchor = 0;
    double best = std::numeric_limits<double>::max();
    for (size_t k = 0; k < dets.size(); ++k) {
        double d2 = (dets[k].x - mx) * (dets[k].x - mx) + (dets[k].y - my) * (dets[k].y - my);
        if (d2 < best) {
            best = d2;
            anchor = k;
        }
    }
    double ox = dets[anchor].x, oy = dets[anchor].y;

    std::vector<std::pair<int, int>> ij(dets.size());
    for (int round = 0; round < 3; ++round) {
        det = u.x * v.y - u.y * v.x;
        if (std::fabs(det) < 1e-9) return false;
        size_t inliers = 0;
        for (size_t k = 0; k < dets.size(); ++k) {
            double px = dets[k].x - ox, py = dets[k].y - oy;
            double fi = (px * v.y - py * v.x) / det;
            double fj = (py * u.x - px * u.y) / det;
            ij[k] = {static_cast<int>(std::lround(fi)), static_cast<int>(std::lround(fj))};
            double rx = ox + ij[k].first * u.x + ij[k].second * v.x - dets[k].x;
            double ry = oy + ij[k].first * u.y + ij[k].second * v.y - dets[k].y;
            if (std::hypot(rx, ry) <= 0.25 * std::min(ulen, vlen)) ++inliers;
        }
        if (inliers < (dets.size() * 3) / 4) return false;
        // Least squares for (ox, oy, u, v); x and y decouple.
        double s1 = static_cast<double>(dets.size());
        double si = 0, sj = 0, sii = 0, sjj = 0, sij = 0;
        double sx = 0, sxi = 0, sxj = 0, sy = 0, syi = 0, syj = 0;
        for (size_t k = 0; k < dets.size(); ++k) {
            double i = ij[k].first, j = ij[k].second;
            si += i;
            sj += j;
            sii += i * i;
            sjj += j * j;
            sij += i * j;
            sx += dets[k].x;
            sxi += dets[k].x * i;
            sxj += dets[k].x * j;
            sy += dets[k].y;
            syi += dets[k].y * i;
            syj += dets[k].y * j;
        }
        double m[3][3] = {{s1, si, sj}, {si, sii, sij}, {sj, sij, sjj}};
        double dm = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                    m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                    m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if (std::fabs(dm) < 1e-9) return false;
        auto solve3 = [&](double b0, double b1, double b2, double* r) {
            double a[3][3];
            for (int col = 0; col < 3; ++col) {
                for (int ri = 0; ri < 3; ++ri)
                    for (int ci = 0; ci < 3; ++ci) a[ri][ci] = m[ri][ci];
                a[0][col] = b0;
                a[1][col] = b1;
                a[2][col] = b2;
                r[col] = (a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
                          a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
                          a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])) /
                         dm;
            }
        };
        double rx[3], ry[3];
        solve3(sx, sxi, sxj, rx);
        solve3(sy, syi, syj, ry);
        ox = rx[0];
        u.x = rx[1];
        v.x = rx[2];
        oy = ry[0];
        u.y = ry[1];
        v.y = ry[2];
        ulen = std::hypot(u.x, u.y);
        vlen = std::hypot(v.x, v.y);
        if (ulen < 4.0 || vlen < 4.0) return false;
    }

    // Regenerate the grid covering the image plus one period of margin.
    det = u.x * v.y - u.y * v.x;
    double i_lo = 1e18, i_hi = -1e18, j_lo = 1e18, j_hi = -1e18;
    const double cx[4] = {0.0, static_cast<double>(w - 1), 0.0, static_cast<double>(w - 1)};
    const double cy[4] = {0.0, 0.0, static_cast<double>(h - 1), static_cast<double>(h - 1)};
    for (int k = 0; k < 4; ++k) {
        double px = cx[k] - ox, py = cy[k] - oy;
        double fi = (px * v.y - py * v.x) / det;
        double fj = (py * u.x - px * u.y) / det;
        i_lo = std::min(i_lo, fi);
        i_hi = std::max(i_hi, fi);
        j_lo = std::min(j_lo, fj);
        j_hi = std::max(j_hi, fj);
    }
    int i0 = static_cast<int>(std::floor(i_lo)) - 1, i1 = static_cast<int>(std::ceil(i_hi)) + 1;
    int j0 = static_cast<int>(std::floor(j_lo)) - 1, j1 = static_cast<int>(std::ceil(j_hi)) + 1;
    if ((static_cast<long long>(i1 - i0 + 1)) * (j1 - j0 + 1) > 100000) return false;

    out.nodes.clear();
    out.edges.clear();
    auto node_id = [&](int i, int j) {
        return (i - i0) * (j1 - j0 + 1) + (j - j0);
    };
    for (int i = i0; i <= i1; ++i)
        for (int j = j0; j <= j1; ++j) {
            TexelDetection n;
            n.x = static_cast<int>(std::lround(ox + i * u.x + j * v.x));
            n.y = static_cast<int>(std::lround(oy + i * u.y + j * v.y));
            n.score = 0.0f;
            out.nodes.push_back(n);
        }
    for (int i = i0; i <= i1; ++i)
        for (int j = j0; j <= j1; ++j) {
            if (i + 1 <= i1) out.edges.push_back({node_id(i, j), node_id(i + 1, j)});
            if (j + 1 <= j1) out.edges.push_back({node_id(i, j), node_id(i, j + 1)});
        }
    return true;
}

}  // namespace

SegmentationResult segment_fence(const Image& img, const LinearClassifier& clf,
                                 const FeatureBackend& backend,
                                 const SegmentationParams& params) {
    SegmentationResult res;
    res.detections =
        detect_texels(img, clf, backend, params.stride, params.window, params.nms_radius);
    if (params.min_rel_score > 0.0 && !res.detections.empty()) {
        std::vector<float> scores;
        for (const auto& d : res.detections) scores.push_back(d.score);
        std::nth_element(scores.begin(), scores.begin() + scores.size() / 2, scores.end());
        float cut = static_cast<float>(params.min_rel_score) * scores[scores.size() / 2];
        std::vector<TexelDetection> kept;
        for (const auto& d : res.detections)
            if (d.score >= cut) kept.push_back(d);
        res.detections = std::move(kept);
    }
    if (res.detections.empty()) {
        res.mask = BinaryMask(img.width, img.height);
        res.empty = true;
        return res;
    }
    // Stride-1 refinement: snap each detection to the local score maximum so
    // the rasterized lattice lands on the actual wires.
    {
        const int half = params.window / 2;
        const int r = params.stride / 2 + 1;
        for (auto& d : res.detections) {
            int best_x = d.x, best_y = d.y;
            float best_s = d.score;
            for (int oy = -r; oy <= r; ++oy)
                for (int ox = -r; ox <= r; ++ox) {
                    if (ox == 0 && oy == 0) continue;
                    int cx = d.x + ox, cy = d.y + oy;
                    if (cx < half || cx + half > img.width || cy < half ||
                        cy + half > img.height)
                        continue;
                    float s = clf.score(backend.extract(img, cx, cy, params.window));
                    if (s > best_s) {
                        best_s = s;
                        best_x = cx;
                        best_y = cy;
                    }
                }
            d.x = best_x;
            d.y = best_y;
            d.score = best_s;
        }
    }
    Lattice lat = link_texels(res.detections, params.max_link);
    Lattice model;
    if (fit_lattice_model(res.detections, lat.edges, img.width, img.height, model))
        lat = std::move(model);
    else
        extend_lattice_to_borders(lat, img.width, img.height);
    BinaryMask prelim = rasterize_lattice(lat, params.thickness, img.width, img.height);
    ScribbleResult scrib = generate_scribbles(prelim, params.erode_r, params.dilate_r);

    bool has_fg = false, has_bg = false;
    for (auto l : scrib.trimap.labels) {
        has_fg = has_fg || l == TrimapLabel::Foreground;
        has_bg = has_bg || l == TrimapLabel::Background;
    }
    if (!has_fg || !has_bg) {
        res.mask = prelim;  // degenerate trimap: the preliminary mask stands
        return res;
    }
    res.alpha = solve_alpha(img, scrib.trimap, params.lambda_s, params.sigma_c);
    res.mask = threshold_alpha(res.alpha, params.tau);
    return res;
}

}  // namespace defence
