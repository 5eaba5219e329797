#include <doctest.h>

#include "defence/fenceseg.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <random>
#include <string>

using namespace defence;

namespace {

Image random_rgb(int w, int h, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    Image img(w, h, 3);
    for (auto& v : img.data) v = dist(rng);
    return img;
}

// Scripted detector: the classifier sees exactly the score planted at each
// scan center, which makes stride and NMS geometry testable in isolation.
class PlantedBackend : public FeatureBackend {
public:
    std::map<std::pair<int, int>, float> scores;

    FeatureVector extract(const Image&, int cx, int cy, int) const override {
        auto it = scores.find({cx, cy});
        return {it == scores.end() ? 0.0f : it->second};
    }
    int dimension() const override { return 1; }
    std::string name() const override { return "planted"; }
};

LinearClassifier passthrough_classifier() {
    LinearClassifier clf;
    clf.weights = {1.0f};
    clf.bias = 0.0f;
    clf.threshold = 0.0f;
    return clf;
}

std::string temp_path(const char* name) {
    return std::string("/tmp/defence_test_") + name;
}

}  // namespace

TEST_CASE("DescriptorBackend") {
    DescriptorBackend backend;
    CHECK(backend.dimension() == 152);

    SUBCASE("deterministic and correctly sized") {
        Image img = random_rgb(40, 40, 1);
        FeatureVector a = backend.extract(img, 20, 20, 16);
        FeatureVector b = backend.extract(img, 20, 20, 16);
        REQUIRE(a.size() == 152);
        CHECK(a == b);
    }
    SUBCASE("blocks are unit norm on generic input") {
        Image img = random_rgb(40, 40, 2);
        FeatureVector f = backend.extract(img, 20, 20, 16);
        double n1 = 0.0, n2 = 0.0;
        for (int i = 0; i < 128; ++i) n1 += static_cast<double>(f[i]) * f[i];
        for (int i = 128; i < 152; ++i) n2 += static_cast<double>(f[i]) * f[i];
        CHECK(std::sqrt(n1) == doctest::Approx(1.0).epsilon(1e-5));
        CHECK(std::sqrt(n2) == doctest::Approx(1.0).epsilon(1e-5));
    }
    SUBCASE("constant patch has zero orientation block, one color bin per channel") {
        Image img(32, 32, 3);
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                img.at(x, y, 0) = 0.30f;  // bin 2
                img.at(x, y, 1) = 0.55f;  // bin 4
                img.at(x, y, 2) = 0.90f;  // bin 7
            }
        FeatureVector f = backend.extract(img, 16, 16, 16);
        for (int i = 0; i < 128; ++i) CHECK(f[i] == 0.0f);
        CHECK(f[128 + 0 * 8 + 2] == doctest::Approx(1.0f / std::sqrt(3.0f)));
        CHECK(f[128 + 1 * 8 + 4] == doctest::Approx(1.0f / std::sqrt(3.0f)));
        CHECK(f[128 + 2 * 8 + 7] == doctest::Approx(1.0f / std::sqrt(3.0f)));
        CHECK(f[128 + 0 * 8 + 3] == 0.0f);
    }
    SUBCASE("vertical edge concentrates orientation mass in the rightward bin") {
        Image img(32, 32, 1);
        for (int y = 0; y < 32; ++y)
            for (int x = 16; x < 32; ++x) img.at(x, y) = 1.0f;
        FeatureVector f = backend.extract(img, 16, 16, 16);
        double bin0 = 0.0, rest = 0.0;
        for (int cell = 0; cell < 16; ++cell)
            for (int b = 0; b < 8; ++b)
                (b == 0 ? bin0 : rest) += f[cell * 8 + b];
        CHECK(bin0 > 0.0);
        CHECK(rest == 0.0);
    }
}

TEST_CASE("train_classifier") {
    SUBCASE("separates linearly separable clusters") {
        std::mt19937 rng(5);
        std::normal_distribution<float> noise(0.0f, 0.05f);
        std::vector<FeatureVector> pos, neg;
        for (int i = 0; i < 40; ++i) {
            pos.push_back({1.0f + noise(rng), noise(rng)});
            neg.push_back({noise(rng), 1.0f + noise(rng)});
        }
        LinearClassifier clf = train_classifier(pos, neg);
        for (const auto& f : pos) CHECK(clf.score(f) > 0.0f);
        for (const auto& f : neg) CHECK(clf.score(f) < 0.0f);
    }
    SUBCASE("training is reproducible") {
        std::vector<FeatureVector> pos = {{1.0f, 0.2f}, {0.9f, 0.1f}, {1.1f, 0.0f}};
        std::vector<FeatureVector> neg = {{0.0f, 1.0f}, {0.1f, 0.8f}, {-0.1f, 1.1f}};
        LinearClassifier a = train_classifier(pos, neg, 1.0, 50, 0);
        LinearClassifier b = train_classifier(pos, neg, 1.0, 50, 0);
        CHECK(a.weights == b.weights);
        CHECK(a.bias == b.bias);
    }
    SUBCASE("rejects empty classes and inconsistent dimensions") {
        std::vector<FeatureVector> pos = {{1.0f}};
        CHECK_THROWS(train_classifier(pos, {}));
        CHECK_THROWS(train_classifier({}, pos));
        std::vector<FeatureVector> bad = {{1.0f, 2.0f}};
        CHECK_THROWS(train_classifier(pos, bad));
    }
}

TEST_CASE("classifier save/load round trip") {
    LinearClassifier clf;
    clf.weights = {0.5f, -1.25f, 3.0f};
    clf.bias = 0.75f;
    clf.threshold = 0.1f;
    clf.backend = "planted";
    std::string path = temp_path("clf.json");
    save_classifier(path, clf);
    LinearClassifier back = load_classifier(path);
    CHECK(back.weights == clf.weights);
    CHECK(back.bias == clf.bias);
    CHECK(back.threshold == clf.threshold);
    CHECK(back.backend == clf.backend);
    std::remove(path.c_str());

    SUBCASE("a non-classifier json file is rejected") {
        std::string bad = temp_path("notclf.json");
        FILE* f = std::fopen(bad.c_str(), "w");
        std::fputs("{\"format\": \"something-else\"}\n", f);
        std::fclose(f);
        CHECK_THROWS(load_classifier(bad));
        std::remove(bad.c_str());
    }
}

TEST_CASE("feature file round trip") {
    std::map<std::pair<int, int>, FeatureVector> table;
    table[{4, 4}] = {1.0f, 2.0f, 3.0f};
    table[{9, 14}] = {-0.5f, 0.25f, 0.125f};
    std::string path = temp_path("features.fvec");
    write_feature_file(path, table);

    FeatureFileBackend backend(path);
    CHECK(backend.dimension() == 3);
    Image dummy(1, 1, 1);
    CHECK(backend.extract(dummy, 4, 4, 16) == table[{4, 4}]);
    CHECK(backend.extract(dummy, 9, 14, 16) == table[{9, 14}]);
    CHECK_THROWS(backend.extract(dummy, 5, 5, 16));
    std::remove(path.c_str());

    SUBCASE("bad magic is rejected") {
        std::string bad = temp_path("bad.fvec");
        FILE* f = std::fopen(bad.c_str(), "wb");
        std::fputs("NOPE\0\0\0\0\0\0\0\0", f);
        std::fclose(f);
        CHECK_THROWS(FeatureFileBackend(bad));
        std::remove(bad.c_str());
    }
}

TEST_CASE("detect_texels") {
    Image img(32, 32, 1);
    PlantedBackend backend;
    LinearClassifier clf = passthrough_classifier();

    SUBCASE("scan grid covers window/2-aligned centers at the stride") {
        // window 8 in 32x32 at stride 5: centers {4,9,14,19,24} each axis.
        for (int cy = 4; cy <= 24; cy += 5)
            for (int cx = 4; cx <= 24; cx += 5) backend.scores[{cx, cy}] = 1.0f;
        auto dets = detect_texels(img, clf, backend, 5, 8, 0.1);
        CHECK(dets.size() == 25);
    }
    SUBCASE("nms keeps the higher score") {
        backend.scores[{4, 4}] = 0.5f;
        backend.scores[{9, 4}] = 0.9f;
        auto kept = detect_texels(img, clf, backend, 5, 8, 6.0);
        REQUIRE(kept.size() == 1);
        CHECK(kept[0].x == 9);
        CHECK(kept[0].score == doctest::Approx(0.9f));
        // Default radius window/2 = 4 < 5: both survive.
        CHECK(detect_texels(img, clf, backend, 5, 8).size() == 2);
    }
    SUBCASE("scores at or below the threshold are dropped") {
        clf.threshold = 0.5f;
        backend.scores[{4, 4}] = 0.5f;
        backend.scores[{14, 14}] = 0.6f;
        auto dets = detect_texels(img, clf, backend, 5, 8);
        REQUIRE(dets.size() == 1);
        CHECK(dets[0].x == 14);
    }
    SUBCASE("bad arguments raise") {
        CHECK_THROWS(detect_texels(img, clf, backend, 0, 8));
        CHECK_THROWS(detect_texels(img, clf, backend, 5, 64));
    }
}

TEST_CASE("link_texels") {
    SUBCASE("3x3 grid links into the 12 four-neighbor edges") {
        std::vector<TexelDetection> dets;
        for (int gy = 0; gy < 3; ++gy)
            for (int gx = 0; gx < 3; ++gx)
                dets.push_back({10 + 10 * gx, 10 + 10 * gy, 1.0f});
        Lattice lat = link_texels(dets, -1.0);  // median-based max_link
        CHECK(lat.nodes.size() == 9);
        CHECK(lat.edges.size() == 12);
        for (auto [a, b] : lat.edges) {
            int dx = std::abs(dets[a].x - dets[b].x);
            int dy = std::abs(dets[a].y - dets[b].y);
            CHECK(dx + dy == 10);  // axis-aligned unit grid step
        }
    }
    SUBCASE("nodes beyond max_link stay unlinked") {
        std::vector<TexelDetection> dets = {{0, 0, 1.0f}, {100, 0, 1.0f}};
        CHECK(link_texels(dets, 50.0).edges.empty());
        CHECK(link_texels(dets, 150.0).edges.size() == 1);
    }
    SUBCASE("fewer than two nodes give no edges") {
        CHECK(link_texels({}, -1.0).edges.empty());
        CHECK(link_texels({{5, 5, 1.0f}}, -1.0).edges.empty());
    }
}

TEST_CASE("rasterize_lattice") {
    Lattice lat;
    lat.nodes = {{5, 10, 1.0f}, {45, 10, 1.0f}};
    lat.edges = {{0, 1}};
    BinaryMask mask = rasterize_lattice(lat, 2, 60, 30);
    SUBCASE("the 41 centerline pixels are covered") {
        for (int x = 5; x <= 45; ++x) CHECK(mask.at(x, 10));
    }
    SUBCASE("pixels far from the segment stay clear") {
        CHECK(!mask.at(25, 16));
        CHECK(!mask.at(55, 10));
        CHECK(!mask.at(25, 3));
    }
    SUBCASE("thickness below one raises") {
        CHECK_THROWS(rasterize_lattice(lat, 0, 60, 30));
    }
}

TEST_CASE("generate_scribbles") {
    SUBCASE("solid block yields interior foreground and a detached background ring") {
        BinaryMask prelim(20, 20);
        for (int y = 6; y <= 13; ++y)
            for (int x = 6; x <= 13; ++x) prelim.set(x, y, true);
        ScribbleResult res = generate_scribbles(prelim, 1, 3);
        CHECK(res.used_erode_radius == 1);
        size_t fg = 0, bg = 0;
        for (int y = 0; y < 20; ++y)
            for (int x = 0; x < 20; ++x) {
                TrimapLabel l = res.trimap.at(x, y);
                if (l == TrimapLabel::Foreground) {
                    ++fg;
                    // erosion by the radius-1 disk keeps the 6x6 interior
                    CHECK(x >= 7);
                    CHECK(x <= 12);
                    CHECK(y >= 7);
                    CHECK(y <= 12);
                    CHECK(prelim.at(x, y));
                } else if (l == TrimapLabel::Background) {
                    ++bg;
                    CHECK(!prelim.at(x, y));
                }
            }
        CHECK(fg == 36);
        CHECK(bg > 0);
    }
    SUBCASE("erode radius backs off until the foreground survives") {
        BinaryMask thin(20, 20);
        for (int x = 3; x < 17; ++x) thin.set(x, 10, true);  // 1 px line
        ScribbleResult res = generate_scribbles(thin, 2, 3);
        CHECK(res.used_erode_radius == 0);
        size_t fg = 0;
        for (auto l : res.trimap.labels) fg += (l == TrimapLabel::Foreground);
        CHECK(fg == 14);
    }
    SUBCASE("radii below one raise") {
        CHECK_THROWS(generate_scribbles(BinaryMask(5, 5), 0, 3));
        CHECK_THROWS(generate_scribbles(BinaryMask(5, 5), 1, 0));
    }
}

TEST_CASE("solve_alpha") {
    SUBCASE("matches a dense solve on random 8x8 problems") {
        for (unsigned seed = 0; seed < 3; ++seed) {
            const int W = 8, H = 8, n = W * H;
            // Low contrast keeps all affinities well away from zero, so the
            // system is far from singular and the comparison is meaningful.
            Image img = random_rgb(W, H, seed + 30);
            for (auto& v : img.data) v = 0.4f + 0.2f * v;
            Trimap tm(W, H);
            std::mt19937 rng(seed + 60);
            for (int k = 0; k < 6; ++k)
                tm.at(static_cast<int>(rng() % W), static_cast<int>(rng() % H)) =
                    TrimapLabel::Foreground;
            for (int k = 0; k < 6; ++k) {
                int x = static_cast<int>(rng() % W), y = static_cast<int>(rng() % H);
                if (tm.at(x, y) == TrimapLabel::Unknown) tm.at(x, y) = TrimapLabel::Background;
            }
            const double lambda_s = 100.0, sigma_c = 0.1;
            const double inv = 1.0 / (2.0 * sigma_c * sigma_c);

            Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
            Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
            auto idx = [&](int x, int y) { return y * W + x; };
            auto affinity = [&](int x0, int y0, int x1, int y1) {
                double d2 = 0.0;
                for (int c = 0; c < 3; ++c) {
                    double d = static_cast<double>(img.at(x0, y0, c)) - img.at(x1, y1, c);
                    d2 += d * d;
                }
                return std::exp(-d2 * inv);
            };
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    int i = idx(x, y);
                    if (x + 1 < W) {
                        double a = affinity(x, y, x + 1, y);
                        A(i, i) += a;
                        A(idx(x + 1, y), idx(x + 1, y)) += a;
                        A(i, idx(x + 1, y)) -= a;
                        A(idx(x + 1, y), i) -= a;
                    }
                    if (y + 1 < H) {
                        double a = affinity(x, y, x, y + 1);
                        A(i, i) += a;
                        A(idx(x, y + 1), idx(x, y + 1)) += a;
                        A(i, idx(x, y + 1)) -= a;
                        A(idx(x, y + 1), i) -= a;
                    }
                    if (tm.at(x, y) != TrimapLabel::Unknown) {
                        A(i, i) += lambda_s;
                        if (tm.at(x, y) == TrimapLabel::Foreground) b(i) = lambda_s;
                    }
                }
            Eigen::VectorXd dense = A.ldlt().solve(b);
            Image alpha = solve_alpha(img, tm, lambda_s, sigma_c, 1e-10, 5000);
            for (int i = 0; i < n; ++i)
                CHECK(alpha.data[i] == doctest::Approx(dense(i)).epsilon(1e-4).scale(1.0));
        }
    }
    SUBCASE("respects the maximum principle and honors scribbles") {
        Image img = random_rgb(16, 16, 77);
        Trimap tm(16, 16);
        for (int x = 6; x <= 9; ++x) tm.at(x, 8) = TrimapLabel::Foreground;
        for (int x = 0; x < 16; ++x) {
            tm.at(x, 0) = TrimapLabel::Background;
            tm.at(x, 15) = TrimapLabel::Background;
        }
        Image alpha = solve_alpha(img, tm, 100.0);
        for (float v : alpha.data) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        CHECK(alpha.at(8, 8) > 0.9f);
        CHECK(alpha.at(8, 0) < 0.1f);
    }
    SUBCASE("solution energy beats nearby perturbations") {
        Image img = random_rgb(10, 10, 78);
        Trimap tm(10, 10);
        tm.at(5, 5) = TrimapLabel::Foreground;
        tm.at(0, 0) = TrimapLabel::Background;
        tm.at(9, 9) = TrimapLabel::Background;
        Image alpha = solve_alpha(img, tm, 100.0);
        double e0 = alpha_energy(img, tm, alpha, 100.0);
        std::mt19937 rng(79);
        std::normal_distribution<float> jitter(0.0f, 0.02f);
        for (int trial = 0; trial < 5; ++trial) {
            Image pert = alpha;
            for (auto& v : pert.data) v += jitter(rng);
            CHECK(alpha_energy(img, tm, pert, 100.0) >= e0 - 1e-9);
        }
    }
    SUBCASE("missing scribbles raise") {
        Image img = random_rgb(6, 6, 80);
        Trimap tm(6, 6);
        CHECK_THROWS(solve_alpha(img, tm, 100.0));
        tm.at(2, 2) = TrimapLabel::Foreground;
        CHECK_THROWS(solve_alpha(img, tm, 100.0));
    }
}

TEST_CASE("threshold_alpha") {
    Image alpha(3, 1, 1);
    alpha.at(0, 0) = 0.2f;
    alpha.at(1, 0) = 0.5f;
    alpha.at(2, 0) = 0.9f;
    BinaryMask m = threshold_alpha(alpha, 0.5);
    CHECK(!m.at(0, 0));
    CHECK(m.at(1, 0));  // threshold is inclusive
    CHECK(m.at(2, 0));
    CHECK_THROWS(threshold_alpha(alpha, 0.0));
    CHECK_THROWS(threshold_alpha(alpha, 1.0));
}

TEST_CASE("segment_fence with no detections degenerates to the empty mask") {
    Image img = random_rgb(40, 40, 90);
    PlantedBackend backend;  // never fires
    LinearClassifier clf = passthrough_classifier();
    SegmentationParams params;
    params.window = 16;
    SegmentationResult res = segment_fence(img, clf, backend, params);
    CHECK(res.empty);
    CHECK(res.mask.empty_mask());
    CHECK(res.detections.empty());
}
