#include <doctest.h>

#include "defence/synthbench.hpp"

#include <cmath>
#include <limits>

using namespace defence;

TEST_CASE("render_scene determinism") {
    SceneSpec spec;
    spec.width = 64;
    spec.height = 48;
    spec.frames = 3;
    spec.seed = 7;
    spec.noise_sigma = 0.01;
    spec.lattice.spacing = 20.0;
    spec.motions = {Motion{}, Motion::translation(2.0, 1.0), Motion::translation(-3.0, 0.5)};

    RenderedScene a = render_scene(spec);
    RenderedScene b = render_scene(spec);
    REQUIRE(a.frames.size() == 3);
    for (int m = 0; m < 3; ++m) {
        CHECK(a.frames[m].data == b.frames[m].data);
        CHECK(a.gt.masks[m].data == b.gt.masks[m].data);
        CHECK(a.gt.flows[m].u == b.gt.flows[m].u);
    }

    SUBCASE("a different seed changes the frames") {
        spec.seed = 8;
        RenderedScene c = render_scene(spec);
        CHECK(a.frames[0].data != c.frames[0].data);
    }
    SUBCASE("noise differs per frame") {
        CHECK(a.frames[0].data != a.frames[1].data);
    }
}

TEST_CASE("render_scene composition follows the degradation model") {
    // With sigma = 0: frame = fence color on the mask, warped background off it.
    SceneSpec spec;
    spec.width = 80;
    spec.height = 60;
    spec.frames = 2;
    spec.seed = 3;
    spec.noise_sigma = 0.0;
    spec.lattice.spacing = 24.0;
    spec.lattice.thickness = 3.0;
    spec.motions = {Motion{}, Motion::translation(4.0, -2.0)};

    RenderedScene scene = render_scene(spec);
    for (int m = 0; m < 2; ++m) {
        Image warped = warp_background(scene.gt.background, spec.motions[m]);
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x)
                for (int c = 0; c < 3; ++c) {
                    float expected = scene.gt.masks[m].at(x, y)
                                         ? spec.lattice.color[c]
                                         : warped.at(x, y, c);
                    CHECK(scene.frames[m].at(x, y, c) ==
                          doctest::Approx(expected).epsilon(1e-6));
                }
    }

    SUBCASE("ground-truth flow matches the motion") {
        CHECK(scene.gt.flows[1].u_at(5, 5) == doctest::Approx(4.0f));
        CHECK(scene.gt.flows[1].v_at(5, 5) == doctest::Approx(-2.0f));
        CHECK(scene.gt.flows[0].u_at(5, 5) == 0.0f);
    }
    SUBCASE("mask is static across frames") {
        CHECK(scene.gt.masks[0].data == scene.gt.masks[1].data);
    }
}

TEST_CASE("render_scene joints") {
    SUBCASE("axis-aligned 200x200 with spacing 40 has 25 joints") {
        SceneSpec spec;
        spec.width = 200;
        spec.height = 200;
        spec.frames = 1;
        spec.lattice.spacing = 40.0;
        RenderedScene scene = render_scene(spec);
        REQUIRE(scene.gt.joints.size() == 1);
        CHECK(scene.gt.joints[0].size() == 25);
        // Every joint sits on the fence mask.
        for (auto [jx, jy] : scene.gt.joints[0])
            CHECK(scene.gt.masks[0].at(static_cast<int>(std::lround(jx)),
                                       static_cast<int>(std::lround(jy))));
    }
    SUBCASE("rotation preserves in-bounds joints only") {
        SceneSpec spec;
        spec.width = 120;
        spec.height = 120;
        spec.frames = 1;
        spec.lattice.spacing = 30.0;
        spec.lattice.angle_deg = 30.0;
        spec.lattice.origin_x = 11.0;
        spec.lattice.origin_y = 17.0;
        RenderedScene scene = render_scene(spec);
        CHECK(!scene.gt.joints[0].empty());
        for (auto [jx, jy] : scene.gt.joints[0]) {
            CHECK(jx >= 0.0);
            CHECK(jx <= 119.0);
            CHECK(jy >= 0.0);
            CHECK(jy <= 119.0);
        }
    }
    SUBCASE("spacing must exceed twice the thickness") {
        SceneSpec spec;
        spec.lattice.spacing = 5.0;
        spec.lattice.thickness = 3.0;
        CHECK_THROWS(render_scene(spec));
    }
}

TEST_CASE("scene_spec json round trip") {
    SceneSpec spec;
    spec.width = 321;
    spec.height = 243;
    spec.frames = 5;
    spec.seed = 99;
    spec.noise_sigma = 0.02;
    spec.texture = "checker";
    spec.lattice.spacing = 37.5;
    spec.lattice.angle_deg = 12.0;
    spec.lattice.thickness = 2.5;
    spec.lattice.origin_x = 3.0;
    spec.lattice.origin_y = -4.0;
    spec.lattice.soft_edge = true;
    Motion aff;
    aff.a11 = 1.01;
    aff.a12 = 0.02;
    aff.tx = 1.5;
    aff.a21 = -0.01;
    aff.a22 = 0.99;
    aff.ty = -0.5;
    spec.motions = {Motion{}, aff};

    SceneSpec back = scene_spec_from_json(scene_spec_to_json(spec));
    CHECK(back.width == spec.width);
    CHECK(back.height == spec.height);
    CHECK(back.frames == spec.frames);
    CHECK(back.seed == spec.seed);
    CHECK(back.texture == spec.texture);
    CHECK(back.noise_sigma == doctest::Approx(spec.noise_sigma));
    CHECK(back.lattice.spacing == doctest::Approx(spec.lattice.spacing));
    CHECK(back.lattice.angle_deg == doctest::Approx(spec.lattice.angle_deg));
    CHECK(back.lattice.origin_y == doctest::Approx(spec.lattice.origin_y));
    CHECK(back.lattice.soft_edge);
    REQUIRE(back.motions.size() == 2);
    CHECK(back.motions[1].a12 == doctest::Approx(0.02));
    CHECK(back.motions[1].ty == doctest::Approx(-0.5));

    SUBCASE("translation shorthand parses") {
        SceneSpec t = scene_spec_from_json(R"({"motions": [[2.0, -1.0]]})");
        REQUIRE(t.motions.size() == 1);
        CHECK(t.motions[0].tx == doctest::Approx(2.0));
        CHECK(t.motions[0].ty == doctest::Approx(-1.0));
        CHECK(t.motions[0].a11 == doctest::Approx(1.0));
    }
    SUBCASE("bad affine length raises") {
        CHECK_THROWS(scene_spec_from_json(R"({"motions": [{"matrix": [1, 0, 0]}]})"));
    }
}

TEST_CASE("f_from_pr") {
    CHECK(f_from_pr(0.96, 0.98) == doctest::Approx(0.97).epsilon(0.005));
    CHECK(f_from_pr(0.90, 0.98) == doctest::Approx(0.94).epsilon(0.005));
    CHECK(f_from_pr(0.95, 0.46) == doctest::Approx(0.62).epsilon(0.01));
    CHECK(f_from_pr(0.94, 0.26) == doctest::Approx(0.41).epsilon(0.01));
    CHECK(f_from_pr(1.0, 1.0) == 1.0);
    CHECK(f_from_pr(0.0, 0.0) == 0.0);
}

TEST_CASE("detection_fmeasure") {
    std::vector<std::pair<double, double>> gt = {{10, 10}, {50, 10}, {10, 50}, {50, 50}};
    SUBCASE("perfect detections score 1") {
        std::vector<TexelDetection> pred;
        for (auto [x, y] : gt)
            pred.push_back({static_cast<int>(x), static_cast<int>(y), 1.0f});
        PrfScores s = detection_fmeasure(pred, gt, 5.0);
        CHECK(s.precision == 1.0);
        CHECK(s.recall == 1.0);
        CHECK(s.f == 1.0);
    }
    SUBCASE("matching is one-to-one") {
        // Two predictions near one joint: only one may match.
        std::vector<TexelDetection> pred = {{10, 10, 1.0f}, {12, 10, 0.9f}};
        PrfScores s = detection_fmeasure(pred, gt, 5.0);
        CHECK(s.precision == doctest::Approx(0.5));
        CHECK(s.recall == doctest::Approx(0.25));
    }
    SUBCASE("outside the radius counts as both fp and fn") {
        std::vector<TexelDetection> pred = {{30, 30, 1.0f}};
        PrfScores s = detection_fmeasure(pred, gt, 5.0);
        CHECK(s.precision == 0.0);
        CHECK(s.recall == 0.0);
        CHECK(s.f == 0.0);
    }
    SUBCASE("constructed counts realize P=0.95, R=0.46") {
        // 437 matched joints, 23 false detections, 513 missed joints, all on
        // a sparse grid so no unintended pairs fall within the radius.
        std::vector<TexelDetection> pred;
        std::vector<std::pair<double, double>> joints;
        auto pos = [](int i) {
            return std::pair<double, double>(10.0 * (i % 200), 10.0 * (i / 200));
        };
        for (int i = 0; i < 950; ++i) joints.push_back(pos(i));
        for (int i = 0; i < 437; ++i)
            pred.push_back({static_cast<int>(pos(i).first),
                            static_cast<int>(pos(i).second), 1.0f});
        for (int i = 0; i < 23; ++i) {
            auto p = pos(1000 + i);  // beyond any joint index
            pred.push_back({static_cast<int>(p.first), static_cast<int>(p.second), 1.0f});
        }
        PrfScores s = detection_fmeasure(pred, joints, 3.0);
        CHECK(s.precision == doctest::Approx(437.0 / 460.0));
        CHECK(s.recall == doctest::Approx(437.0 / 950.0));
        CHECK(s.f == doctest::Approx(f_from_pr(437.0 / 460.0, 437.0 / 950.0)));
    }
}

TEST_CASE("mask_fmeasure") {
    BinaryMask gt(10, 10);
    for (int x = 0; x < 10; ++x) gt.set(x, 4, true);
    SUBCASE("exact match") {
        PrfScores s = mask_fmeasure(gt, gt);
        CHECK(s.f == 1.0);
    }
    SUBCASE("half overlap") {
        BinaryMask pred(10, 10);
        for (int x = 0; x < 5; ++x) pred.set(x, 4, true);
        PrfScores s = mask_fmeasure(pred, gt);
        CHECK(s.precision == 1.0);
        CHECK(s.recall == doctest::Approx(0.5));
        CHECK(s.f == doctest::Approx(2.0 / 3.0));
    }
    SUBCASE("empty prediction against nonempty truth is all zeros") {
        PrfScores s = mask_fmeasure(BinaryMask(10, 10), gt);
        CHECK(s.precision == 0.0);
        CHECK(s.recall == 0.0);
        CHECK(s.f == 0.0);
    }
    SUBCASE("size mismatch raises") {
        CHECK_THROWS(mask_fmeasure(BinaryMask(9, 10), gt));
    }
}

TEST_CASE("endpoint_error") {
    FlowField gt(8, 8);
    SUBCASE("identical flows give zero") {
        CHECK(endpoint_error(gt, gt) == 0.0);
    }
    SUBCASE("uniform (2,3) offset gives sqrt(13)") {
        FlowField pred(8, 8);
        for (auto& u : pred.u) u = 2.0f;
        for (auto& v : pred.v) v = 3.0f;
        CHECK(endpoint_error(pred, gt) == doctest::Approx(std::sqrt(13.0)).epsilon(1e-6));
    }
    SUBCASE("excluded pixels do not contribute") {
        FlowField pred(8, 8);
        pred.u_at(0, 0) = 100.0f;
        BinaryMask ex(8, 8);
        ex.set(0, 0, true);
        CHECK(endpoint_error(pred, gt, &ex) == 0.0);
        BinaryMask all(8, 8, true);
        CHECK_THROWS(endpoint_error(pred, gt, &all));
    }
}

TEST_CASE("psnr") {
    Image gt(10, 10, 1, 0.5f);
    SUBCASE("exact match is infinite") {
        CHECK(psnr(gt, gt) == std::numeric_limits<double>::infinity());
    }
    SUBCASE("uniform 0.1 error gives 20 dB") {
        Image pred(10, 10, 1, 0.6f);
        CHECK(psnr(pred, gt) == doctest::Approx(20.0).epsilon(1e-5));
    }
    SUBCASE("uniform 0.01 error gives 40 dB") {
        Image pred(10, 10, 1, 0.51f);
        CHECK(psnr(pred, gt) == doctest::Approx(40.0).epsilon(1e-4));
    }
    SUBCASE("region restricts the average") {
        Image pred = gt;
        pred.at(0, 0) = 1.0f;  // error only outside the region
        BinaryMask region(10, 10, true);
        region.set(0, 0, false);
        CHECK(psnr(pred, gt, &region) == std::numeric_limits<double>::infinity());
        CHECK(psnr(pred, gt) < 40.0);
    }
}
