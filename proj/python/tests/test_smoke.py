import json

import numpy as np
import pytest

import pydefence as pd


SPEC = {
    "width": 200,
    "height": 160,
    "frames": 3,
    "seed": 11,
    "noise_sigma": 0.01,
    "lattice": {"spacing": 40, "angle_deg": 10, "thickness": 3},
    "motions": [[0, 0], [3.5, -2.5], [-4.0, 3.0]],
}

CONFIG = json.dumps({"flow": {"mu": 0.05, "cg_iters": 200, "cg_tol": 1e-5},
                     "fista": {"max_iters": 2000}})


@pytest.fixture(scope="module")
def scene():
    return pd.render_scene(json.dumps(SPEC))


@pytest.fixture(scope="module")
def classifier():
    half = 16
    rng = np.random.default_rng(0)
    pos, neg = [], []
    for i in range(3):
        spec = {
            "width": 240, "height": 180, "frames": 1, "seed": 21 + i,
            "noise_sigma": 0.01,
            "lattice": {"spacing": 28 + 6 * i, "angle_deg": 8 * i, "thickness": 3,
                        "origin": [3 + 2 * i, 5 + 3 * i]},
        }
        sc = pd.render_scene(json.dumps(spec))
        img = sc["frames"][0]
        mask = sc["masks"][0]
        joints = sc["joints"][0]
        h, w = mask.shape
        for jx, jy in joints:
            cx, cy = int(round(jx)), int(round(jy))
            for ox, oy in [(0, 0), (2, 0), (-2, 0), (0, 2), (0, -2)]:
                px, py = cx + ox, cy + oy
                if half <= px <= w - 1 - half and half <= py <= h - 1 - half:
                    pos.append(pd.extract_descriptor(img, px, py, 32))
            # Negatives away from every joint; half of them on the wires so
            # the classifier learns joints, not fence color.
            for _ in range(8):
                for _ in range(200):
                    nx = int(rng.integers(half, w - half))
                    ny = int(rng.integers(half, h - half))
                    d2 = ((joints[:, 0] - nx) ** 2 + (joints[:, 1] - ny) ** 2).min()
                    if d2 >= half * half and (len(neg) % 2 == 0 or mask[ny, nx]):
                        neg.append(pd.extract_descriptor(img, nx, ny, 32))
                        break
    return pd.train_classifier(np.array(pos), np.array(neg), c=10.0, epochs=150, seed=0)


def test_render_scene_shapes(scene):
    assert len(scene["frames"]) == 3
    assert scene["frames"][0].shape == (160, 200, 3)
    assert scene["background"].shape == (160, 200, 3)
    assert scene["masks"][0].shape == (160, 200)
    assert scene["masks"][0].dtype == bool
    assert scene["flows"][1].shape == (160, 200, 2)
    assert scene["joints"][0].shape[1] == 2
    np.testing.assert_allclose(scene["flows"][1][0, 0], [3.5, -2.5])


def test_render_scene_deterministic(scene):
    again = pd.render_scene(json.dumps(SPEC))
    np.testing.assert_array_equal(scene["frames"][2], again["frames"][2])


def test_metrics():
    assert pd.f_from_pr(0.96, 0.98) == pytest.approx(0.97, abs=0.005)
    pts = np.array([[10.0, 10.0], [20.0, 10.0]])
    p, r, f = pd.detection_fmeasure(pts, pts, radius=3.0)
    assert (p, r, f) == (1.0, 1.0, 1.0)
    a = np.zeros((8, 8), bool)
    a[2:4] = True
    p, r, f = pd.mask_fmeasure(a, a)
    assert f == 1.0
    img = np.full((8, 8), 0.5, np.float32)
    assert pd.psnr(img, img) == float("inf")
    assert pd.psnr(img, img + 0.1) == pytest.approx(20.0, abs=0.01)


def test_segment_fence(scene, classifier):
    res = pd.segment_fence(scene["frames"][0], classifier)
    assert not res["empty"]
    assert res["mask"].shape == (160, 200)
    _, _, f = pd.mask_fmeasure(res["mask"], scene["masks"][0])
    assert f >= 0.9


def test_estimate_flow(scene):
    gray = scene["frames"][1].mean(axis=2).astype(np.float32)
    gray0 = scene["frames"][0].mean(axis=2).astype(np.float32)
    flow, low_conf = pd.estimate_flow(gray, gray0, scene["masks"][1], scene["masks"][0],
                                      config_json=CONFIG)
    assert not low_conf
    gt = scene["flows"][1]
    h, w = gray.shape
    xs, ys = np.meshgrid(np.arange(w), np.arange(h))
    oob = ((xs + gt[..., 0] < 0) | (xs + gt[..., 0] > w - 1)
           | (ys + gt[..., 1] < 0) | (ys + gt[..., 1] > h - 1))
    assert pd.endpoint_error(flow, gt, exclude=oob) <= 0.5


def test_defence_pipeline(scene):
    res = pd.defence_pipeline(scene["frames"], scene["masks"], ref_index=0,
                              config_json=CONFIG, flows=scene["flows"])
    assert res["converged"]
    assert not res["empty_masks"]
    assert pd.psnr(res["image"], scene["background"], region=scene["masks"][0]) >= 30.0


def test_classifier_round_trip(tmp_path, classifier):
    path = str(tmp_path / "model.clf")
    classifier.save(path)
    loaded = pd.Classifier.load(path)
    feat = np.zeros((1, 152), np.float32)
    assert loaded.score(feat) == pytest.approx(classifier.score(feat))


def test_config_validation(scene):
    with pytest.raises(Exception):
        pd.segment_fence(scene["frames"][0], pd.Classifier.load("/nonexistent"))
    with pytest.raises(Exception):
        pd.defence_pipeline(scene["frames"], scene["masks"],
                            config_json='{"bogus": 1}')
