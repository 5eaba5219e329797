#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "defence/config.hpp"
#include "defence/fenceseg.hpp"
#include "defence/fusion.hpp"
#include "defence/occflow.hpp"
#include "defence/synthbench.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace py = pybind11;
using namespace defence;

namespace {

// Images cross the boundary as float32 arrays of shape (H, W) or (H, W, 3),
// masks as bool (H, W), flows as float32 (H, W, 2).

Image image_from_array(const py::array& arr) {
    auto a = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(arr);
    if (!a || a.ndim() < 2 || a.ndim() > 3)
        throw std::invalid_argument("expected a (H, W) or (H, W, 3) array");
    int h = static_cast<int>(a.shape(0));
    int w = static_cast<int>(a.shape(1));
    int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
    if (c != 1 && c != 3) throw std::invalid_argument("expected 1 or 3 channels");
    Image img(w, h, c);
    std::copy(a.data(), a.data() + img.data.size(), img.data.begin());
    return img;
}

py::array image_to_array(const Image& img) {
    std::vector<py::ssize_t> shape{img.height, img.width};
    if (img.channels == 3) shape.push_back(3);
    py::array_t<float> out(shape);
    std::copy(img.data.begin(), img.data.end(), out.mutable_data());
    return out;
}

BinaryMask mask_from_array(const py::array& arr) {
    auto a = py::array_t<bool, py::array::c_style | py::array::forcecast>::ensure(arr);
    if (!a || a.ndim() != 2) throw std::invalid_argument("expected a (H, W) bool array");
    int h = static_cast<int>(a.shape(0));
    int w = static_cast<int>(a.shape(1));
    BinaryMask m(w, h);
    const bool* p = a.data();
    for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = p[i] ? 1 : 0;
    return m;
}

py::array mask_to_array(const BinaryMask& m) {
    py::array_t<bool> out({m.height, m.width});
    bool* p = out.mutable_data();
    for (size_t i = 0; i < m.data.size(); ++i) p[i] = m.data[i] != 0;
    return out;
}

FlowField flow_from_array(const py::array& arr) {
    auto a = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(arr);
    if (!a || a.ndim() != 3 || a.shape(2) != 2)
        throw std::invalid_argument("expected a (H, W, 2) array");
    int h = static_cast<int>(a.shape(0));
    int w = static_cast<int>(a.shape(1));
    FlowField f(w, h);
    const float* p = a.data();
    for (size_t i = 0; i < f.u.size(); ++i) {
        f.u[i] = p[2 * i];
        f.v[i] = p[2 * i + 1];
    }
    return f;
}

py::array flow_to_array(const FlowField& f) {
    py::array_t<float> out({f.height, f.width, 2});
    float* p = out.mutable_data();
    for (size_t i = 0; i < f.u.size(); ++i) {
        p[2 * i] = f.u[i];
        p[2 * i + 1] = f.v[i];
    }
    return out;
}

PipelineConfig config_from_json(const std::string& config_json) {
    return parse_config_text(config_json);
}

std::vector<FeatureVector> features_from_array(const py::array& arr) {
    auto a = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(arr);
    if (!a || a.ndim() != 2) throw std::invalid_argument("expected a (N, D) array");
    std::vector<FeatureVector> out(static_cast<size_t>(a.shape(0)));
    int d = static_cast<int>(a.shape(1));
    for (py::ssize_t i = 0; i < a.shape(0); ++i)
        out[i].assign(a.data() + i * d, a.data() + (i + 1) * d);
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "fence segmentation, occlusion-aware flow, and multi-frame de-fencing";

    py::class_<LinearClassifier>(m, "Classifier")
        .def_static("load", &load_classifier, py::arg("path"))
        .def("save", [](const LinearClassifier& c, const std::string& p) { save_classifier(p, c); },
             py::arg("path"))
        .def("score",
             [](const LinearClassifier& c, const py::array& f) {
                 auto feats = features_from_array(f);
                 if (feats.size() != 1) throw std::invalid_argument("score takes one feature row");
                 return c.score(feats[0]);
             },
             py::arg("features"))
        .def_readonly("threshold", &LinearClassifier::threshold)
        .def_readonly("backend", &LinearClassifier::backend);

    m.def("extract_descriptor",
          [](const py::array& img, int cx, int cy, int window) {
              DescriptorBackend backend;
              FeatureVector f = backend.extract(image_from_array(img), cx, cy, window);
              return py::array_t<float>({static_cast<py::ssize_t>(f.size())}, f.data());
          },
          py::arg("image"), py::arg("cx"), py::arg("cy"), py::arg("window") = 32);

    m.def("train_classifier",
          [](const py::array& pos, const py::array& neg, double c, int epochs, unsigned seed) {
              return train_classifier(features_from_array(pos), features_from_array(neg), c,
                                      epochs, seed);
          },
          py::arg("positives"), py::arg("negatives"), py::arg("c") = 1.0,
          py::arg("epochs") = 50, py::arg("seed") = 0);

    m.def("segment_fence",
          [](const py::array& img, const LinearClassifier& clf, const std::string& config_json) {
              DescriptorBackend backend;
              SegmentationResult res = segment_fence(image_from_array(img), clf, backend,
                                                     config_from_json(config_json).segment);
              py::array_t<float> dets({static_cast<py::ssize_t>(res.detections.size()),
                                       static_cast<py::ssize_t>(3)});
              float* p = dets.mutable_data();
              for (size_t i = 0; i < res.detections.size(); ++i) {
                  p[3 * i] = static_cast<float>(res.detections[i].x);
                  p[3 * i + 1] = static_cast<float>(res.detections[i].y);
                  p[3 * i + 2] = res.detections[i].score;
              }
              py::dict out;
              out["mask"] = mask_to_array(res.mask);
              out["empty"] = res.empty;
              out["detections"] = dets;
              out["alpha"] = image_to_array(res.alpha);
              return out;
          },
          py::arg("image"), py::arg("classifier"), py::arg("config_json") = "{}");

    m.def("estimate_flow",
          [](const py::array& ref, const py::array& tgt, py::object ref_mask,
             py::object tgt_mask, const std::string& config_json) {
              Image r = image_from_array(ref), t = image_from_array(tgt);
              BinaryMask rm = ref_mask.is_none() ? BinaryMask(r.width, r.height)
                                                 : mask_from_array(ref_mask.cast<py::array>());
              BinaryMask tm = tgt_mask.is_none() ? BinaryMask(t.width, t.height)
                                                 : mask_from_array(tgt_mask.cast<py::array>());
              FlowResult res = estimate_flow(r, t, rm, tm, config_from_json(config_json).flow);
              return py::make_tuple(flow_to_array(res.flow), res.low_confidence);
          },
          py::arg("ref"), py::arg("tgt"), py::arg("ref_mask") = py::none(),
          py::arg("tgt_mask") = py::none(), py::arg("config_json") = "{}");

    m.def("defence_pipeline",
          [](const std::vector<py::array>& frames, const std::vector<py::array>& masks,
             int ref_index, const std::string& config_json, py::object flows) {
              std::vector<Image> fr;
              std::vector<BinaryMask> mk;
              for (const auto& f : frames) fr.push_back(image_from_array(f));
              for (const auto& mask : masks) mk.push_back(mask_from_array(mask));
              std::vector<FlowField> fl;
              if (!flows.is_none())
                  for (const auto& f : flows.cast<std::vector<py::array>>())
                      fl.push_back(flow_from_array(f));
              PipelineResult res =
                  defence_pipeline(fr, mk, ref_index,
                                   config_from_json(config_json).pipeline_params(),
                                   flows.is_none() ? nullptr : &fl);
              py::dict out;
              out["image"] = image_to_array(res.image);
              out["converged"] = res.converged;
              out["empty_masks"] = res.empty_masks;
              return out;
          },
          py::arg("frames"), py::arg("masks"), py::arg("ref_index") = 0,
          py::arg("config_json") = "{}", py::arg("flows") = py::none());

    m.def("render_scene",
          [](const std::string& spec_json) {
              RenderedScene sc = render_scene(scene_spec_from_json(spec_json));
              py::list frames, masks, flows, joints;
              for (const auto& f : sc.frames) frames.append(image_to_array(f));
              for (const auto& mask : sc.gt.masks) masks.append(mask_to_array(mask));
              for (const auto& f : sc.gt.flows) flows.append(flow_to_array(f));
              for (const auto& js : sc.gt.joints) {
                  py::array_t<double> a({static_cast<py::ssize_t>(js.size()),
                                         static_cast<py::ssize_t>(2)});
                  double* p = a.mutable_data();
                  for (size_t i = 0; i < js.size(); ++i) {
                      p[2 * i] = js[i].first;
                      p[2 * i + 1] = js[i].second;
                  }
                  joints.append(a);
              }
              py::dict out;
              out["frames"] = frames;
              out["background"] = image_to_array(sc.gt.background);
              out["masks"] = masks;
              out["flows"] = flows;
              out["joints"] = joints;
              return out;
          },
          py::arg("spec_json"));

    m.def("f_from_pr", &f_from_pr, py::arg("precision"), py::arg("recall"));

    m.def("detection_fmeasure",
          [](const py::array& pred, const py::array& gt, double radius) {
              auto p = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(pred);
              auto g = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(gt);
              if (!p || p.ndim() != 2 || p.shape(1) < 2 || !g || g.ndim() != 2 || g.shape(1) != 2)
                  throw std::invalid_argument("expected (N, 2) point arrays");
              std::vector<TexelDetection> dets;
              for (py::ssize_t i = 0; i < p.shape(0); ++i)
                  dets.push_back({static_cast<int>(std::lround(p.at(i, 0))),
                                  static_cast<int>(std::lround(p.at(i, 1))), 0.0f});
              std::vector<std::pair<double, double>> joints;
              for (py::ssize_t i = 0; i < g.shape(0); ++i)
                  joints.emplace_back(g.at(i, 0), g.at(i, 1));
              PrfScores s = detection_fmeasure(dets, joints, radius);
              return py::make_tuple(s.precision, s.recall, s.f);
          },
          py::arg("pred"), py::arg("gt"), py::arg("radius") = 5.0);

    m.def("mask_fmeasure",
          [](const py::array& pred, const py::array& gt) {
              PrfScores s = mask_fmeasure(mask_from_array(pred), mask_from_array(gt));
              return py::make_tuple(s.precision, s.recall, s.f);
          },
          py::arg("pred"), py::arg("gt"));

    m.def("endpoint_error",
          [](const py::array& pred, const py::array& gt, py::object exclude) {
              BinaryMask ex;
              bool has = !exclude.is_none();
              if (has) ex = mask_from_array(exclude.cast<py::array>());
              return endpoint_error(flow_from_array(pred), flow_from_array(gt),
                                    has ? &ex : nullptr);
          },
          py::arg("pred"), py::arg("gt"), py::arg("exclude") = py::none());

    m.def("psnr",
          [](const py::array& pred, const py::array& gt, py::object region) {
              BinaryMask reg;
              bool has = !region.is_none();
              if (has) reg = mask_from_array(region.cast<py::array>());
              return psnr(image_from_array(pred), image_from_array(gt), has ? &reg : nullptr);
          },
          py::arg("pred"), py::arg("gt"), py::arg("region") = py::none());

    m.def("default_config_json", [] { return config_to_json(PipelineConfig{}); });
}
