#pragma once

#include "defence/image.hpp"

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace defence {

using FeatureVector = std::vector<float>;

// Descriptor source for sliding-window texel detection. Implementations
// must be deterministic in (image, center, window).
class FeatureBackend {
public:
    virtual ~FeatureBackend() = default;
    virtual FeatureVector extract(const Image& img, int cx, int cy, int window) const = 0;
    virtual int dimension() const = 0;
    virtual std::string name() const = 0;
};

// Hand-crafted default: 8-bin gradient-orientation histograms on a 4x4 grid
// of the grayscale patch (128 dims) + 8-bin per-channel color histograms
// (24 dims); both blocks L2-normalized.
class DescriptorBackend : public FeatureBackend {
public:
    FeatureVector extract(const Image& img, int cx, int cy, int window) const override;
    int dimension() const override { return 152; }
    std::string name() const override { return "descriptor-v1"; }
};

// Looks up externally computed per-window features keyed by window center.
// Missing keys raise.
class FeatureFileBackend : public FeatureBackend {
public:
    explicit FeatureFileBackend(const std::string& path);
    FeatureVector extract(const Image& img, int cx, int cy, int window) const override;
    int dimension() const override { return dim_; }
    std::string name() const override { return "feature-file"; }

private:
    int dim_ = 0;
    std::map<std::pair<int, int>, FeatureVector> table_;
};

void write_feature_file(const std::string& path,
                        const std::map<std::pair<int, int>, FeatureVector>& table);

struct LinearClassifier {
    FeatureVector weights;
    float bias = 0.0f;
    float threshold = 0.0f;
    std::string backend = "descriptor-v1";

    float score(const FeatureVector& f) const;
};

// Hinge-loss subgradient descent with L2 regularization; fixed seed so
// training is reproducible.
LinearClassifier train_classifier(const std::vector<FeatureVector>& positives,
                                  const std::vector<FeatureVector>& negatives,
                                  double c = 1.0, int epochs = 50,
                                  unsigned seed = 0);

void save_classifier(const std::string& path, const LinearClassifier& clf);
LinearClassifier load_classifier(const std::string& path);

struct TexelDetection {
    int x = 0;
    int y = 0;
    float score = 0.0f;
};

// Dense row-major scan at the given stride followed by greedy NMS.
std::vector<TexelDetection> detect_texels(const Image& img,
                                          const LinearClassifier& clf,
                                          const FeatureBackend& backend,
                                          int stride, int window,
                                          double nms_radius = -1.0);

struct Lattice {
    std::vector<TexelDetection> nodes;
    std::vector<std::pair<int, int>> edges;
};

// Up-to-4 nearest neighbors per node, one per angular quadrant, within
// max_link. max_link <= 0 selects 1.8x the median nearest-neighbor distance.
Lattice link_texels(const std::vector<TexelDetection>& dets, double max_link);

BinaryMask rasterize_lattice(const Lattice& lat, int thickness, int w, int h);

enum class TrimapLabel : uint8_t { Unknown = 0, Foreground = 1, Background = 2 };

struct Trimap {
    int width = 0;
    int height = 0;
    std::vector<TrimapLabel> labels;

    Trimap() = default;
    Trimap(int w, int h) : width(w), height(h), labels(static_cast<size_t>(w) * h) {}
    TrimapLabel& at(int x, int y) { return labels[static_cast<size_t>(y) * width + x]; }
    TrimapLabel at(int x, int y) const { return labels[static_cast<size_t>(y) * width + x]; }
};

struct ScribbleResult {
    Trimap trimap;
    int used_erode_radius = 0;
};

// Foreground = eroded preliminary mask (radius backed off until nonempty);
// background = boundary of the dilated mask; overlaps become unknown.
ScribbleResult generate_scribbles(const BinaryMask& prelim, int erode_r, int dilate_r);

// Scribble-constrained graph-Laplacian alpha solver with color affinities,
// solved by conjugate gradient from the trimap initialization.
Image solve_alpha(const Image& img, const Trimap& trimap, double lambda_s,
                  double sigma_c = 0.1, double cg_tol = 1e-6, int cg_iters = 2000);

double alpha_energy(const Image& img, const Trimap& trimap, const Image& alpha,
                    double lambda_s, double sigma_c = 0.1);

BinaryMask threshold_alpha(const Image& alpha, double tau);

struct SegmentationParams {
    int stride = 5;
    int window = 32;
    double nms_radius = -1.0;   // < 0: window / 2
    double max_link = -1.0;     // < 0: 1.8x median nearest-neighbor distance
    int thickness = 2;
    int erode_r = 1;
    int dilate_r = 3;
    double lambda_s = 100.0;
    double sigma_c = 0.1;
    double tau = 0.5;
    // Detections scoring below this fraction of the median surviving score
    // are dropped; weeds out isolated off-lattice responses. 0 disables.
    double min_rel_score = 0.5;
};

struct SegmentationResult {
    BinaryMask mask;
    bool empty = false;  // zero detections: de-fencing degenerates to identity
    std::vector<TexelDetection> detections;
    Image alpha;
};

SegmentationResult segment_fence(const Image& img, const LinearClassifier& clf,
                                 const FeatureBackend& backend,
                                 const SegmentationParams& params);

}  // namespace defence
