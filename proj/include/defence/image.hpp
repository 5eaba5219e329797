#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace defence {

// Row-major raster of float intensities. Values loaded from file are in
// [0,1]; intermediates may leave that range but must stay finite.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, int c = 1, float fill = 0.0f)
        : width(w), height(h), channels(c),
          data(static_cast<size_t>(w) * h * c, fill) {
        if (w < 0 || h < 0 || (c != 1 && c != 3))
            throw std::invalid_argument("Image: bad dimensions");
    }

    float& at(int x, int y, int c = 0) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    float at(int x, int y, int c = 0) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
    bool same_size(const Image& o) const {
        return width == o.width && height == o.height;
    }
};

// Per-pixel boolean raster; true marks fence/occluded pixels. Acts as the
// diagonal selection operator that zeroes masked pixels.
struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> data;

    BinaryMask() = default;
    BinaryMask(int w, int h, bool fill = false)
        : width(w), height(h),
          data(static_cast<size_t>(w) * h, fill ? 1 : 0) {}

    uint8_t& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
    bool at(int x, int y) const { return data[static_cast<size_t>(y) * width + x] != 0; }
    bool get(int x, int y) const { return at(x, y); }
    void set(int x, int y, bool v) { at(x, y) = v ? 1 : 0; }
    size_t count_true() const {
        size_t n = 0;
        for (uint8_t v : data) n += (v != 0);
        return n;
    }
    bool empty_mask() const { return count_true() == 0; }
};

// Per-pixel displacement field w = (u, v), in pixels, on the reference grid.
struct FlowField {
    int width = 0;
    int height = 0;
    std::vector<float> u;
    std::vector<float> v;

    FlowField() = default;
    FlowField(int w, int h)
        : width(w), height(h),
          u(static_cast<size_t>(w) * h, 0.0f),
          v(static_cast<size_t>(w) * h, 0.0f) {}

    float& u_at(int x, int y) { return u[static_cast<size_t>(y) * width + x]; }
    float u_at(int x, int y) const { return u[static_cast<size_t>(y) * width + x]; }
    float& v_at(int x, int y) { return v[static_cast<size_t>(y) * width + x]; }
    float v_at(int x, int y) const { return v[static_cast<size_t>(y) * width + x]; }
};

// Gaussian scale-space: levels[0] is the finest (input) image, the last the
// coarsest. Consecutive dimensions follow ceil(dim * ratio).
struct Pyramid {
    std::vector<Image> levels;
    double ratio = 0.5;
};

Image to_grayscale(const Image& img);

}  // namespace defence
