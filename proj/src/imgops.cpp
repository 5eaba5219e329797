#include "defence/imgops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace defence {

Image to_grayscale(const Image& img) {
    if (img.channels == 1) return img;
    Image out(img.width, img.height, 1);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            out.at(x, y) = 0.299f * img.at(x, y, 0) + 0.587f * img.at(x, y, 1) +
                           0.114f * img.at(x, y, 2);
    return out;
}

Image gaussian_blur(const Image& img, double sigma) {
    if (sigma <= 0.0) return img;
    int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<float> kernel(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double w = std::exp(-0.5 * i * i / (sigma * sigma));
        kernel[i + radius] = static_cast<float>(w);
        sum += w;
    }
    for (auto& k : kernel) k = static_cast<float>(k / sum);

    auto clampi = [](int v, int lo, int hi) { return std::max(lo, std::min(hi, v)); };

    Image tmp(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                float acc = 0.0f;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[i + radius] *
                           img.at(clampi(x + i, 0, img.width - 1), y, c);
                tmp.at(x, y, c) = acc;
            }
    Image out(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                float acc = 0.0f;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[i + radius] *
                           tmp.at(x, clampi(y + i, 0, img.height - 1), c);
                out.at(x, y, c) = acc;
            }
    return out;
}

static float sample_bilinear_clamped(const Image& img, float sx, float sy, int c) {
    sx = std::clamp(sx, 0.0f, static_cast<float>(img.width - 1));
    sy = std::clamp(sy, 0.0f, static_cast<float>(img.height - 1));
    int x0 = static_cast<int>(std::floor(sx));
    int y0 = static_cast<int>(std::floor(sy));
    int x1 = std::min(x0 + 1, img.width - 1);
    int y1 = std::min(y0 + 1, img.height - 1);
    float fx = sx - x0, fy = sy - y0;
    return (1 - fx) * (1 - fy) * img.at(x0, y0, c) + fx * (1 - fy) * img.at(x1, y0, c) +
           (1 - fx) * fy * img.at(x0, y1, c) + fx * fy * img.at(x1, y1, c);
}

Image resample(const Image& img, int new_w, int new_h) {
    Image out(new_w, new_h, img.channels);
    float sx_ratio = static_cast<float>(img.width) / new_w;
    float sy_ratio = static_cast<float>(img.height) / new_h;
    for (int y = 0; y < new_h; ++y)
        for (int x = 0; x < new_w; ++x) {
            float sx = (x + 0.5f) * sx_ratio - 0.5f;
            float sy = (y + 0.5f) * sy_ratio - 0.5f;
            for (int c = 0; c < img.channels; ++c)
                out.at(x, y, c) = sample_bilinear_clamped(img, sx, sy, c);
        }
    return out;
}

Pyramid gaussian_pyramid(const Image& img, double ratio, int min_dim) {
    if (ratio < 0.25 || ratio > 0.9)
        throw std::invalid_argument("gaussian_pyramid: ratio out of [0.25, 0.9]");
    if (min_dim < 16)
        throw std::invalid_argument("gaussian_pyramid: min_dim < 16");
    Pyramid pyr;
    pyr.ratio = ratio;
    pyr.levels.push_back(img);
    double sigma = 0.6 * std::sqrt(1.0 / (ratio * ratio) - 1.0);
    while (true) {
        const Image& cur = pyr.levels.back();
        int nw = static_cast<int>(std::ceil(cur.width * ratio));
        int nh = static_cast<int>(std::ceil(cur.height * ratio));
        if (nw < min_dim || nh < min_dim) break;
        pyr.levels.push_back(resample(gaussian_blur(cur, sigma), nw, nh));
    }
    return pyr;
}

WarpResult warp_image(const Image& img, const FlowField& flow) {
    if (flow.width != img.width || flow.height != img.height)
        throw std::invalid_argument("warp_image: dimension mismatch");
    WarpResult res{Image(img.width, img.height, img.channels),
                   BinaryMask(img.width, img.height)};
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            float sx = x + flow.u_at(x, y);
            float sy = y + flow.v_at(x, y);
            if (sx < 0.0f || sx > img.width - 1 || sy < 0.0f || sy > img.height - 1) {
                res.invalid.set(x, y, true);
                continue;
            }
            int x0 = static_cast<int>(std::floor(sx));
            int y0 = static_cast<int>(std::floor(sy));
            int x1 = std::min(x0 + 1, img.width - 1);
            int y1 = std::min(y0 + 1, img.height - 1);
            float fx = sx - x0, fy = sy - y0;
            for (int c = 0; c < img.channels; ++c)
                res.image.at(x, y, c) =
                    (1 - fx) * (1 - fy) * img.at(x0, y0, c) +
                    fx * (1 - fy) * img.at(x1, y0, c) +
                    (1 - fx) * fy * img.at(x0, y1, c) + fx * fy * img.at(x1, y1, c);
        }
    return res;
}

std::pair<Image, Image> image_gradients(const Image& img) {
    if (img.channels != 1)
        throw std::invalid_argument("image_gradients: single channel expected");
    Image gx(img.width, img.height, 1), gy(img.width, img.height, 1);
    auto clampi = [](int v, int lo, int hi) { return std::max(lo, std::min(hi, v)); };
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            gx.at(x, y) = 0.5f * (img.at(clampi(x + 1, 0, img.width - 1), y) -
                                  img.at(clampi(x - 1, 0, img.width - 1), y));
            gy.at(x, y) = 0.5f * (img.at(x, clampi(y + 1, 0, img.height - 1)) -
                                  img.at(x, clampi(y - 1, 0, img.height - 1)));
        }
    return {gx, gy};
}

static std::vector<std::pair<int, int>> disk_offsets(int radius) {
    std::vector<std::pair<int, int>> offs;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dx * dx + dy * dy <= radius * radius) offs.emplace_back(dx, dy);
    return offs;
}

BinaryMask dilate(const BinaryMask& mask, int radius) {
    if (radius <= 0) return mask;
    auto offs = disk_offsets(radius);
    BinaryMask out(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            for (auto [dx, dy] : offs) {
                int nx = x + dx, ny = y + dy;
                if (nx >= 0 && nx < mask.width && ny >= 0 && ny < mask.height)
                    out.set(nx, ny, true);
            }
        }
    return out;
}

BinaryMask erode(const BinaryMask& mask, int radius) {
    if (radius <= 0) return mask;
    auto offs = disk_offsets(radius);
    BinaryMask out(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            bool all = true;
            for (auto [dx, dy] : offs) {
                int nx = x + dx, ny = y + dy;
                if (nx < 0 || nx >= mask.width || ny < 0 || ny >= mask.height ||
                    !mask.at(nx, ny)) {
                    all = false;
                    break;
                }
            }
            out.set(x, y, all);
        }
    return out;
}

BinaryMask boundary_edges(const BinaryMask& mask) {
    BinaryMask out(mask.width, mask.height);
    static const int nx4[] = {1, -1, 0, 0};
    static const int ny4[] = {0, 0, 1, -1};
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            for (int k = 0; k < 4; ++k) {
                int nx = x + nx4[k], ny = y + ny4[k];
                if (nx >= 0 && nx < mask.width && ny >= 0 && ny < mask.height &&
                    !mask.at(nx, ny)) {
                    out.set(x, y, true);
                    break;
                }
            }
        }
    return out;
}

}  // namespace defence
