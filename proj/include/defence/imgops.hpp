#pragma once

#include "defence/image.hpp"

#include <utility>

namespace defence {

// Gaussian blur + resample chain; levels generated until the next level
// would drop below min_dim on either axis. Blur sigma is derived from the
// ratio (0.6 * sqrt(1/ratio^2 - 1)).
Pyramid gaussian_pyramid(const Image& img, double ratio, int min_dim);

Image gaussian_blur(const Image& img, double sigma);
Image resample(const Image& img, int new_w, int new_h);

struct WarpResult {
    Image image;
    BinaryMask invalid;  // true where the bilinear footprint left the image
};

// Backward warp: out(x,y) = bilinear sample of img at (x+u, y+v). Samples
// whose footprint falls outside the image are zeroed and flagged.
WarpResult warp_image(const Image& img, const FlowField& flow);

// Central differences, replicate boundary. Single-channel input.
std::pair<Image, Image> image_gradients(const Image& img);

// Disk structuring element of the given radius; radius 0 is identity.
BinaryMask erode(const BinaryMask& mask, int radius);
BinaryMask dilate(const BinaryMask& mask, int radius);

// True exactly at true-pixels with at least one false 4-neighbor inside the
// image.
BinaryMask boundary_edges(const BinaryMask& mask);

}  // namespace defence
