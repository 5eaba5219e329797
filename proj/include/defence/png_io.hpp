#pragma once

#include "defence/image.hpp"

#include <string>

namespace defence {

// 8-bit gray and RGB PNG; intensities divided by 255 on load.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

// Masks serialize as 8-bit gray PNG, 0 = false, 255 = true. Any nonzero
// pixel reads back as true.
BinaryMask read_mask_png(const std::string& path);
void write_mask_png(const std::string& path, const BinaryMask& mask);

}  // namespace defence
