#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nvs/core/tensor.hpp"

namespace nvs::img {

// 8-bit image, channels = 1 (gray) or 3 (RGB), row-major.
struct Image8 {
    int width = 0, height = 0, channels = 0;
    std::vector<uint8_t> pixels;

    uint8_t& at(int y, int x, int c) {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    uint8_t at(int y, int x, int c) const {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
};

void write_png(const std::string& path, const Image8& image);
Image8 read_png(const std::string& path);

// [H,W,C] float in [0,1] <-> 8 bit.
Tensor to_float(const Image8& image);
Image8 to_u8(const Tensor& hwc);

// Bilinear resample of an [H,W,C] tensor.
Tensor resize_bilinear(const Tensor& hwc, int new_h, int new_w);

// [H,W,C] <-> [1,C,H,W]
Tensor hwc_to_nchw(const Tensor& hwc);
Tensor nchw_to_hwc(const Tensor& nchw);

}  // namespace nvs::img
