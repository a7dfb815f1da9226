#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coherent/tensor.hpp"

namespace coherent {

// 8-bit interleaved image, channels = 1 (gray) or 3 (RGB).
struct ImageU8 {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;  // row-major, interleaved

    ImageU8() = default;
    ImageU8(int w, int h, int c)
        : width(w), height(h), channels(c),
          pixels(static_cast<std::size_t>(w) * h * c, 0) {}

    std::uint8_t& at(int y, int x, int c) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::uint8_t at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

// PNG I/O (8-bit, non-interlaced). Reader accepts gray, gray+alpha, RGB and
// RGBA and returns gray or RGB; writer emits gray or RGB.
ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& img);

// Image (CHW, [0,1]) <-> ImageU8 conversions.
Tensor image_to_tensor(const ImageU8& img);              // channels x H x W in [0,1]
ImageU8 tensor_to_image(const Tensor& t);                // clamps to [0,1]

// Bilinear resize of a CHW tensor to (out_h, out_w).
Tensor resize_bilinear(const Tensor& src, int out_h, int out_w);

// Binary mask helpers. Masks are rank-2 tensors with values in {0,1}.
Tensor mask_from_image(const ImageU8& img);              // binarize at 0.5
ImageU8 mask_to_image(const Tensor& mask);               // 0/255 single channel

// Area-average downsampling of a rank-2 map to (out_h, out_w); preserves the
// mean exactly because every output cell covers the same source area.
Tensor downsample_area(const Tensor& src, int out_h, int out_w);

}  // namespace coherent
