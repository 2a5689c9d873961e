#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace blocksplat {

// Interleaved RGB image, values nominally in [0, 1] but not clamped until
// quantization.
struct Image {
    uint32_t width = 0;
    uint32_t height = 0;
    std::vector<double> data; // 3 * width * height, row-major RGB

    Image() = default;
    Image(uint32_t w, uint32_t h, double fill = 0.0)
        : width(w), height(h), data(static_cast<size_t>(3) * w * h, fill) {}

    double& at(uint32_t x, uint32_t y, int c) { return data[3 * (static_cast<size_t>(y) * width + x) + c]; }
    double at(uint32_t x, uint32_t y, int c) const {
        return data[3 * (static_cast<size_t>(y) * width + x) + c];
    }
    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

// round(255 * clamp(v, 0, 1)) per channel.
std::vector<uint8_t> quantize(const Image& img);

// Inverse of quantize up to rounding: byte / 255.
Image dequantize(const std::vector<uint8_t>& bytes, uint32_t width, uint32_t height);

// Binary PPM (P6), maxval 255. Throws FormatError on malformed input and
// std::runtime_error on I/O failure.
void save_ppm(const std::string& path, const Image& img);
Image load_ppm(const std::string& path);

} // namespace blocksplat
