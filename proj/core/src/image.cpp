#include "blocksplat/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "blocksplat/errors.hpp"

namespace blocksplat {

std::vector<uint8_t> quantize(const Image& img) {
    std::vector<uint8_t> out(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i) {
        const double v = std::clamp(img.data[i], 0.0, 1.0);
        out[i] = static_cast<uint8_t>(std::lround(255.0 * v));
    }
    return out;
}

Image dequantize(const std::vector<uint8_t>& bytes, uint32_t width, uint32_t height) {
    if (bytes.size() != static_cast<size_t>(3) * width * height)
        throw InvalidArgument("byte buffer does not match image dimensions");
    Image img(width, height);
    for (size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
    return img;
}

void save_ppm(const std::string& path, const Image& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << "P6\n" << img.width << " " << img.height << "\n255\n";
    const std::vector<uint8_t> bytes = quantize(img);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

namespace {

// Reads one PPM header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {}
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

} // namespace

Image load_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for read: " + path);
    if (next_token(f) != "P6") throw FormatError(FormatErrorCode::BadMagic, "not a P6 ppm: " + path);
    unsigned long w = 0, h = 0, maxval = 0;
    try {
        w = std::stoul(next_token(f));
        h = std::stoul(next_token(f));
        maxval = std::stoul(next_token(f));
    } catch (const std::exception&) {
        throw FormatError(FormatErrorCode::BadHeader, "malformed ppm header: " + path);
    }
    if (maxval != 255) throw FormatError(FormatErrorCode::UnsupportedVersion, "ppm maxval must be 255");
    // The header terminator is the single whitespace byte next_token consumed.
    std::vector<uint8_t> bytes(static_cast<size_t>(3) * w * h);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<size_t>(f.gcount()) != bytes.size())
        throw FormatError(FormatErrorCode::TruncatedBuffer, "ppm pixel data truncated: " + path);
    return dequantize(bytes, static_cast<uint32_t>(w), static_cast<uint32_t>(h));
}

} // namespace blocksplat
