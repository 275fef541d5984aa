#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace favae::images {

// 8-bit interleaved image; channels is 1 (P5) or 3 (P6).
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t& at(int y, int x, int c) { return pixels[(std::size_t(y) * width + x) * channels + c]; }
    std::uint8_t at(int y, int x, int c) const { return pixels[(std::size_t(y) * width + x) * channels + c]; }
};

// Binary PGM/PPM with maxval 255. Comments in the header are skipped.
Image read_pnm(const std::filesystem::path& path);
Image parse_pnm(const std::string& bytes);
void write_pnm(const std::filesystem::path& path, const Image& image);
std::string encode_pnm(const Image& image);

// Planar values in [-1, 1] (or [0, 1] for maps) to 8-bit, rounding and clamping.
Image from_planar(const float* data, int channels, int height, int width, float lo, float hi);
template <typename T>
Image from_planar(const std::vector<T>& data, int channels, int height, int width, float lo, float hi) {
    std::vector<float> f(data.begin(), data.end());
    return from_planar(f.data(), channels, height, width, lo, hi);
}

// Bilinear resize sampling at pixel centres.
Image resize(const Image& image, int width, int height);

// Tiles equally sized images into rows of `columns`, with a 1 pixel gap.
Image grid(const std::vector<Image>& tiles, int columns);

}  // namespace favae::images
