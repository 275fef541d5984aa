#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "favae/images.hpp"
#include "favae/tensor.hpp"

namespace favae::data {

enum class Kind { gaussian_textures, checker_mix, pnm_dir };

Kind parse_kind(std::string_view name);
const char* kind_name(Kind kind);

// count images of [channels, size, size] in [-1, 1], planar, concatenated.
// labels carry the generator's class (frequency band or checker type), or 0.
struct Dataset {
    int count = 0;
    int channels = 3;
    int size = 0;
    std::vector<float> pixels;
    std::vector<int> labels;

    std::size_t image_numel() const { return std::size_t(channels) * size * size; }
    std::span<const float> image(int i) const { return std::span<const float>(pixels).subspan(i * image_numel(), image_numel()); }

    template <typename T>
    Tensor<T> batch(std::span<const int> indices) const;
    template <typename T>
    Tensor<T> all() const;
    // Images [begin, end) as a new dataset.
    Dataset slice(int begin, int end) const;
};

// Band-limited textures: each image is a sum of random cosines whose radial
// frequency lies in one band of radial_band; label = band.
Dataset gaussian_textures(int n, int size, std::uint64_t seed);
// Low-frequency colour gradients with a period-4 patch (random phase) covering part
// of the image; label = pattern (0: checker of 2x2 blocks, 1 and 2: diagonal stripes).
// Period 4 keeps the pattern within reach of a decoder that upsamples by nearest
// neighbour: a period-2 pattern gives every latent cell the same code.
Dataset checker_mix(int n, int size, std::uint64_t seed);
// Every .pgm/.ppm file in dir (sorted by name), resized to size; at most n (0 = all).
Dataset load_pnm_dir(const std::filesystem::path& dir, int size, int n = 0);
// A single square image as a one-image dataset at its own size.
Dataset from_image(const images::Image& image);

Dataset make_dataset(Kind kind, int n, int size, std::uint64_t seed, const std::filesystem::path& dir = {});

// Batch of distinct indices, a pure function of (seed, step).
std::vector<int> batch_indices(int count, int batch, std::uint64_t seed, std::uint64_t step);

}  // namespace favae::data
