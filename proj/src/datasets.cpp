#include "favae/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "favae/error.hpp"
#include "favae/images.hpp"

namespace favae::data {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

Dataset empty(int n, int size) {
    if (n < 1 || size < 1) throw ContractError("dataset: n and size must be positive");
    Dataset d;
    d.count = n;
    d.size = size;
    d.pixels.assign(std::size_t(n) * d.image_numel(), 0.0f);
    d.labels.assign(n, 0);
    return d;
}

// Gray images are replicated to three channels.
void put(Dataset& d, int i, const images::Image& img) {
    const int size = d.size;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const int src = img.channels == 1 ? 0 : std::min(c, img.channels - 1);
                d.pixels[(std::size_t(i) * 3 + c) * size * size + std::size_t(y) * size + x] = img.at(y, x, src) / 127.5f - 1.0f;
            }
}

}  // namespace

Kind parse_kind(std::string_view name) {
    if (name == "gaussian-textures") return Kind::gaussian_textures;
    if (name == "checker-mix") return Kind::checker_mix;
    if (name == "tiny-faces-pgm-dir" || name == "pnm-dir") return Kind::pnm_dir;
    throw ContractError("unknown dataset kind '" + std::string(name) + "'");
}

const char* kind_name(Kind kind) {
    switch (kind) {
        case Kind::gaussian_textures: return "gaussian-textures";
        case Kind::checker_mix: return "checker-mix";
        case Kind::pnm_dir: return "tiny-faces-pgm-dir";
    }
    return "";
}

template <typename T>
Tensor<T> Dataset::batch(std::span<const int> indices) const {
    std::vector<T> v;
    v.reserve(indices.size() * image_numel());
    for (int i : indices) {
        if (i < 0 || i >= count) throw ContractError("dataset: index out of range");
        auto img = image(i);
        v.insert(v.end(), img.begin(), img.end());
    }
    return Tensor<T>::from({static_cast<std::int64_t>(indices.size()), channels, size, size}, std::move(v));
}

template <typename T>
Tensor<T> Dataset::all() const {
    std::vector<int> idx(count);
    std::iota(idx.begin(), idx.end(), 0);
    return batch<T>(idx);
}

Dataset Dataset::slice(int begin, int end) const {
    if (begin < 0 || end > count || begin >= end) throw ContractError("dataset: bad slice");
    Dataset d;
    d.count = end - begin;
    d.channels = channels;
    d.size = size;
    d.pixels.assign(pixels.begin() + static_cast<std::ptrdiff_t>(begin * image_numel()),
                    pixels.begin() + static_cast<std::ptrdiff_t>(end * image_numel()));
    d.labels.assign(labels.begin() + begin, labels.begin() + end);
    return d;
}

Dataset gaussian_textures(int n, int size, std::uint64_t seed) {
    auto d = empty(n, size);
    const int waves = 24;
    for (int i = 0; i < n; ++i) {
        std::mt19937_64 rng(mix(seed, i));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const int band = i % 3;
        d.labels[i] = band;
        const double lo = std::max(band / 3.0, 0.05), hi = band == 2 ? 2.0 : (band + 1) / 3.0;
        for (int c = 0; c < 3; ++c) {
            std::vector<double> plane(std::size_t(size) * size, 0.0);
            for (int w = 0; w < waves; ++w) {
                double fu, fv, r;
                do {
                    fu = u(rng) - 0.5;
                    fv = u(rng) - 0.5;
                    r = std::hypot(fu, fv) / 0.5;
                } while (r < lo || r >= hi);
                const double phase = 2 * std::numbers::pi * u(rng);
                for (int y = 0; y < size; ++y)
                    for (int x = 0; x < size; ++x) plane[y * size + x] += std::cos(2 * std::numbers::pi * (fu * y + fv * x) + phase);
            }
            double sq = 0;
            for (auto v : plane) sq += v * v;
            const double s = 0.35 / std::sqrt(sq / plane.size() + 1e-12);
            for (int k = 0; k < size * size; ++k) {
                d.pixels[(std::size_t(i) * 3 + c) * size * size + k] = static_cast<float>(std::clamp(plane[k] * s, -1.0, 1.0));
            }
        }
    }
    return d;
}

Dataset checker_mix(int n, int size, std::uint64_t seed) {
    auto d = empty(n, size);
    for (int i = 0; i < n; ++i) {
        std::mt19937_64 rng(mix(seed ^ 0xC4EC4E5ull, i));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const int pattern = i % 3;
        d.labels[i] = pattern;
        const double angle = 2 * std::numbers::pi * u(rng);
        const double gx = std::cos(angle), gy = std::sin(angle);
        // Patch covering between a third and all of each side.
        const int pw = size / 3 + static_cast<int>(u(rng) * (size - size / 3)), ph = size / 3 + static_cast<int>(u(rng) * (size - size / 3));
        const int px = static_cast<int>(u(rng) * (size - pw + 1)), py = static_cast<int>(u(rng) * (size - ph + 1));
        const double amp = 0.35 + 0.25 * u(rng);
        const int ox = static_cast<int>(u(rng) * 4), oy = static_cast<int>(u(rng) * 4);
        for (int c = 0; c < 3; ++c) {
            const double base = 0.6 * (u(rng) - 0.5), slope = 0.5 * (u(rng) - 0.5);
            const double sign = u(rng) < 0.5 ? -1.0 : 1.0;
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const double t = ((x - size / 2.0) * gx + (y - size / 2.0) * gy) / size;
                    double v = base + slope * 2 * t;
                    if (x >= px && x < px + pw && y >= py && y < py + ph) {
                        const int a = x + ox, b = y + oy;
                        const int parity = pattern == 0 ? (a / 2 + b / 2) % 2 : pattern == 1 ? ((a + b) / 2) % 2 : ((a - b + 2 * size) / 2) % 2;
                        v += sign * amp * (parity ? 1.0 : -1.0);
                    }
                    d.pixels[(std::size_t(i) * 3 + c) * size * size + y * size + x] = static_cast<float>(std::clamp(v, -1.0, 1.0));
                }
        }
    }
    return d;
}

Dataset load_pnm_dir(const std::filesystem::path& dir, int size, int n) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) throw IoError("dataset directory not found: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto ext = entry.path().extension().string();
        if (entry.is_regular_file() && (ext == ".pgm" || ext == ".ppm" || ext == ".pnm")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (n > 0 && static_cast<int>(files.size()) > n) files.resize(n);
    if (files.empty()) throw IoError("no PGM/PPM files in " + dir.string());
    auto d = empty(static_cast<int>(files.size()), size);
    for (std::size_t i = 0; i < files.size(); ++i) put(d, static_cast<int>(i), images::resize(images::read_pnm(files[i]), size, size));
    return d;
}

Dataset from_image(const images::Image& image) {
    if (image.width != image.height) throw DimensionError("image must be square");
    auto d = empty(1, image.width);
    put(d, 0, image);
    return d;
}

Dataset make_dataset(Kind kind, int n, int size, std::uint64_t seed, const std::filesystem::path& dir) {
    switch (kind) {
        case Kind::gaussian_textures: return gaussian_textures(n, size, seed);
        case Kind::checker_mix: return checker_mix(n, size, seed);
        case Kind::pnm_dir: return load_pnm_dir(dir, size, n);
    }
    throw ContractError("unknown dataset kind");
}

std::vector<int> batch_indices(int count, int batch, std::uint64_t seed, std::uint64_t step) {
    if (count < 1 || batch < 1) throw ContractError("batch_indices: count and batch must be positive");
    std::mt19937_64 rng(mix(seed ^ 0xBA7C4ull, step));
    std::vector<int> idx(count);
    std::iota(idx.begin(), idx.end(), 0);
    const int take = std::min(batch, count);
    for (int i = 0; i < take; ++i) {
        std::uniform_int_distribution<int> pick(i, count - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(take);
    return idx;
}

template Tensor<float> Dataset::batch<float>(std::span<const int>) const;
template Tensor<double> Dataset::batch<double>(std::span<const int>) const;
template Tensor<float> Dataset::all<float>() const;
template Tensor<double> Dataset::all<double>() const;

}  // namespace favae::data
