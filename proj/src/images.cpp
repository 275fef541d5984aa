#include "favae/images.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "favae/error.hpp"

namespace favae::images {

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string token(const std::string& bytes, std::size_t& pos) {
    while (pos < bytes.size()) {
        if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
            ++pos;
        } else if (bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else {
            break;
        }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
}

int header_int(const std::string& bytes, std::size_t& pos, const char* what) {
    const auto t = token(bytes, pos);
    if (t.empty() || !std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }) ||
        t.size() > 6) {
        throw IoError(std::string("pnm: malformed ") + what);
    }
    return std::stoi(t);
}

}  // namespace

Image parse_pnm(const std::string& bytes) {
    std::size_t pos = 0;
    const auto magic = token(bytes, pos);
    Image img;
    if (magic == "P5") {
        img.channels = 1;
    } else if (magic == "P6") {
        img.channels = 3;
    } else {
        throw IoError("pnm: unsupported magic '" + magic.substr(0, 8) + "'");
    }
    img.width = header_int(bytes, pos, "width");
    img.height = header_int(bytes, pos, "height");
    const int maxval = header_int(bytes, pos, "maxval");
    if (img.width < 1 || img.height < 1) throw IoError("pnm: empty image");
    if (maxval != 255) throw IoError("pnm: only maxval 255 is supported");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) throw IoError("pnm: truncated header");
    ++pos;
    const std::size_t n = std::size_t(img.width) * img.height * img.channels;
    if (bytes.size() - pos < n) throw IoError("pnm: truncated pixel data");
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
    return img;
}

Image read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_pnm(ss.str());
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

std::string encode_pnm(const Image& image) {
    if (image.channels != 1 && image.channels != 3) throw ContractError("pnm: channels must be 1 or 3");
    if (image.pixels.size() != std::size_t(image.width) * image.height * image.channels) {
        throw ContractError("pnm: pixel buffer size mismatch");
    }
    std::string out = (image.channels == 1 ? "P5\n" : "P6\n") + std::to_string(image.width) + " " +
                      std::to_string(image.height) + "\n255\n";
    out.append(image.pixels.begin(), image.pixels.end());
    return out;
}

void write_pnm(const std::filesystem::path& path, const Image& image) {
    const auto bytes = encode_pnm(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

Image from_planar(const float* data, int channels, int height, int width, float lo, float hi) {
    Image img;
    img.width = width;
    img.height = height;
    img.channels = channels;
    img.pixels.resize(std::size_t(width) * height * channels);
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                const float v = (data[(std::size_t(c) * height + y) * width + x] - lo) / (hi - lo);
                img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0f), 0L, 255L));
            }
    return img;
}

Image resize(const Image& image, int width, int height) {
    if (image.width == width && image.height == height) return image;
    Image out;
    out.width = width;
    out.height = height;
    out.channels = image.channels;
    out.pixels.resize(std::size_t(width) * height * image.channels);
    const double sx = double(image.width) / width, sy = double(image.height) / height;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(image.width - 1));
            const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(image.height - 1));
            const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
            const int x1 = std::min(x0 + 1, image.width - 1), y1 = std::min(y0 + 1, image.height - 1);
            const double ax = fx - x0, ay = fy - y0;
            for (int c = 0; c < image.channels; ++c) {
                const double v = (1 - ay) * ((1 - ax) * image.at(y0, x0, c) + ax * image.at(y0, x1, c)) +
                                 ay * ((1 - ax) * image.at(y1, x0, c) + ax * image.at(y1, x1, c));
                out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    return out;
}

Image grid(const std::vector<Image>& tiles, int columns) {
    if (tiles.empty()) throw ContractError("grid: no tiles");
    const int w = tiles[0].width, h = tiles[0].height, ch = tiles[0].channels;
    const int cols = std::min<int>(columns, static_cast<int>(tiles.size()));
    const int rows = (static_cast<int>(tiles.size()) + cols - 1) / cols;
    Image out;
    out.width = cols * (w + 1) - 1;
    out.height = rows * (h + 1) - 1;
    out.channels = ch;
    out.pixels.assign(std::size_t(out.width) * out.height * ch, 0);
    for (std::size_t t = 0; t < tiles.size(); ++t) {
        const auto& tile = tiles[t];
        if (tile.width != w || tile.height != h || tile.channels != ch) throw ContractError("grid: tiles differ in size");
        const int ox = static_cast<int>(t % cols) * (w + 1), oy = static_cast<int>(t / cols) * (h + 1);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < ch; ++c) out.at(oy + y, ox + x, c) = tile.at(y, x, c);
    }
    return out;
}

}  // namespace favae::images
