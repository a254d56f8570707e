#include "fprect/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace fprect {

std::size_t PixelMask::count() const {
    return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(),
                                                  [](std::uint8_t b) { return b != 0; }));
}

namespace {

// Reads one PGM header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
    std::string tok;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = in.get();
    }
    return tok;
}

int parse_dim(const std::string& tok, const char* field, const std::string& path) {
    if (tok.empty())
        throw ParseError("pgm: missing " + std::string(field) + " in " + path);
    for (char c : tok)
        if (!std::isdigit(static_cast<unsigned char>(c)))
            throw ParseError("pgm: bad " + std::string(field) + " '" + tok + "' in " + path);
    long v = std::strtol(tok.c_str(), nullptr, 10);
    if (v <= 0 || v > 1 << 20)
        throw ParseError("pgm: bad " + std::string(field) + " '" + tok + "' in " + path);
    return static_cast<int>(v);
}

} // namespace

Image load_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);

    std::string magic = next_token(in);
    if (magic != "P5")
        throw ParseError("pgm: magic '" + magic + "' is not P5 in " + path);

    const int w = parse_dim(next_token(in), "width", path);
    const int h = parse_dim(next_token(in), "height", path);
    const std::string maxval = next_token(in);
    if (maxval != "255")
        throw ParseError("pgm: unsupported maxval '" + maxval + "' in " + path);
    // next_token consumed the single whitespace byte after the maxval.

    std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
        throw ParseError("pgm: payload truncated in " + path);

    Image img(w, h);
    for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / 255.0;
    return img;
}

void save_pgm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");

    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    std::vector<std::uint8_t> raw(img.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double v = std::floor(img.data[i] * 255.0 + 0.5); // round half up
        raw[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("write failed for " + path);
}

double sample_bilinear(const Image& img, double x, double y, double fill) {
    // Coordinates a rounding error outside the frame clamp to the border so
    // numerically-identity maps stay identities.
    constexpr double kEdgeTol = 1e-9;
    if (x < 0.0 || y < 0.0 || x > img.width - 1.0 || y > img.height - 1.0) {
        if (x < -kEdgeTol || y < -kEdgeTol || x > img.width - 1.0 + kEdgeTol ||
            y > img.height - 1.0 + kEdgeTol)
            return fill;
        x = std::clamp(x, 0.0, img.width - 1.0);
        y = std::clamp(y, 0.0, img.height - 1.0);
    }
    const int x0 = static_cast<int>(x);
    const int y0 = static_cast<int>(y);
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const double top = img.at(x0, y0) * (1.0 - fx) + img.at(x1, y0) * fx;
    const double bot = img.at(x0, y1) * (1.0 - fx) + img.at(x1, y1) * fx;
    return top * (1.0 - fy) + bot * fy;
}

namespace {
constexpr int kWindow = 16;      // local variance window
constexpr double kVarThreshold = 0.01;
} // namespace

PixelMask foreground_mask(const Image& img) {
    PixelMask mask;
    mask.width = img.width;
    mask.height = img.height;
    mask.bits.assign(img.size(), 0);

    const int lo = kWindow / 2 - 1; // window spans [p-7, p+8]
    for (int y = 0; y < img.height; ++y) {
        const int y0 = std::max(0, y - lo);
        const int y1 = std::min(img.height - 1, y + kWindow - 1 - lo);
        for (int x = 0; x < img.width; ++x) {
            const int x0 = std::max(0, x - lo);
            const int x1 = std::min(img.width - 1, x + kWindow - 1 - lo);
            // Fixed window-relative summation order keeps the result
            // bit-identical under integer translations of the content.
            double s = 0.0, s2 = 0.0;
            for (int wy = y0; wy <= y1; ++wy)
                for (int wx = x0; wx <= x1; ++wx) {
                    const double v = img.at(wx, wy);
                    s += v;
                    s2 += v * v;
                }
            const double n = static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1));
            const double var = s2 / n - (s / n) * (s / n);
            if (var > kVarThreshold) mask.bits[static_cast<std::size_t>(y) * img.width + x] = 1;
        }
    }
    return mask;
}

MaskStats mask_stats(const PixelMask& mask) {
    MaskStats st{};
    st.x_min = mask.width;
    st.y_min = mask.height;
    st.x_max = -1;
    st.y_max = -1;
    double sx = 0.0, sy = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(x, y)) {
                sx += x;
                sy += y;
                ++n;
                st.x_min = std::min(st.x_min, x);
                st.x_max = std::max(st.x_max, x);
                st.y_min = std::min(st.y_min, y);
                st.y_max = std::max(st.y_max, y);
            }
    if (n == 0) throw PreprocessError("empty foreground: reject this sample");
    st.center_of_mass = Vec2(sx / static_cast<double>(n), sy / static_cast<double>(n));
    st.larger_side = std::max(st.x_max - st.x_min + 1, st.y_max - st.y_min + 1);
    return st;
}

Image preprocess(const Image& img, int out_size) {
    if (out_size < 2) throw ArgumentError("preprocess: out_size must be >= 2");
    const MaskStats st = mask_stats(foreground_mask(img));

    const double scale = 0.9 * out_size / static_cast<double>(st.larger_side);
    const Vec2 out_center((out_size - 1) / 2.0, (out_size - 1) / 2.0);
    const Vec2 com = st.center_of_mass;

    return warp_backward(
        img,
        [&](const Vec2& p) -> Vec2 { return com + (p - out_center) / scale; },
        1.0, out_size, out_size);
}

} // namespace fprect
