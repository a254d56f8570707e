#ifndef FPRECT_IMAGE_HPP
#define FPRECT_IMAGE_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "fprect/errors.hpp"

namespace fprect {

using Vec2 = Eigen::Vector2d;

// Grayscale image, intensities in [0,1], row-major doubles. Quantization to
// 8 bits happens only at the PGM file boundary.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, double fill = 0.0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

    double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return data.size(); }
};

// Boolean foreground mask with the dimensions of the image it came from.
struct PixelMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
    std::size_t count() const;
};

Image load_pgm(const std::string& path);
void save_pgm(const Image& img, const std::string& path);

// Bilinear interpolation; coordinates outside [0,w-1]x[0,h-1] return `fill`.
double sample_bilinear(const Image& img, double x, double y, double fill);

// output(p) = sample_bilinear(img, map(p), fill). `map` takes and returns
// pixel coordinates as Vec2 (x, y).
template <typename MapFn>
Image warp_backward(const Image& img, MapFn&& map, double fill, int out_w, int out_h) {
    Image out(out_w, out_h);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            const Vec2 s = map(Vec2(static_cast<double>(x), static_cast<double>(y)));
            out.at(x, y) = sample_bilinear(img, s.x(), s.y(), fill);
        }
    }
    return out;
}

template <typename MapFn>
Image warp_backward(const Image& img, MapFn&& map, double fill) {
    return warp_backward(img, std::forward<MapFn>(map), fill, img.width, img.height);
}

// Foreground = pixels whose local 16x16 window variance exceeds 0.01.
// The window sum runs in window-relative order, so the mask is exactly
// translation-equivariant away from borders.
PixelMask foreground_mask(const Image& img);

// Center the mask's center of mass, scale its larger bounding-box side
// (in pixels, max-min+1) to 0.9*out_size, resample to out_size x out_size.
Image preprocess(const Image& img, int out_size);

// Mask geometry used by preprocess; exposed for reuse and tests.
struct MaskStats {
    Vec2 center_of_mass;
    int x_min, x_max, y_min, y_max;
    int larger_side; // max(x extent, y extent), in pixels
};
MaskStats mask_stats(const PixelMask& mask);

} // namespace fprect

#endif
