#pragma once

#include <array>
#include <string>
#include <vector>

namespace hpm {

struct Image {
    int width = 0, height = 0, channels = 1;
    std::vector<float> data;  // interleaved, row-major, values in [0,1]

    Image() = default;
    Image(int w, int h, int c, float fill = 0.f)
        : width(w), height(h), channels(c), data(size_t(w) * h * c, fill) {}

    bool empty() const { return width <= 0 || height <= 0; }
    float& at(int x, int y, int c = 0) { return data[(size_t(y) * width + x) * channels + c]; }
    float at(int x, int y, int c = 0) const {
        return data[(size_t(y) * width + x) * channels + c];
    }
};

// 2D similarity x' = A x + t with A = [[a, -b], [b, a]].
struct Similarity {
    double a = 1, b = 0, tx = 0, ty = 0;

    std::array<double, 2> apply(double x, double y) const {
        return {a * x - b * y + tx, b * x + a * y + ty};
    }
    Similarity inverse() const;
    Similarity compose(const Similarity& inner) const;  // this ∘ inner
    double scale() const;
    double angle() const;
};

Image load_image(const std::string& path);
void save_png(const Image& img, const std::string& path);
void save_pnm(const Image& img, const std::string& path);

Image to_gray(const Image& img);
Image flip_horizontal(const Image& img);
Image pad_image(const Image& img, int left, int top, int right, int bottom, float value = 0.f);

// Bilinear resampling with pixel-centre alignment.
Image resize_bilinear(const Image& img, int out_w, int out_h);
// Exact 2x2 box average; odd trailing rows/columns are dropped.
Image downsample2(const Image& img);

// Reflect-101 bilinear sample at continuous pixel coordinates.
float sample_reflect(const Image& img, double x, double y, int c);

// Rotates about the image centre onto an expanded canvas that holds the whole
// rotated image. Canvas pixel q samples the source at c + R(-deg) (q - c').
struct RotatedImage {
    Image image;
    double degrees = 0;
    double src_cx = 0, src_cy = 0, dst_cx = 0, dst_cy = 0;

    std::array<double, 2> to_canvas(double x, double y) const;
    std::array<double, 2> to_source(double x, double y) const;
};
RotatedImage rotate_expand(const Image& img, double degrees);

// Output pixel q samples the input at T^{-1}(q).
Image warp_similarity(const Image& img, const Similarity& t, int out_w, int out_h);

}  // namespace hpm
