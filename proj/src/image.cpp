#include "hpm/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "hpm/common.hpp"

namespace hpm {

Similarity Similarity::inverse() const {
    double d = a * a + b * b;
    if (d <= 0) throw DomainError("similarity is singular");
    Similarity r;
    r.a = a / d;
    r.b = -b / d;
    auto t = r.apply(tx, ty);
    r.tx = -t[0];
    r.ty = -t[1];
    return r;
}

Similarity Similarity::compose(const Similarity& in) const {
    Similarity r;
    r.a = a * in.a - b * in.b;
    r.b = a * in.b + b * in.a;
    auto t = apply(in.tx, in.ty);
    r.tx = t[0];
    r.ty = t[1];
    return r;
}

double Similarity::scale() const { return std::hypot(a, b); }
double Similarity::angle() const { return std::atan2(b, a); }

namespace {

std::string lower_ext(const std::string& path) {
    auto dot = path.find_last_of('.');
    if (dot == std::string::npos) return "";
    std::string e = path.substr(dot + 1);
    for (auto& c : e) c = char(std::tolower(c));
    return e;
}

Image load_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw DataError("cannot open image: " + path);
    std::unique_ptr<FILE, int (*)(FILE*)> guard(fp, &std::fclose);
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8))
        throw FormatError("not a PNG file: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw DataError("libpng init failed");
    Image img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("corrupt PNG file: " + path);
    }
    png_init_io(png, fp);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (depth == 16) png_set_swap(png);
    png_read_update_info(png, info);
    int w = int(png_get_image_width(png, info));
    int h = int(png_get_image_height(png, info));
    int ch = int(png_get_channels(png, info));
    int bd = png_get_bit_depth(png, info);
    size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<unsigned char> buf(rowbytes * h);
    rows.resize(h);
    for (int y = 0; y < h; ++y) rows[y] = buf.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    int out_ch = ch >= 3 ? 3 : 1;
    img = Image(w, h, out_ch);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < out_ch; ++c) {
                size_t i = size_t(x) * ch + c;
                float v;
                if (bd == 16) {
                    uint16_t s;
                    std::memcpy(&s, rows[y] + 2 * i, 2);
                    v = float(s) / 65535.f;
                } else {
                    v = float(rows[y][i]) / 255.f;
                }
                img.at(x, y, c) = v;
            }
        }
    }
    return img;
}

int pnm_int(std::istream& in, const std::string& path) {
    int c;
    while ((c = in.peek()) != EOF) {
        if (std::isspace(c)) {
            in.get();
        } else if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else {
            break;
        }
    }
    int v;
    if (!(in >> v) || v < 0) throw FormatError("corrupt PNM header: " + path);
    return v;
}

Image load_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image: " + path);
    char p, kind;
    if (!in.get(p) || !in.get(kind) || p != 'P') throw FormatError("not a PNM file: " + path);
    int ch;
    bool ascii;
    switch (kind) {
        case '2': ch = 1, ascii = true; break;
        case '3': ch = 3, ascii = true; break;
        case '5': ch = 1, ascii = false; break;
        case '6': ch = 3, ascii = false; break;
        default: throw FormatError("unsupported PNM type: " + path);
    }
    int w = pnm_int(in, path), h = pnm_int(in, path), maxv = pnm_int(in, path);
    if (w < 1 || h < 1 || maxv < 1 || maxv > 65535) throw FormatError("bad PNM dimensions: " + path);
    Image img(w, h, ch);
    const size_t n = size_t(w) * h * ch;
    if (ascii) {
        for (size_t i = 0; i < n; ++i) {
            int v;
            if (!(in >> v)) throw FormatError("truncated PNM data: " + path);
            img.data[i] = std::clamp(float(v) / maxv, 0.f, 1.f);
        }
    } else {
        in.get();
        int bpp = maxv > 255 ? 2 : 1;
        std::vector<unsigned char> buf(n * bpp);
        if (!in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size())))
            throw FormatError("truncated PNM data: " + path);
        for (size_t i = 0; i < n; ++i) {
            int v = bpp == 2 ? (buf[2 * i] << 8 | buf[2 * i + 1]) : buf[i];
            img.data[i] = std::clamp(float(v) / maxv, 0.f, 1.f);
        }
    }
    return img;
}

}  // namespace

Image load_image(const std::string& path) {
    std::string e = lower_ext(path);
    if (e == "png") return load_png(path);
    if (e == "pgm" || e == "ppm" || e == "pnm") return load_pnm(path);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image: " + path);
    char head[2] = {0, 0};
    in.read(head, 2);
    if (head[0] == 'P') return load_pnm(path);
    return load_png(path);
}

void save_png(const Image& img, const std::string& path) {
    if (img.empty() || (img.channels != 1 && img.channels != 3))
        throw DomainError("save_png: unsupported image");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw DataError("cannot write image: " + path);
    std::unique_ptr<FILE, int (*)(FILE*)> guard(fp, &std::fclose);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("PNG write failed: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, img.width, img.height, 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(size_t(img.width) * img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (size_t i = 0; i < row.size(); ++i) {
            float v = img.data[size_t(y) * row.size() + i];
            row[i] = (unsigned char)std::lround(std::clamp(v, 0.f, 1.f) * 255.f);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void save_pnm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write image: " + path);
    out << (img.channels == 3 ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n255\n";
    for (float v : img.data) out.put(char((unsigned char)std::lround(std::clamp(v, 0.f, 1.f) * 255.f)));
}

Image to_gray(const Image& img) {
    if (img.channels == 1) return img;
    Image g(img.width, img.height, 1);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            g.at(x, y) = 0.299f * img.at(x, y, 0) + 0.587f * img.at(x, y, 1) + 0.114f * img.at(x, y, 2);
    return g;
}

Image flip_horizontal(const Image& img) {
    Image r(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) r.at(img.width - 1 - x, y, c) = img.at(x, y, c);
    return r;
}

Image pad_image(const Image& img, int left, int top, int right, int bottom, float value) {
    Image r(img.width + left + right, img.height + top + bottom, img.channels, value);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) r.at(x + left, y + top, c) = img.at(x, y, c);
    return r;
}

Image resize_bilinear(const Image& img, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) throw DomainError("resize: empty output");
    Image r(out_w, out_h, img.channels);
    const double sx = double(img.width) / out_w, sy = double(img.height) / out_h;
    for (int y = 0; y < out_h; ++y) {
        double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(img.height - 1));
        int y0 = int(fy);
        int y1 = std::min(y0 + 1, img.height - 1);
        double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(img.width - 1));
            int x0 = int(fx);
            int x1 = std::min(x0 + 1, img.width - 1);
            double wx = fx - x0;
            for (int c = 0; c < img.channels; ++c) {
                double top = img.at(x0, y0, c) * (1 - wx) + img.at(x1, y0, c) * wx;
                double bot = img.at(x0, y1, c) * (1 - wx) + img.at(x1, y1, c) * wx;
                r.at(x, y, c) = float(top * (1 - wy) + bot * wy);
            }
        }
    }
    return r;
}

Image downsample2(const Image& img) {
    Image r(img.width / 2, img.height / 2, img.channels);
    for (int y = 0; y < r.height; ++y)
        for (int x = 0; x < r.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                r.at(x, y, c) = 0.25f * (img.at(2 * x, 2 * y, c) + img.at(2 * x + 1, 2 * y, c) +
                                         img.at(2 * x, 2 * y + 1, c) + img.at(2 * x + 1, 2 * y + 1, c));
    return r;
}

namespace {

inline int reflect101(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

}  // namespace

float sample_reflect(const Image& img, double x, double y, int c) {
    double fx = std::floor(x), fy = std::floor(y);
    double wx = x - fx, wy = y - fy;
    int x0 = int(fx), y0 = int(fy);
    int xa = reflect101(x0, img.width), xb = reflect101(x0 + 1, img.width);
    int ya = reflect101(y0, img.height), yb = reflect101(y0 + 1, img.height);
    double top = img.at(xa, ya, c) * (1 - wx) + img.at(xb, ya, c) * wx;
    double bot = img.at(xa, yb, c) * (1 - wx) + img.at(xb, yb, c) * wx;
    return float(top * (1 - wy) + bot * wy);
}

std::array<double, 2> RotatedImage::to_canvas(double x, double y) const {
    double t = degrees * M_PI / 180.0;
    double c = std::cos(t), s = std::sin(t);
    double dx = x - src_cx, dy = y - src_cy;
    return {dst_cx + c * dx - s * dy, dst_cy + s * dx + c * dy};
}

std::array<double, 2> RotatedImage::to_source(double x, double y) const {
    double t = degrees * M_PI / 180.0;
    double c = std::cos(t), s = std::sin(t);
    double dx = x - dst_cx, dy = y - dst_cy;
    return {src_cx + c * dx + s * dy, src_cy - s * dx + c * dy};
}

RotatedImage rotate_expand(const Image& img, double degrees) {
    RotatedImage r;
    r.degrees = degrees;
    r.src_cx = (img.width - 1) / 2.0;
    r.src_cy = (img.height - 1) / 2.0;
    if (degrees == 0.0) {
        r.image = img;
        r.dst_cx = r.src_cx;
        r.dst_cy = r.src_cy;
        return r;
    }
    double t = degrees * M_PI / 180.0;
    double c = std::fabs(std::cos(t)), s = std::fabs(std::sin(t));
    int w = int(std::ceil(img.width * c + img.height * s - 1e-9));
    int h = int(std::ceil(img.width * s + img.height * c - 1e-9));
    r.dst_cx = (w - 1) / 2.0;
    r.dst_cy = (h - 1) / 2.0;
    r.image = Image(w, h, img.channels);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            auto p = r.to_source(x, y);
            for (int ch = 0; ch < img.channels; ++ch) r.image.at(x, y, ch) = sample_reflect(img, p[0], p[1], ch);
        }
    }
    return r;
}

Image warp_similarity(const Image& img, const Similarity& t, int out_w, int out_h) {
    Similarity inv = t.inverse();
    Image r(out_w, out_h, img.channels);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            auto p = inv.apply(x, y);
            for (int c = 0; c < img.channels; ++c) r.at(x, y, c) = sample_reflect(img, p[0], p[1], c);
        }
    }
    return r;
}

}  // namespace hpm
