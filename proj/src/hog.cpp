#include "hpm/hog.hpp"

#include <algorithm>
#include <cmath>

#include "hpm/common.hpp"

namespace hpm {

namespace {

struct OrientTable {
    double u[9], v[9];
    OrientTable() {
        for (int o = 0; o < 9; ++o) {
            u[o] = std::cos(o * M_PI / 9);
            v[o] = std::sin(o * M_PI / 9);
        }
        // Exact mirror symmetry so flipped gradients land in permuted bins bit-for-bit.
        for (int o = 1; o <= 4; ++o) {
            u[9 - o] = -u[o];
            v[9 - o] = v[o];
        }
    }
};

const OrientTable& orient() {
    static const OrientTable t;
    return t;
}

}  // namespace

FeatureLevel compute_hog(const Image& image, int cell_size) {
    if (cell_size < 2) throw DomainError("compute_hog: cell size must be >= 2");
    if (image.width < 2 * cell_size || image.height < 2 * cell_size)
        throw DomainError("compute_hog: image smaller than two cells");
    const int cy = image.height / cell_size, cx = image.width / cell_size;
    const int vh = cy * cell_size, vw = cx * cell_size;
    const int nc = image.channels;
    const OrientTable& ot = orient();

    std::vector<double> hist(size_t(cy) * cx * 18, 0.0);
    for (int y = 1; y < vh - 1; ++y) {
        for (int x = 1; x < vw - 1; ++x) {
            double dx = 0, dy = 0, mag2 = -1;
            for (int c = 0; c < nc; ++c) {
                double gx = double(image.at(x + 1, y, c)) - image.at(x - 1, y, c);
                double gy = double(image.at(x, y + 1, c)) - image.at(x, y - 1, c);
                double m = gx * gx + gy * gy;
                if (m > mag2) {
                    mag2 = m;
                    dx = gx;
                    dy = gy;
                }
            }
            if (mag2 <= 0) continue;
            const double mag = std::sqrt(mag2);
            double dots[18];
            double best = -1;
            for (int o = 0; o < 9; ++o) {
                double d = ot.u[o] * dx + ot.v[o] * dy;
                dots[o] = d;
                dots[o + 9] = -d;
                best = std::max(best, std::max(d, -d));
            }
            int bins[18], nb = 0;
            for (int o = 0; o < 18; ++o)
                if (dots[o] == best) bins[nb++] = o;
            const double xp = (x + 0.5) / cell_size - 0.5, yp = (y + 0.5) / cell_size - 0.5;
            const int ix = int(std::floor(xp)), iy = int(std::floor(yp));
            const double vx0 = xp - ix, vy0 = yp - iy, vx1 = 1 - vx0, vy1 = 1 - vy0;
            const double share = mag / nb;
            auto add = [&](int yy, int xx, double wgt) {
                if (yy < 0 || yy >= cy || xx < 0 || xx >= cx) return;
                double* h = &hist[(size_t(yy) * cx + xx) * 18];
                for (int i = 0; i < nb; ++i) h[bins[i]] += wgt * share;
            };
            add(iy, ix, vx1 * vy1);
            add(iy, ix + 1, vx0 * vy1);
            add(iy + 1, ix, vx1 * vy0);
            add(iy + 1, ix + 1, vx0 * vy0);
        }
    }

    std::vector<double> norm(size_t(cy) * cx, 0.0);
    for (size_t i = 0; i < norm.size(); ++i) {
        const double* h = &hist[i * 18];
        double s = 0;
        for (int o = 0; o < 9; ++o) s += (h[o] + h[o + 9]) * (h[o] + h[o + 9]);
        norm[i] = s;
    }
    auto nrm = [&](int y, int x) { return norm[size_t(y) * cx + x]; };

    FeatureLevel level;
    level.cell_size = cell_size;
    level.rows = std::max(cy - 2, 0);
    level.cols = std::max(cx - 2, 0);
    level.cells.assign(size_t(level.rows) * level.cols * kHogDim, 0.f);
    constexpr double eps = 0.0001;
    for (int y = 0; y < level.rows; ++y) {
        for (int x = 0; x < level.cols; ++x) {
            const int ry = y + 1, rx = x + 1;
            auto block = [&](int by, int bx) {
                return 1.0 / std::sqrt(nrm(by, bx) + nrm(by, bx + 1) + nrm(by + 1, bx) + nrm(by + 1, bx + 1) + eps);
            };
            const double n1 = block(ry, rx), n2 = block(ry - 1, rx), n3 = block(ry, rx - 1), n4 = block(ry - 1, rx - 1);
            const double* h = &hist[(size_t(ry) * cx + rx) * 18];
            float* out = level.cell(y, x);
            double t1 = 0, t2 = 0, t3 = 0, t4 = 0;
            for (int o = 0; o < 18; ++o) {
                double h1 = std::min(h[o] * n1, 0.2), h2 = std::min(h[o] * n2, 0.2);
                double h3 = std::min(h[o] * n3, 0.2), h4 = std::min(h[o] * n4, 0.2);
                out[o] = float(0.5 * (h1 + h2 + h3 + h4));
                t1 += h1, t2 += h2, t3 += h3, t4 += h4;
            }
            for (int o = 0; o < 9; ++o) {
                double s = h[o] + h[o + 9];
                double h1 = std::min(s * n1, 0.2), h2 = std::min(s * n2, 0.2);
                double h3 = std::min(s * n3, 0.2), h4 = std::min(s * n4, 0.2);
                out[18 + o] = float(0.5 * (h1 + h2 + h3 + h4));
            }
            out[27] = float(0.2357 * t1);
            out[28] = float(0.2357 * t2);
            out[29] = float(0.2357 * t3);
            out[30] = float(0.2357 * t4);
        }
    }
    return level;
}

std::vector<double> extract_patch(const FeatureLevel& level, GridLoc loc, int h, int w) {
    if (h < 1 || w < 1) throw DomainError("extract_patch: empty patch");
    const int d = level.dim;
    std::vector<double> out(size_t(h) * w * d, 0.0);
    const int y0 = loc.y - h / 2, x0 = loc.x - w / 2;
    for (int dy = 0; dy < h; ++dy) {
        int y = y0 + dy;
        if (y < 0 || y >= level.rows) continue;
        for (int dx = 0; dx < w; ++dx) {
            int x = x0 + dx;
            if (x < 0 || x >= level.cols) continue;
            const float* c = level.cell(y, x);
            double* o = &out[(size_t(dy) * w + dx) * d];
            for (int k = 0; k < d; ++k) o[k] = c[k];
        }
    }
    return out;
}

const std::array<int, kHogDim>& hog_flip_permutation() {
    static const std::array<int, kHogDim> perm = [] {
        std::array<int, kHogDim> p{};
        for (int o = 0; o < 18; ++o) p[o] = (18 + 9 - o) % 18;
        for (int o = 0; o < 9; ++o) p[18 + o] = 18 + (9 - o) % 9;
        // Block-normalisation sums swap left and right neighbours.
        p[27] = 29;
        p[28] = 30;
        p[29] = 27;
        p[30] = 28;
        return p;
    }();
    return perm;
}

FeatureLevel flip_level(const FeatureLevel& level) {
    FeatureLevel r = level;
    const auto& perm = hog_flip_permutation();
    for (int y = 0; y < level.rows; ++y)
        for (int x = 0; x < level.cols; ++x) {
            const float* src = level.cell(y, x);
            float* dst = r.cell(y, level.cols - 1 - x);
            for (int k = 0; k < kHogDim; ++k) dst[perm[k]] = src[k];
        }
    return r;
}

std::vector<double> flip_template(const std::vector<double>& t, int h, int w) {
    const auto& perm = hog_flip_permutation();
    std::vector<double> r(t.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < kHogDim; ++k)
                r[(size_t(y) * w + (w - 1 - x)) * kHogDim + perm[k]] = t[(size_t(y) * w + x) * kHogDim + k];
    return r;
}

}  // namespace hpm
