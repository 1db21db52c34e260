#include "hpm/gdt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "hpm/common.hpp"

namespace hpm {
namespace detail {

namespace {

inline double eval(double f, double w1, double w2, int p, int q) {
    double d = double(p - q);
    return f + w1 * d + w2 * d * d;
}

}  // namespace

void gdt_line(const double* f, int n, int stride, double w1, double w2, int shift, double* out,
              int* arg, int out_stride, double* z, int* v) {
    if (n <= 0) return;
    if (w2 == 0.0) {
        // Every source contributes a line of the same slope; one source wins everywhere.
        int best = -1;
        double best_key = 0;
        for (int q = 0; q < n; ++q) {
            double fq = f[q * stride];
            if (is_neg_inf(fq)) continue;
            double key = fq - w1 * q;
            if (best < 0 || key > best_key) {
                best = q;
                best_key = key;
            }
        }
        for (int p = 0; p < n; ++p) {
            if (best < 0) {
                out[p * out_stride] = kNegInf;
                arg[p * out_stride] = -1;
            } else {
                out[p * out_stride] = eval(f[best * stride], w1, w2, p + shift, best);
                arg[p * out_stride] = best;
            }
        }
        return;
    }

    // Lower envelope of the parabolas g_q(x) = -f[q] - w1 (x-q) - w2 (x-q)^2 (a = -w2 > 0).
    const double a = -w2;
    auto h = [&](int q) { return -f[q * stride] + a * double(q) * q + w1 * q; };
    auto cross = [&](int q, int r) { return (h(r) - h(q)) / (2.0 * a * (r - q)); };

    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (is_neg_inf(f[q * stride])) continue;
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -std::numeric_limits<double>::infinity();
            z[1] = std::numeric_limits<double>::infinity();
            continue;
        }
        double s = cross(v[k], q);
        while (s <= z[k]) {
            --k;
            s = cross(v[k], q);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    if (k < 0) {
        for (int p = 0; p < n; ++p) {
            out[p * out_stride] = kNegInf;
            arg[p * out_stride] = -1;
        }
        return;
    }
    const int last = k;
    k = 0;
    for (int p = 0; p < n; ++p) {
        const int x = p + shift;
        while (k < last && z[k + 1] < x) ++k;
        // Settle rounding in the breakpoints by direct comparison with neighbours.
        int j = k;
        double best = eval(f[v[j] * stride], w1, w2, x, v[j]);
        while (j > 0) {
            double c = eval(f[v[j - 1] * stride], w1, w2, x, v[j - 1]);
            if (c >= best) {
                --j;
                best = c;
            } else {
                break;
            }
        }
        while (j < last) {
            double c = eval(f[v[j + 1] * stride], w1, w2, x, v[j + 1]);
            if (c > best) {
                ++j;
                best = c;
            } else {
                break;
            }
        }
        out[p * out_stride] = best;
        arg[p * out_stride] = v[j];
    }
}

void gdt_grid(const double* f, int rows, int cols, double wx1, double wx2, double wy1,
              double wy2, int shift_x, int shift_y, double* out, int* arg, GdtWorkspace& ws) {
    const int n = std::max(rows, cols);
    const size_t cells = size_t(rows) * cols;
    if (ws.z.size() < size_t(2 * n + 2)) ws.z.resize(2 * n + 2);
    if (ws.v.size() < size_t(n + 1)) ws.v.resize(n + 1);
    if (ws.tmp.size() < cells) ws.tmp.resize(cells);
    if (ws.argx.size() < cells) ws.argx.resize(cells);
    if (ws.argy.size() < cells) ws.argy.resize(cells);
    auto& z = ws.z;
    auto& v = ws.v;
    auto& tmp = ws.tmp;
    auto& argx = ws.argx;
    auto& argy = ws.argy;
    for (int y = 0; y < rows; ++y)
        gdt_line(f + size_t(y) * cols, cols, 1, wx1, wx2, shift_x, tmp.data() + size_t(y) * cols,
                 argx.data() + size_t(y) * cols, 1, z.data(), v.data());
    for (int x = 0; x < cols; ++x)
        gdt_line(tmp.data() + x, rows, cols, wy1, wy2, shift_y, out + x, argy.data() + x, cols,
                 z.data(), v.data());
    for (int y = 0; y < rows; ++y) {
        for (int x = 0; x < cols; ++x) {
            size_t i = size_t(y) * cols + x;
            int qy = argy[i];
            if (qy < 0) {
                out[i] = kNegInf;
                arg[i] = -1;
            } else {
                arg[i] = qy * cols + argx[size_t(qy) * cols + x];
            }
        }
    }
}

}  // namespace detail

Gdt1dResult gdt_1d(std::span<const double> values, double w1, double w2) {
    if (w2 > 0) throw DomainError("gdt_1d: quadratic coefficient must be <= 0");
    if (!std::isfinite(w1) || !std::isfinite(w2)) throw DomainError("gdt_1d: non-finite coefficient");
    const int n = int(values.size());
    Gdt1dResult r;
    r.values.resize(n);
    r.argmax.resize(n);
    std::vector<double> z(2 * n + 2);
    std::vector<int> v(n + 1);
    detail::gdt_line(values.data(), n, 1, w1, w2, 0, r.values.data(), r.argmax.data(), 1, z.data(),
                     v.data());
    return r;
}

Gdt2dResult gdt_2d(std::span<const double> grid, int rows, int cols, double wx1, double wx2,
                   double wy1, double wy2) {
    if (wx2 > 0 || wy2 > 0) throw DomainError("gdt_2d: quadratic coefficients must be <= 0");
    if (rows < 0 || cols < 0 || grid.size() != size_t(rows) * cols)
        throw DomainError("gdt_2d: grid size does not match dimensions");
    Gdt2dResult r;
    r.rows = rows;
    r.cols = cols;
    r.values.resize(grid.size());
    r.argmax.resize(grid.size());
    detail::GdtWorkspace ws;
    detail::gdt_grid(grid.data(), rows, cols, wx1, wx2, wy1, wy2, 0, 0, r.values.data(),
                     r.argmax.data(), ws);
    return r;
}

}  // namespace hpm
