#pragma once

#include <span>
#include <vector>

namespace hpm {

struct Gdt1dResult {
    std::vector<double> values;
    std::vector<int> argmax;  // -1 where no finite source exists
};

struct Gdt2dResult {
    int rows = 0, cols = 0;
    std::vector<double> values;  // row-major
    std::vector<int> argmax;     // linear source index y*cols+x, -1 if none
};

// out[p] = max_q f[q] + w1*(p-q) + w2*(p-q)^2, ties to the smallest q.
Gdt1dResult gdt_1d(std::span<const double> values, double w1, double w2);

// Separable 2D transform with independent x and y coefficients.
Gdt2dResult gdt_2d(std::span<const double> grid, int rows, int cols, double wx1, double wx2,
                   double wy1, double wy2);

namespace detail {

// Strided 1D kernel. Output p is evaluated at position p + shift.
// work must hold at least 2*n+1 doubles and iwork n ints.
void gdt_line(const double* f, int n, int stride, double w1, double w2, int shift, double* out,
              int* arg, int out_stride, double* work, int* iwork);

struct GdtWorkspace {
    std::vector<double> z, tmp;
    std::vector<int> v, argx, argy;
};

// 2D transform with per-axis shift; out/arg sized rows*cols.
void gdt_grid(const double* f, int rows, int cols, double wx1, double wx2, double wy1,
              double wy2, int shift_x, int shift_y, double* out, int* arg, GdtWorkspace& ws);

}  // namespace detail

}  // namespace hpm
