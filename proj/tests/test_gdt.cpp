#include <doctest.h>

#include <cmath>
#include <vector>

#include "hpm/common.hpp"
#include "hpm/gdt.hpp"

using namespace hpm;

namespace {

// Quadratic-time reference: strict improvement keeps the smallest source.
void brute_1d(const std::vector<double>& f, double w1, double w2, std::vector<double>& out, std::vector<int>& arg) {
    const int n = int(f.size());
    out.assign(n, kNegInf);
    arg.assign(n, -1);
    for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q) {
            if (is_neg_inf(f[q])) continue;
            double d = double(p - q);
            double v = f[q] + w1 * d + w2 * d * d;
            if (arg[p] < 0 || v > out[p]) {
                out[p] = v;
                arg[p] = q;
            }
        }
}

}  // namespace

TEST_CASE("zero coefficients give the global max everywhere") {
    std::vector<double> f = {0.5, 3.0, -1.0, 3.0, 2.0};
    auto r = gdt_1d(f, 0, 0);
    for (size_t p = 0; p < f.size(); ++p) {
        CHECK(r.values[p] == 3.0);
        CHECK(r.argmax[p] == 1);
    }
}

TEST_CASE("single finite source yields a parabola") {
    std::vector<double> f(12, kNegInf);
    f[5] = 0;
    auto r = gdt_1d(f, 0, -1);
    for (int p = 0; p < 12; ++p) {
        CHECK(r.values[p] == doctest::Approx(-(p - 5.0) * (p - 5.0)));
        CHECK(r.argmax[p] == 5);
    }
}

TEST_CASE("positive quadratic coefficient is rejected") {
    std::vector<double> f(4, 0.0);
    CHECK_THROWS_AS(gdt_1d(f, 0, 0.5), DomainError);
    CHECK_THROWS_AS(gdt_2d(f, 2, 2, 0, 0.1, 0, -1), DomainError);
}

TEST_CASE("all sentinel input stays sentinel") {
    std::vector<double> f(16 * 16, kNegInf);
    auto r = gdt_2d(f, 16, 16, 0.3, -0.2, -0.1, -1);
    for (size_t i = 0; i < f.size(); ++i) {
        CHECK(is_neg_inf(r.values[i]));
        CHECK(r.argmax[i] == -1);
    }
}

TEST_CASE("1d transform matches brute force on random arrays") {
    Rng rng(11);
    int mismatched_args = 0;
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        int n = 1 + rng.uniform_int(256);
        std::vector<double> f(n);
        for (auto& v : f) v = rng.uniform() < 0.1 ? kNegInf : rng.uniform(-5, 5);
        double w1 = rng.uniform(-2, 2), w2 = -rng.uniform(0, 2);
        auto r = gdt_1d(f, w1, w2);
        std::vector<double> out;
        std::vector<int> arg;
        brute_1d(f, w1, w2, out, arg);
        for (int p = 0; p < n; ++p) {
            if (arg[p] != r.argmax[p]) ++mismatched_args;
            if (arg[p] >= 0) worst = std::max(worst, std::fabs(out[p] - r.values[p]));
        }
    }
    CHECK(mismatched_args == 0);
    CHECK(worst <= 1e-9);
}

TEST_CASE("integer-valued inputs resolve ties to the smallest source") {
    Rng rng(5);
    for (int trial = 0; trial < 300; ++trial) {
        int n = 1 + rng.uniform_int(40);
        std::vector<double> f(n);
        for (auto& v : f) v = double(rng.uniform_int(4));
        double w1 = double(rng.uniform_int(3) - 1), w2 = -double(rng.uniform_int(3));
        auto r = gdt_1d(f, w1, w2);
        std::vector<double> out;
        std::vector<int> arg;
        brute_1d(f, w1, w2, out, arg);
        CHECK(r.argmax == arg);
        CHECK(r.values == out);
    }
}

TEST_CASE("2d transform matches joint brute force") {
    Rng rng(23);
    int bad = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int R = 16, C = 16;
        std::vector<double> f(R * C);
        for (auto& v : f) v = rng.uniform() < 0.1 ? kNegInf : rng.uniform(-5, 5);
        double wx1 = rng.uniform(-2, 2), wx2 = -rng.uniform(0, 2), wy1 = rng.uniform(-2, 2), wy2 = -rng.uniform(0, 2);
        auto r = gdt_2d(f, R, C, wx1, wx2, wy1, wy2);
        for (int py = 0; py < R; ++py)
            for (int px = 0; px < C; ++px) {
                double best = kNegInf;
                int arg = -1;
                for (int qy = 0; qy < R; ++qy)
                    for (int qx = 0; qx < C; ++qx) {
                        double fq = f[qy * C + qx];
                        if (is_neg_inf(fq)) continue;
                        double dx = px - qx, dy = py - qy;
                        double v = fq + wx1 * dx + wx2 * dx * dx + wy1 * dy + wy2 * dy * dy;
                        if (arg < 0 || v > best) best = v, arg = qy * C + qx;
                    }
                if (arg != r.argmax[py * C + px] || std::fabs(best - r.values[py * C + px]) > 1e-9) ++bad;
            }
    }
    CHECK(bad == 0);
}
