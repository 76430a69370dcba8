#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "xilbench/numerics/matrix.hpp"

namespace xilbench {

using Complex = std::complex<double>;

/// Unnormalized 2-D DFT of a single-channel grid, row-major h x w output.
/// Separable direct summation; grids here are at most a few hundred pixels wide.
inline std::vector<Complex> dft2(const Grid2D& g) {
    if (g.channels() != 1) throw ChannelError("dft2: expected a single-channel grid");
    const std::size_t h = g.height(), w = g.width();
    if (h == 0 || w == 0) throw DimensionError("dft2: empty grid");

    auto twiddles = [](std::size_t n) {
        std::vector<Complex> t(n);
        for (std::size_t k = 0; k < n; ++k) {
            const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
            t[k] = {std::cos(ang), std::sin(ang)};
        }
        return t;
    };
    const auto tw = twiddles(w);
    const auto th = twiddles(h);

    std::vector<Complex> rows(h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t v = 0; v < w; ++v) {
            Complex acc{};
            for (std::size_t x = 0; x < w; ++x) acc += g.at(y, x) * tw[(v * x) % w];
            rows[y * w + v] = acc;
        }
    std::vector<Complex> out(h * w);
    for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v) {
            Complex acc{};
            for (std::size_t y = 0; y < h; ++y) acc += rows[y * w + v] * th[(u * y) % h];
            out[u * w + v] = acc;
        }
    return out;
}

/// log(1 + |DFT|) with the zero frequency moved to cell (h/2, w/2).
inline Grid2D dft2_logmag(const Grid2D& g) {
    const auto f = dft2(g);
    const std::size_t h = g.height(), w = g.width();
    Grid2D out(h, w, 1);
    for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v)
            out.at((u + h / 2) % h, (v + w / 2) % w) = std::log1p(std::abs(f[u * w + v]));
    return out;
}

}  // namespace xilbench
