#pragma once

// Corner-aligned bilinear resampling for H x W (x C) tensors. Output corners
// sample input corners exactly, so upscaling then reading the corners is
// lossless and a no-op resize returns the input values unchanged.

#include <cmath>
#include <cstdint>

#include "tensor.hpp"

namespace dpn {

inline Tensor bilinear_resize(const Tensor& src, std::uint32_t out_h, std::uint32_t out_w) {
    if (src.rank() != 2 && src.rank() != 3)
        throw ShapeError("bilinear_resize expects H x W or H x W x C, got " +
                         dims_to_string(src.dims()));
    if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize target extents must be positive");

    const std::uint32_t in_h = src.dim(0), in_w = src.dim(1);
    const std::uint32_t ch = src.rank() == 3 ? src.dim(2) : 1;
    Tensor dst(src.rank() == 3 ? Dims{out_h, out_w, ch} : Dims{out_h, out_w});

    const double sy = out_h > 1 ? double(in_h - 1) / double(out_h - 1) : 0.0;
    const double sx = out_w > 1 ? double(in_w - 1) / double(out_w - 1) : 0.0;

    auto in = [&](std::uint32_t y, std::uint32_t x, std::uint32_t c) {
        return src.rank() == 3 ? src(y, x, c) : src(y, x);
    };

    for (std::uint32_t oy = 0; oy < out_h; ++oy) {
        const double fy = oy * sy;
        const std::uint32_t y0 = std::uint32_t(fy);
        const std::uint32_t y1 = y0 + 1 < in_h ? y0 + 1 : y0;
        const double wy = fy - y0;
        for (std::uint32_t ox = 0; ox < out_w; ++ox) {
            const double fx = ox * sx;
            const std::uint32_t x0 = std::uint32_t(fx);
            const std::uint32_t x1 = x0 + 1 < in_w ? x0 + 1 : x0;
            const double wx = fx - x0;
            for (std::uint32_t c = 0; c < ch; ++c) {
                const double top = in(y0, x0, c) * (1.0 - wx) + in(y0, x1, c) * wx;
                const double bot = in(y1, x0, c) * (1.0 - wx) + in(y1, x1, c) * wx;
                const double v = top * (1.0 - wy) + bot * wy;
                if (src.rank() == 3)
                    dst(oy, ox, c) = v;
                else
                    dst(oy, ox) = v;
            }
        }
    }
    return dst;
}

}  // namespace dpn
