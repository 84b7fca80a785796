#pragma once

// The update written as a stack of filtering layers, plus the arithmetic
// cost model. One forward pass through
//
//   o11  canonical unary beliefs            H x W x l
//   b12  locally connected filtering        H x W x l
//   b13  context convolution                H x W x K*l
//   b14  component min pooling              H x W x l
//   b15  belief combination (softmax)       H x W x l
//
// equals one parallel mean-field pass with fixed-unary kernels when the b12
// activation is the identity (scale 1, offset 0). b12 kernels are per
// position and not learned; they carry the distance-weighted unary mass.
// b13 filters are the context bank, applied with zero padding. b14 takes the
// min across the K component channels of each label block, ties to the
// lowest index. b15 renormalizes exp(ln o11 - o14).
//
// lconv_b12 and lconv_b12_lut run the same tap loop in the same order with
// the same scalar expressions; the lut path only replaces the per-channel
// squared differences with lookups into a 256 x 256 table, so their outputs
// are equal bit for bit, not merely close.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrf.hpp"
#include "parallel.hpp"

namespace dpn {

// b12 activation lin(x) = scale * x + offset.
struct LinearActivation {
    double scale = 1.0;
    double offset = 0.0;

    void validate() const {
        if (!std::isfinite(scale) || !std::isfinite(offset))
            throw std::invalid_argument("activation parameters must be finite");
    }
};

// Per-position b12 kernels: kernel(j, v, tap) = d(j, z_tap) * p_j^v, stored
// as the shared spatial factor (distances, one slab per pixel) and the label
// factor (unary beliefs). Taps outside the image are skipped by every
// consumer, in the same row-major tap order.
class TriplePenaltyKernelField {
public:
    TriplePenaltyKernelField(std::uint32_t height, std::uint32_t width, std::uint32_t extent,
                             Tensor label_probs, LinearActivation act)
        : height_(height), width_(width), extent_(extent), taps_(extent * extent),
          spatial_(std::size_t(height) * width * taps_, 0.0),
          label_probs_(std::move(label_probs)), act_(act) {}

    std::uint32_t height() const { return height_; }
    std::uint32_t width() const { return width_; }
    std::uint32_t extent() const { return extent_; }
    std::uint32_t labels() const { return label_probs_.dim(2); }
    std::int32_t radius() const { return std::int32_t(extent_ / 2); }
    const LinearActivation& activation() const { return act_; }

    double spatial(std::uint32_t y, std::uint32_t x, std::uint32_t tap) const {
        return spatial_[(std::size_t(y) * width_ + x) * taps_ + tap];
    }
    double& spatial(std::uint32_t y, std::uint32_t x, std::uint32_t tap) {
        return spatial_[(std::size_t(y) * width_ + x) * taps_ + tap];
    }
    double label_weight(std::uint32_t y, std::uint32_t x, std::uint32_t v) const {
        return label_probs_(y, x, v);
    }
    double kernel(std::uint32_t y, std::uint32_t x, std::uint32_t v, std::uint32_t tap) const {
        return spatial(y, x, tap) * label_probs_(y, x, v);
    }

private:
    std::uint32_t height_, width_, extent_, taps_;
    std::vector<double> spatial_;
    Tensor label_probs_;
    LinearActivation act_;
};

inline TriplePenaltyKernelField build_triple_kernels(const UnaryField& unary,
                                                     const PixelFeatureGrid& feats,
                                                     const DistanceParams& dp,
                                                     const TripleWindow& tw,
                                                     LinearActivation act = {}) {
    dp.validate();
    act.validate();
    if (feats.height() != unary.height() || feats.width() != unary.width())
        throw ShapeError("feature grid and unary field disagree on image extents");
    const std::uint32_t h = unary.height(), w = unary.width(), m = tw.extent;
    const std::int32_t r = tw.radius();
    TriplePenaltyKernelField field(h, w, m, unary.probs(), act);
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            std::uint32_t tap = 0;
            for (std::int32_t dy = -r; dy <= r; ++dy)
                for (std::int32_t dx = -r; dx <= r; ++dx, ++tap) {
                    const std::int64_t zy = std::int64_t(y) + dy;
                    const std::int64_t zx = std::int64_t(x) + dx;
                    if (zy < 0 || zy >= h || zx < 0 || zx >= w) continue;  // stays 0, never read
                    field.spatial(y, x, tap) =
                        distance(feats, y, x, std::uint32_t(zy), std::uint32_t(zx), dp);
                }
        }
    return field;
}

// b12: o12(j, v) = lin( sum over in-bounds taps of kernel(j, v, tap) * q(z, v) ).
inline Tensor lconv_b12(const MarginalField& q, const TriplePenaltyKernelField& kernels,
                        unsigned threads = 1) {
    if (q.rank() != 3 || q.dim(0) != kernels.height() || q.dim(1) != kernels.width() ||
        q.dim(2) != kernels.labels())
        throw ShapeError("b12 input shape " + dims_to_string(q.dims()) + " does not match kernels");
    const std::uint32_t h = kernels.height(), w = kernels.width(), l = kernels.labels();
    const std::int32_t r = kernels.radius();
    const LinearActivation act = kernels.activation();
    Tensor out({h, w, l});
    detail::parallel_rows(h, threads, [&](std::uint32_t y) {
        for (std::uint32_t x = 0; x < w; ++x)
            for (std::uint32_t v = 0; v < l; ++v) {
                const double pv = kernels.label_weight(y, x, v);
                double acc = 0.0;
                std::uint32_t tap = 0;
                for (std::int32_t dy = -r; dy <= r; ++dy)
                    for (std::int32_t dx = -r; dx <= r; ++dx, ++tap) {
                        const std::int64_t zy = std::int64_t(y) + dy;
                        const std::int64_t zx = std::int64_t(x) + dx;
                        if (zy < 0 || zy >= h || zx < 0 || zx >= w) continue;
                        const double d = kernels.spatial(y, x, tap);
                        acc += (d * pv) * q(std::uint32_t(zy), std::uint32_t(zx), v);
                    }
                out(y, x, v) = act.scale * acc + act.offset;
            }
    });
    return out;
}

// Shared lookup table of squared intensity differences. One table serves
// every channel since the map depends only on the value pair.
class SquaredDiffLut {
public:
    SquaredDiffLut() : table_(256 * 256) {
        for (std::int64_t a = 0; a < 256; ++a)
            for (std::int64_t b = 0; b < 256; ++b) table_[a * 256 + b] = (a - b) * (a - b);
    }
    std::int64_t operator()(std::int32_t a, std::int32_t b) const { return table_[a * 256 + b]; }

private:
    std::vector<std::int64_t> table_;
};

// b12 via table lookups instead of per-tap difference arithmetic. Bitwise
// equal to building the kernels and calling lconv_b12: the integer sums are
// identical and the floating-point expressions match term for term.
inline Tensor lconv_b12_lut(const MarginalField& q, const UnaryField& unary,
                            const PixelFeatureGrid& feats, const DistanceParams& dp,
                            const TripleWindow& tw, LinearActivation act = {},
                            unsigned threads = 1) {
    dp.validate();
    act.validate();
    ensure_same_shape(q, unary.probs(), "b12 input");
    if (feats.height() != unary.height() || feats.width() != unary.width())
        throw ShapeError("feature grid and unary field disagree on image extents");
    static const SquaredDiffLut lut;
    const std::uint32_t h = unary.height(), w = unary.width(), l = unary.labels();
    const std::uint32_t ch = feats.channels();
    const std::int32_t r = tw.radius();

    // squared offset norms in tap order
    std::vector<std::int64_t> spatial_sq(std::size_t(tw.extent) * tw.extent);
    {
        std::uint32_t tap = 0;
        for (std::int64_t dy = -r; dy <= r; ++dy)
            for (std::int64_t dx = -r; dx <= r; ++dx, ++tap) spatial_sq[tap] = dy * dy + dx * dx;
    }

    Tensor out({h, w, l});
    detail::parallel_rows(h, threads, [&](std::uint32_t y) {
        for (std::uint32_t x = 0; x < w; ++x)
            for (std::uint32_t v = 0; v < l; ++v) {
                const double pv = unary.prob(y, x, v);
                double acc = 0.0;
                std::uint32_t tap = 0;
                for (std::int32_t dy = -r; dy <= r; ++dy)
                    for (std::int32_t dx = -r; dx <= r; ++dx, ++tap) {
                        const std::int64_t zy = std::int64_t(y) + dy;
                        const std::int64_t zx = std::int64_t(x) + dx;
                        if (zy < 0 || zy >= h || zx < 0 || zx >= w) continue;
                        std::int64_t isum = 0;
                        for (std::uint32_t c = 0; c < ch; ++c)
                            isum += lut(feats.intensity(y, x, c),
                                        feats.intensity(std::uint32_t(zy), std::uint32_t(zx), c));
                        const double d = dp.intensity_weight * double(isum) +
                                         dp.spatial_weight * double(spatial_sq[tap]);
                        acc += (d * pv) * q(std::uint32_t(zy), std::uint32_t(zx), v);
                    }
                out(y, x, v) = act.scale * acc + act.offset;
            }
    });
    return out;
}

// b13: ordinary convolution with the context bank, zero padding. Output
// channel u*K + k applies component k of label u across all input labels.
inline Tensor context_conv_b13(const Tensor& o12, const ContextFilterBank& ctx,
                               unsigned threads = 1) {
    if (o12.rank() != 3 || o12.dim(2) != ctx.labels())
        throw ShapeError("b13 input must be H x W x l with l = " + std::to_string(ctx.labels()) +
                         ", got " + dims_to_string(o12.dims()));
    const std::uint32_t h = o12.dim(0), w = o12.dim(1), l = ctx.labels();
    const std::uint32_t K = ctx.components();
    const std::int32_t r = ctx.radius();
    Tensor out({h, w, K * l});
    detail::parallel_rows(h, threads, [&](std::uint32_t y) {
        for (std::uint32_t x = 0; x < w; ++x)
            for (std::uint32_t u = 0; u < l; ++u)
                for (std::uint32_t k = 0; k < K; ++k) {
                    double acc = 0.0;
                    for (std::int32_t dy = -r; dy <= r; ++dy) {
                        const std::int64_t jy = std::int64_t(y) + dy;
                        if (jy < 0 || jy >= h) continue;
                        for (std::int32_t dx = -r; dx <= r; ++dx) {
                            const std::int64_t jx = std::int64_t(x) + dx;
                            if (jx < 0 || jx >= w) continue;
                            for (std::uint32_t v = 0; v < l; ++v)
                                acc += ctx.mu(k, u, dy, dx, v) *
                                       o12(std::uint32_t(jy), std::uint32_t(jx), v);
                        }
                    }
                    out(y, x, u * K + k) = acc;
                }
    });
    return out;
}

// b14: min over each block of K consecutive channels.
inline Tensor block_min_b14(const Tensor& o13, std::uint32_t components) {
    if (o13.rank() != 3) throw ShapeError("b14 input must be rank 3");
    if (components == 0 || o13.dim(2) % components != 0)
        throw ShapeError("b14 channel count " + std::to_string(o13.dim(2)) +
                         " is not a multiple of K = " + std::to_string(components));
    const std::uint32_t h = o13.dim(0), w = o13.dim(1), blocks = o13.dim(2) / components;
    Tensor out({h, w, blocks});
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x)
            for (std::uint32_t u = 0; u < blocks; ++u) {
                double best = o13(y, x, u * components);
                for (std::uint32_t k = 1; k < components; ++k)
                    best = std::min(best, o13(y, x, u * components + k));
                out(y, x, u) = best;
            }
    return out;
}

// Which component wins each block, ties to the lowest index. The learning
// pass routes gradients along these choices.
inline std::vector<std::uint32_t> block_argmin_b14(const Tensor& o13, std::uint32_t components) {
    if (o13.rank() != 3) throw ShapeError("b14 input must be rank 3");
    if (components == 0 || o13.dim(2) % components != 0)
        throw ShapeError("b14 channel count " + std::to_string(o13.dim(2)) +
                         " is not a multiple of K = " + std::to_string(components));
    const std::uint32_t h = o13.dim(0), w = o13.dim(1), blocks = o13.dim(2) / components;
    std::vector<std::uint32_t> arg(std::size_t(h) * w * blocks, 0);
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x)
            for (std::uint32_t u = 0; u < blocks; ++u) {
                std::uint32_t best_k = 0;
                double best = o13(y, x, u * components);
                for (std::uint32_t k = 1; k < components; ++k)
                    if (o13(y, x, u * components + k) < best) {
                        best = o13(y, x, u * components + k);
                        best_k = k;
                    }
                arg[(std::size_t(y) * w + x) * blocks + u] = best_k;
            }
    return arg;
}

// b15: o15(i, u) proportional to exp(ln o11(i, u) - o14(i, u)), normalized
// per pixel with the usual max shift.
inline MarginalField combine_b15(const UnaryField& unary, const Tensor& o14, unsigned threads = 1) {
    ensure_same_shape(o14, unary.probs(), "b15 penalty input");
    const std::uint32_t h = unary.height(), w = unary.width(), l = unary.labels();
    MarginalField out({h, w, l});
    detail::parallel_rows(h, threads, [&](std::uint32_t y) {
        std::vector<double> logits(l);
        for (std::uint32_t x = 0; x < w; ++x) {
            double peak = -std::numeric_limits<double>::infinity();
            for (std::uint32_t u = 0; u < l; ++u) {
                logits[u] = std::log(unary.prob(y, x, u)) - o14(y, x, u);
                peak = std::max(peak, logits[u]);
            }
            double sum = 0.0;
            for (std::uint32_t u = 0; u < l; ++u) sum += std::exp(logits[u] - peak);
            for (std::uint32_t u = 0; u < l; ++u) out(y, x, u) = std::exp(logits[u] - peak) / sum;
        }
    });
    return out;
}

struct LayerActivations {
    Tensor o11, o12, o13, o14, o15;
};

// Full forward pass. With the identity activation this reproduces one
// parallel fixed-unary mean-field pass from the unary initialization.
inline LayerActivations dpn_forward(const UnaryField& unary, const PixelFeatureGrid& feats,
                                    const DistanceParams& dp, const ContextFilterBank& ctx,
                                    const TripleWindow& tw, LinearActivation act = {},
                                    unsigned threads = 1) {
    detail::check_model_shapes(unary, feats, ctx);
    LayerActivations acts;
    acts.o11 = unary.probs();
    const TriplePenaltyKernelField kernels = build_triple_kernels(unary, feats, dp, tw, act);
    acts.o12 = lconv_b12(acts.o11, kernels, threads);
    acts.o13 = context_conv_b13(acts.o12, ctx, threads);
    acts.o14 = block_min_b14(acts.o13, ctx.components());
    acts.o15 = combine_b15(unary, acts.o14, threads);
    return acts;
}

// Arithmetic cost model for one stack, counted in multiply-accumulates.
struct CostModelConfig {
    std::uint64_t feature_maps = 0;     // f, input maps of b12 (the label count)
    std::uint64_t output_maps = 0;      // f', b13 output maps
    std::uint64_t image_size = 0;       // N, square image side
    std::uint64_t receptive_field = 0;  // s, filter side
    std::uint64_t batch = 0;            // M, images per pass

    void validate() const {
        if (!feature_maps || !output_maps || !image_size || !receptive_field || !batch)
            throw std::invalid_argument("cost model parameters must all be positive");
    }
};

struct CostModelReport {
    CostModelConfig config;
    std::uint64_t b12_ops = 0;  // f * N^2 * s^2 * M
    std::uint64_t b13_ops = 0;  // f * f' * N^2 * s^2 * M
    std::uint64_t b14_ops = 0;  // f * N^2 * M
    std::uint64_t b15_ops = 0;  // f * N^2 * M
    std::uint64_t total_ops = 0;

    std::string to_text() const {
        char buf[512];
        std::snprintf(buf, sizeof buf,
                      "b12 lconv  %20llu  (%.3e)\n"
                      "b13 conv   %20llu  (%.3e)\n"
                      "b14 bmin   %20llu  (%.3e)\n"
                      "b15 sum    %20llu  (%.3e)\n"
                      "total      %20llu  (%.3e)\n",
                      (unsigned long long)b12_ops, double(b12_ops), (unsigned long long)b13_ops,
                      double(b13_ops), (unsigned long long)b14_ops, double(b14_ops),
                      (unsigned long long)b15_ops, double(b15_ops), (unsigned long long)total_ops,
                      double(total_ops));
        return buf;
    }
};

namespace detail {

inline std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
    if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a)
        throw std::overflow_error("cost model product overflows 64 bits");
    return a * b;
}

inline std::uint64_t checked_add(std::uint64_t a, std::uint64_t b) {
    if (b > std::numeric_limits<std::uint64_t>::max() - a)
        throw std::overflow_error("cost model sum overflows 64 bits");
    return a + b;
}

}  // namespace detail

inline CostModelReport estimate_cost(const CostModelConfig& cfg) {
    cfg.validate();
    using detail::checked_add;
    using detail::checked_mul;
    CostModelReport rep;
    rep.config = cfg;
    const std::uint64_t n2 = checked_mul(cfg.image_size, cfg.image_size);
    const std::uint64_t s2 = checked_mul(cfg.receptive_field, cfg.receptive_field);
    const std::uint64_t per_map = checked_mul(checked_mul(n2, s2), cfg.batch);
    rep.b12_ops = checked_mul(cfg.feature_maps, per_map);
    rep.b13_ops = checked_mul(cfg.output_maps, rep.b12_ops);
    rep.b14_ops = checked_mul(cfg.feature_maps, checked_mul(n2, cfg.batch));
    rep.b15_ops = rep.b14_ops;
    rep.total_ops = checked_add(checked_add(rep.b12_ops, rep.b13_ops),
                                checked_add(rep.b14_ops, rep.b15_ops));
    return rep;
}

}  // namespace dpn
