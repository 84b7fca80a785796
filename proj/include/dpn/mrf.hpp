#pragma once

// Model core: pixel features with the weighted squared distance, clamped and
// renormalized unary beliefs, the mixture bank of label-context filters, and
// the labeling energy / mean-field free energy they induce.
//
// Pairwise structure. For pixels i, j and labels u, v the pairwise cost is a
// mixture over K context components,
//
//     psi(i,u,j,v) = min_k mu_k(u, j-i, v) * T(j, v),
//     T(j, v)      = sum over z in the m x m window of j of d(j, z) * p_z^v,
//
// where d is the weighted squared feature/position distance and p the
// canonical unary beliefs. T depends on j alone, so it is precomputed once
// per field (triple_penalty_table). The mixture min is taken per (i, u)
// over whole window sums, not per edge; energy() and free_energy() below
// and the update schedules all share that convention.
//
// Edge set: ordered pairs (i, j) with j inside the n x n window centered at
// i, j != i, window truncated at the image border.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace dpn {

struct LabelSpace {
    std::uint32_t count = 0;

    explicit LabelSpace(std::uint32_t c) : count(c) {
        if (c < 2) throw std::invalid_argument("label space needs at least 2 labels");
    }
};

// d(i,j) = intensity_weight * |I_i - I_j|^2 + spatial_weight * |pos_i - pos_j|^2
struct DistanceParams {
    double intensity_weight = 0.0;  // omega1
    double spatial_weight = 0.0;    // omega2

    void validate() const {
        if (!(std::isfinite(intensity_weight) && intensity_weight >= 0.0) ||
            !(std::isfinite(spatial_weight) && spatial_weight >= 0.0))
            throw std::invalid_argument("distance weights must be finite and non-negative");
    }
};

// Odd square window for the triple penalty sum (extent m).
struct TripleWindow {
    std::uint32_t extent = 1;

    explicit TripleWindow(std::uint32_t m) : extent(m) {
        if (m % 2 == 0) throw std::invalid_argument("triple window extent must be odd");
    }
    std::int32_t radius() const { return std::int32_t(extent / 2); }
};

// Integer intensities in [0, 255], C channels. Integrality is a type
// invariant so the table-lookup filter path can guarantee exact equality
// with the arithmetic path.
class PixelFeatureGrid {
public:
    PixelFeatureGrid(std::uint32_t height, std::uint32_t width, std::uint32_t channels)
        : height_(height), width_(width), channels_(channels),
          values_(std::size_t(height) * width * channels, 0) {
        if (height == 0 || width == 0 || channels == 0)
            throw ShapeError("feature grid extents must be positive");
    }

    static PixelFeatureGrid from_tensor(const Tensor& t) {
        if (t.rank() != 3)
            throw ShapeError("feature tensor must be H x W x C, got " + dims_to_string(t.dims()));
        PixelFeatureGrid g(t.dim(0), t.dim(1), t.dim(2));
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double v = t[i];
            if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v))
                throw std::invalid_argument(
                    "intensities must be integers in [0, 255], got " + std::to_string(v));
            g.values_[i] = std::uint8_t(v);
        }
        return g;
    }

    Tensor to_tensor() const {
        Tensor t({height_, width_, channels_});
        for (std::size_t i = 0; i < values_.size(); ++i) t[i] = double(values_[i]);
        return t;
    }

    std::uint32_t height() const { return height_; }
    std::uint32_t width() const { return width_; }
    std::uint32_t channels() const { return channels_; }

    std::int32_t intensity(std::uint32_t y, std::uint32_t x, std::uint32_t c) const {
        return values_[(std::size_t(y) * width_ + x) * channels_ + c];
    }
    void set(std::uint32_t y, std::uint32_t x, std::uint32_t c, std::uint8_t v) {
        values_[(std::size_t(y) * width_ + x) * channels_ + c] = v;
    }

private:
    std::uint32_t height_, width_, channels_;
    std::vector<std::uint8_t> values_;
};

// Integer sums are formed in int64 and converted once, so any two code paths
// that produce the same isum/ssum yield bitwise-identical distances.
inline double distance(const PixelFeatureGrid& g, std::uint32_t y0, std::uint32_t x0,
                       std::uint32_t y1, std::uint32_t x1, const DistanceParams& p) {
    std::int64_t isum = 0;
    for (std::uint32_t c = 0; c < g.channels(); ++c) {
        const std::int64_t d = std::int64_t(g.intensity(y0, x0, c)) - g.intensity(y1, x1, c);
        isum += d * d;
    }
    const std::int64_t dy = std::int64_t(y0) - std::int64_t(y1);
    const std::int64_t dx = std::int64_t(x0) - std::int64_t(x1);
    return p.intensity_weight * double(isum) + p.spatial_weight * double(dy * dy + dx * dx);
}

// Canonical per-pixel label beliefs: raw values clamped into [floor, 1],
// then renormalized to sum to 1 per pixel. All downstream math reads
// beliefs through this type, so -ln p is always finite.
class UnaryField {
public:
    static constexpr double kProbFloor = 1e-12;

    UnaryField(Tensor raw, const LabelSpace& ls) : probs_(std::move(raw)) {
        if (probs_.rank() != 3)
            throw ShapeError("unary tensor must be H x W x L, got " + dims_to_string(probs_.dims()));
        if (probs_.dim(2) != ls.count)
            throw ShapeError("unary has " + std::to_string(probs_.dim(2)) + " channels, label space has " +
                             std::to_string(ls.count));
        const std::uint32_t l = ls.count;
        for (std::uint32_t y = 0; y < probs_.dim(0); ++y)
            for (std::uint32_t x = 0; x < probs_.dim(1); ++x) {
                double sum = 0.0;
                for (std::uint32_t u = 0; u < l; ++u) {
                    double v = probs_(y, x, u);
                    if (!std::isfinite(v))
                        throw std::invalid_argument("unary beliefs must be finite");
                    v = std::clamp(v, kProbFloor, 1.0);
                    probs_(y, x, u) = v;
                    sum += v;
                }
                for (std::uint32_t u = 0; u < l; ++u) probs_(y, x, u) /= sum;
            }
    }

    std::uint32_t height() const { return probs_.dim(0); }
    std::uint32_t width() const { return probs_.dim(1); }
    std::uint32_t labels() const { return probs_.dim(2); }

    double prob(std::uint32_t y, std::uint32_t x, std::uint32_t u) const { return probs_(y, x, u); }
    // Unary potential of label u at pixel i.
    double neg_log(std::uint32_t y, std::uint32_t x, std::uint32_t u) const {
        return -std::log(probs_(y, x, u));
    }

    const Tensor& probs() const { return probs_; }

private:
    Tensor probs_;
};

// K context components per label pair over an odd n x n offset window.
// Flat storage matches the serialized layout [K*l, n, n, l]: filters are
// grouped by label first (filter index u*K + k), so component blocks for a
// label are contiguous, which is what the block-min pooling stage assumes.
class ContextFilterBank {
public:
    ContextFilterBank(std::uint32_t components, std::uint32_t labels, std::uint32_t window,
                      double fill = 0.0)
        : components_(components), labels_(labels), window_(window),
          costs_(std::size_t(components) * labels * window * window * labels, fill) {
        if (components == 0) throw std::invalid_argument("context bank needs at least one component");
        if (labels < 2) throw std::invalid_argument("context bank needs at least 2 labels");
        if (window % 2 == 0) throw std::invalid_argument("context window extent must be odd");
    }

    std::uint32_t components() const { return components_; }
    std::uint32_t labels() const { return labels_; }
    std::uint32_t window() const { return window_; }
    std::int32_t radius() const { return std::int32_t(window_ / 2); }

    double mu(std::uint32_t k, std::uint32_t u, std::int32_t dy, std::int32_t dx,
              std::uint32_t v) const {
        return costs_[flat(k, u, dy, dx, v)];
    }
    double& mu(std::uint32_t k, std::uint32_t u, std::int32_t dy, std::int32_t dx,
               std::uint32_t v) {
        return costs_[flat(k, u, dy, dx, v)];
    }

    std::vector<double>& values() { return costs_; }
    const std::vector<double>& values() const { return costs_; }

    Tensor to_tensor() const {
        return Tensor({components_ * labels_, window_, window_, labels_},
                      std::vector<double>(costs_));
    }

    // The leading extent K*l is ambiguous on its own, so the component count
    // comes from the caller (the params.meta sidecar in the on-disk layout).
    static ContextFilterBank from_tensor(const Tensor& t, std::uint32_t components) {
        if (t.rank() != 4)
            throw ShapeError("context bank tensor must be [K*l, n, n, l], got " +
                             dims_to_string(t.dims()));
        if (t.dim(1) != t.dim(2))
            throw ShapeError("context bank window must be square, got " + dims_to_string(t.dims()));
        const std::uint32_t labels = t.dim(3);
        if (components == 0 || t.dim(0) != components * labels)
            throw ShapeError("context bank leading extent " + std::to_string(t.dim(0)) +
                             " is not components * labels = " + std::to_string(components) + " * " +
                             std::to_string(labels));
        ContextFilterBank bank(components, labels, t.dim(1));
        bank.costs_ = t.values();
        return bank;
    }

private:
    std::size_t flat(std::uint32_t k, std::uint32_t u, std::int32_t dy, std::int32_t dx,
                     std::uint32_t v) const {
        const std::int32_t r = radius();
        assert(k < components_ && u < labels_ && v < labels_);
        assert(dy >= -r && dy <= r && dx >= -r && dx <= r);
        const std::size_t filter = std::size_t(u) * components_ + k;
        return ((filter * window_ + std::size_t(dy + r)) * window_ + std::size_t(dx + r)) * labels_ +
               v;
    }

    std::uint32_t components_, labels_, window_;
    std::vector<double> costs_;
};

namespace detail {

// sum over the m x m window of (y, x) of d((y,x), z) * weights(z, v),
// window truncated at the border. The triple table and every update
// schedule share this loop, with weights bound to either the unary beliefs
// or the current marginals.
inline Tensor distance_weighted_mass(const Tensor& weights, const PixelFeatureGrid& feats,
                                     const DistanceParams& dp, const TripleWindow& tw) {
    const std::uint32_t h = weights.dim(0), w = weights.dim(1), l = weights.dim(2);
    const std::int32_t r = tw.radius();
    Tensor table({h, w, l});
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x)
            for (std::uint32_t v = 0; v < l; ++v) {
                double acc = 0.0;
                for (std::int32_t dy = -r; dy <= r; ++dy) {
                    const std::int64_t zy = std::int64_t(y) + dy;
                    if (zy < 0 || zy >= h) continue;
                    for (std::int32_t dx = -r; dx <= r; ++dx) {
                        const std::int64_t zx = std::int64_t(x) + dx;
                        if (zx < 0 || zx >= w) continue;
                        acc += distance(feats, y, x, std::uint32_t(zy), std::uint32_t(zx), dp) *
                               weights(std::uint32_t(zy), std::uint32_t(zx), v);
                    }
                }
                table(y, x, v) = acc;
            }
    return table;
}

}  // namespace detail

// T(j, v): the label-v triple penalty mass around pixel j, fixed by the
// unary field. H x W x L.
inline Tensor triple_penalty_table(const UnaryField& unary, const PixelFeatureGrid& feats,
                                   const DistanceParams& dp, const TripleWindow& tw) {
    dp.validate();
    if (feats.height() != unary.height() || feats.width() != unary.width())
        throw ShapeError("feature grid and unary field disagree on image extents");
    return detail::distance_weighted_mass(unary.probs(), feats, dp, tw);
}

namespace detail {

inline void check_model_shapes(const UnaryField& unary, const PixelFeatureGrid& feats,
                               const ContextFilterBank& ctx) {
    if (feats.height() != unary.height() || feats.width() != unary.width())
        throw ShapeError("feature grid and unary field disagree on image extents");
    if (ctx.labels() != unary.labels())
        throw ShapeError("context bank labels " + std::to_string(ctx.labels()) +
                         " vs unary labels " + std::to_string(unary.labels()));
}

}  // namespace detail

// Energy of a hard labeling. Pairwise part evaluates the frozen triple
// table, with the component min taken per pixel over its whole window sum.
inline double energy(const LabelMap& y, const UnaryField& unary, const ContextFilterBank& ctx,
                     const TripleWindow& tw, const PixelFeatureGrid& feats,
                     const DistanceParams& dp) {
    detail::check_model_shapes(unary, feats, ctx);
    if (y.height() != unary.height() || y.width() != unary.width())
        throw ShapeError("label map and unary field disagree on image extents");
    const std::uint32_t h = unary.height(), w = unary.width(), l = unary.labels();
    for (std::uint32_t p = 0; p < y.size(); ++p)
        if (y.values()[p] >= l)
            throw std::out_of_range("label " + std::to_string(y.values()[p]) +
                                    " outside label space of size " + std::to_string(l));

    const Tensor table = triple_penalty_table(unary, feats, dp, tw);
    const std::int32_t r = ctx.radius();
    double total = 0.0;
    for (std::uint32_t yy = 0; yy < h; ++yy)
        for (std::uint32_t xx = 0; xx < w; ++xx) {
            const std::uint32_t u = y.at(yy, xx);
            total += unary.neg_log(yy, xx, u);
            double best = std::numeric_limits<double>::infinity();
            for (std::uint32_t k = 0; k < ctx.components(); ++k) {
                double acc = 0.0;
                for (std::int32_t dy = -r; dy <= r; ++dy) {
                    const std::int64_t jy = std::int64_t(yy) + dy;
                    if (jy < 0 || jy >= h) continue;
                    for (std::int32_t dx = -r; dx <= r; ++dx) {
                        if (dy == 0 && dx == 0) continue;
                        const std::int64_t jx = std::int64_t(xx) + dx;
                        if (jx < 0 || jx >= w) continue;
                        const std::uint32_t v = y.at(std::uint32_t(jy), std::uint32_t(jx));
                        acc += ctx.mu(k, u, dy, dx, v) * table(std::uint32_t(jy), std::uint32_t(jx), v);
                    }
                }
                best = std::min(best, acc);
            }
            total += best;
        }
    return total;
}

// Mean-field free energy of a marginal field q (H x W x L, rows on the
// simplex). Expected unary + expected pairwise (mixture min per pixel and
// label, matching energy() on one-hot q) + negative entropy, with the
// 0 * ln 0 = 0 convention.
inline double free_energy(const Tensor& q, const UnaryField& unary, const ContextFilterBank& ctx,
                          const TripleWindow& tw, const PixelFeatureGrid& feats,
                          const DistanceParams& dp) {
    detail::check_model_shapes(unary, feats, ctx);
    ensure_same_shape(q, unary.probs(), "free_energy marginals");
    const std::uint32_t h = unary.height(), w = unary.width(), l = unary.labels();
    const Tensor table = triple_penalty_table(unary, feats, dp, tw);
    const std::int32_t r = ctx.radius();

    double total = 0.0;
    for (std::uint32_t yy = 0; yy < h; ++yy)
        for (std::uint32_t xx = 0; xx < w; ++xx)
            for (std::uint32_t u = 0; u < l; ++u) {
                const double qu = q(yy, xx, u);
                if (qu < 0.0)
                    throw std::invalid_argument("marginals must be non-negative");
                total += qu * unary.neg_log(yy, xx, u);
                if (qu > 0.0) total += qu * std::log(qu);

                double best = std::numeric_limits<double>::infinity();
                for (std::uint32_t k = 0; k < ctx.components(); ++k) {
                    double acc = 0.0;
                    for (std::int32_t dy = -r; dy <= r; ++dy) {
                        const std::int64_t jy = std::int64_t(yy) + dy;
                        if (jy < 0 || jy >= h) continue;
                        for (std::int32_t dx = -r; dx <= r; ++dx) {
                            if (dy == 0 && dx == 0) continue;
                            const std::int64_t jx = std::int64_t(xx) + dx;
                            if (jx < 0 || jx >= w) continue;
                            for (std::uint32_t v = 0; v < l; ++v)
                                acc += q(std::uint32_t(jy), std::uint32_t(jx), v) *
                                       ctx.mu(k, u, dy, dx, v) *
                                       table(std::uint32_t(jy), std::uint32_t(jx), v);
                        }
                    }
                    best = std::min(best, acc);
                }
                total += qu * best;
            }
    return total;
}

}  // namespace dpn
