#pragma once

// Mean-field update schedules over the triple-penalty mixture model. These
// are the reference implementations the filtering layer stack is checked
// against: straightforward per-pixel loops, no shared intermediates beyond
// the window mass table.
//
// Two schedules:
//
//   parallel          every pixel recomputed from a snapshot of the field.
//                     The coupling includes the window's center offset,
//                     mirroring the context convolution, whose filter has a
//                     tap at (0, 0).
//
//   sequential_raster pixels updated in place in raster order. One pass is
//                     exact block coordinate descent on free_energy(): the
//                     mixture component choice is frozen per (pixel, label)
//                     at the pass's entry marginals (a surrogate that upper
//                     bounds the objective and touches it there), then each
//                     visited pixel minimizes the surrogate exactly over its
//                     own distribution, including the coupling back from
//                     neighbors whose windows contain it. The free-energy
//                     trace is therefore non-increasing when damping is 1.
//                     Self-pairs are excluded, matching free_energy().
//
// kernel-source selects whether the per-pixel factor of the pairwise term
// is the unary belief (the fixed convolution kernels) or the current
// marginal. The sequential schedule ignores it: the objective it descends
// fixes that factor at the unary field.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mrf.hpp"
#include "parallel.hpp"

namespace dpn {

using MarginalField = Tensor;  // H x W x L, each pixel row on the simplex

enum class UpdateOrder { parallel, sequential_raster };
enum class KernelSource { fixed_unary, current_q };

struct MfSchedule {
    std::uint32_t iterations = 1;
    UpdateOrder order = UpdateOrder::parallel;
    double damping = 1.0;  // 1 = undamped; new = damping * candidate + (1 - damping) * old

    void validate() const {
        if (iterations == 0) throw std::invalid_argument("schedule needs at least one iteration");
        if (!(damping >= 0.0 && damping <= 1.0))
            throw std::invalid_argument("damping must lie in [0, 1]");
    }
};

inline MarginalField mf_init(const UnaryField& unary) { return unary.probs(); }

namespace detail {

// softmax of (logits - max) into q's pixel row, then the damping blend.
inline void write_pixel_update(MarginalField& q, std::uint32_t y, std::uint32_t x,
                               const std::vector<double>& neg_energy, double damping) {
    const std::uint32_t l = std::uint32_t(neg_energy.size());
    double peak = neg_energy[0];
    for (std::uint32_t u = 1; u < l; ++u) peak = std::max(peak, neg_energy[u]);
    double sum = 0.0;
    for (std::uint32_t u = 0; u < l; ++u) sum += std::exp(neg_energy[u] - peak);
    if (damping == 1.0) {
        for (std::uint32_t u = 0; u < l; ++u) q(y, x, u) = std::exp(neg_energy[u] - peak) / sum;
        return;
    }
    double blended_sum = 0.0;
    for (std::uint32_t u = 0; u < l; ++u) {
        const double cand = std::exp(neg_energy[u] - peak) / sum;
        const double blended = damping * cand + (1.0 - damping) * q(y, x, u);
        q(y, x, u) = blended;
        blended_sum += blended;
    }
    for (std::uint32_t u = 0; u < l; ++u) q(y, x, u) /= blended_sum;
}

}  // namespace detail

// One schedule pass with an arbitrary pairwise potential
// psi(y_i, x_i, u, y_j, x_j, v), edges = n x n window minus the center.
// Parallel applies the closed-form coupled update from a snapshot; the
// sequential schedule is exact coordinate descent, so its coupling also
// carries the reversed term psi(j, v, i, u).
template <typename Psi>
MarginalField mf_update_generic(const MarginalField& q, const UnaryField& unary, Psi&& psi,
                                std::uint32_t window, const MfSchedule& schedule) {
    schedule.validate();
    ensure_same_shape(q, unary.probs(), "mf_update_generic marginals");
    if (window % 2 == 0) throw std::invalid_argument("pairwise window extent must be odd");
    const std::uint32_t h = unary.height(), w = unary.width(), l = unary.labels();
    const std::int32_t r = std::int32_t(window / 2);

    MarginalField out = q;
    const MarginalField& src = (schedule.order == UpdateOrder::parallel) ? q : out;
    const bool reverse = schedule.order == UpdateOrder::sequential_raster;

    std::vector<double> neg_energy(l);
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            for (std::uint32_t u = 0; u < l; ++u) {
                double coupling = 0.0;
                for (std::int32_t dy = -r; dy <= r; ++dy) {
                    const std::int64_t jy = std::int64_t(y) + dy;
                    if (jy < 0 || jy >= h) continue;
                    for (std::int32_t dx = -r; dx <= r; ++dx) {
                        if (dy == 0 && dx == 0) continue;
                        const std::int64_t jx = std::int64_t(x) + dx;
                        if (jx < 0 || jx >= w) continue;
                        const std::uint32_t jyy = std::uint32_t(jy), jxx = std::uint32_t(jx);
                        for (std::uint32_t v = 0; v < l; ++v) {
                            double pair = psi(y, x, u, jyy, jxx, v);
                            if (reverse) pair += psi(jyy, jxx, v, y, x, u);
                            coupling += src(jyy, jxx, v) * pair;
                        }
                    }
                }
                neg_energy[u] = std::log(unary.prob(y, x, u)) - coupling;
            }
            detail::write_pixel_update(out, y, x, neg_energy, schedule.damping);
        }
    return out;
}

// One pass of the triple-penalty mixture update. See the header comment for
// schedule semantics; threads only parallelizes the snapshot schedule, and
// does not change results.
inline MarginalField mf_update_triple(const MarginalField& q, const UnaryField& unary,
                                      const ContextFilterBank& ctx, const TripleWindow& tw,
                                      const PixelFeatureGrid& feats, const DistanceParams& dp,
                                      const MfSchedule& schedule,
                                      KernelSource source = KernelSource::fixed_unary,
                                      unsigned threads = 1) {
    schedule.validate();
    dp.validate();
    detail::check_model_shapes(unary, feats, ctx);
    ensure_same_shape(q, unary.probs(), "mf_update_triple marginals");
    const std::uint32_t h = unary.height(), w = unary.width(), l = unary.labels();
    const std::int32_t r = ctx.radius();
    const std::uint32_t K = ctx.components();

    if (schedule.order == UpdateOrder::parallel) {
        // mass(j, v) = sum_z d(j, z) q_z^v over the m x m window; the kernel
        // factor comes from the unary field or the current marginals.
        const Tensor mass = detail::distance_weighted_mass(q, feats, dp, tw);
        const Tensor& kernel_weights =
            (source == KernelSource::fixed_unary) ? unary.probs() : q;
        MarginalField out = q;
        detail::parallel_rows(h, threads, [&](std::uint32_t y) {
            std::vector<double> neg_energy(l);
            for (std::uint32_t x = 0; x < w; ++x) {
                for (std::uint32_t u = 0; u < l; ++u) {
                    double best = std::numeric_limits<double>::infinity();
                    for (std::uint32_t k = 0; k < K; ++k) {
                        double acc = 0.0;
                        for (std::int32_t dy = -r; dy <= r; ++dy) {
                            const std::int64_t jy = std::int64_t(y) + dy;
                            if (jy < 0 || jy >= h) continue;
                            for (std::int32_t dx = -r; dx <= r; ++dx) {
                                const std::int64_t jx = std::int64_t(x) + dx;
                                if (jx < 0 || jx >= w) continue;
                                const std::uint32_t jyy = std::uint32_t(jy), jxx = std::uint32_t(jx);
                                for (std::uint32_t v = 0; v < l; ++v)
                                    acc += ctx.mu(k, u, dy, dx, v) * kernel_weights(jyy, jxx, v) *
                                           mass(jyy, jxx, v);
                            }
                        }
                        best = std::min(best, acc);
                    }
                    neg_energy[u] = std::log(unary.prob(y, x, u)) - best;
                }
                detail::write_pixel_update(out, y, x, neg_energy, schedule.damping);
            }
        });
        return out;
    }

    // Sequential raster pass. The component choice is frozen at the entry
    // marginals for the whole pass; each pixel then takes the exact
    // coordinate minimizer, whose own-plus-reverse coupling reads the
    // mid-pass field.
    const Tensor table = triple_penalty_table(unary, feats, dp, tw);
    MarginalField out = q;

    std::vector<std::uint32_t> frozen(std::size_t(h) * w * l);
    auto pick_component = [&](std::uint32_t y, std::uint32_t x, std::uint32_t u) {
        std::uint32_t best_k = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::uint32_t k = 0; k < K; ++k) {
            double acc = 0.0;
            for (std::int32_t dy = -r; dy <= r; ++dy) {
                const std::int64_t jy = std::int64_t(y) + dy;
                if (jy < 0 || jy >= h) continue;
                for (std::int32_t dx = -r; dx <= r; ++dx) {
                    if (dy == 0 && dx == 0) continue;
                    const std::int64_t jx = std::int64_t(x) + dx;
                    if (jx < 0 || jx >= w) continue;
                    const std::uint32_t jyy = std::uint32_t(jy), jxx = std::uint32_t(jx);
                    for (std::uint32_t v = 0; v < l; ++v)
                        acc += out(jyy, jxx, v) * ctx.mu(k, u, dy, dx, v) * table(jyy, jxx, v);
                }
            }
            if (acc < best) {
                best = acc;
                best_k = k;
            }
        }
        return best_k;
    };
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x)
            for (std::uint32_t u = 0; u < l; ++u)
                frozen[(std::size_t(y) * w + x) * l + u] = pick_component(y, x, u);

    std::vector<double> neg_energy(l);
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            for (std::uint32_t u = 0; u < l; ++u) {
                const std::uint32_t k_own = frozen[(std::size_t(y) * w + x) * l + u];
                double coupling = 0.0;
                for (std::int32_t dy = -r; dy <= r; ++dy) {
                    const std::int64_t jy = std::int64_t(y) + dy;
                    if (jy < 0 || jy >= h) continue;
                    for (std::int32_t dx = -r; dx <= r; ++dx) {
                        if (dy == 0 && dx == 0) continue;
                        const std::int64_t jx = std::int64_t(x) + dx;
                        if (jx < 0 || jx >= w) continue;
                        const std::uint32_t jyy = std::uint32_t(jy), jxx = std::uint32_t(jx);
                        for (std::uint32_t v = 0; v < l; ++v) {
                            // this pixel's window term plus the neighbor's
                            // term that reads this pixel at offset -(dy, dx)
                            const std::uint32_t k_rev = frozen[(std::size_t(jyy) * w + jxx) * l + v];
                            coupling += out(jyy, jxx, v) *
                                        (ctx.mu(k_own, u, dy, dx, v) * table(jyy, jxx, v) +
                                         ctx.mu(k_rev, v, -dy, -dx, u) * table(y, x, u));
                        }
                    }
                }
                neg_energy[u] = std::log(unary.prob(y, x, u)) - coupling;
            }
            detail::write_pixel_update(out, y, x, neg_energy, schedule.damping);
        }
    return out;
}

// Collapses a single-component, single-offset bank to its l x l label
// co-occurrence table.
inline Tensor reduce_to_cooccurrence(const ContextFilterBank& ctx) {
    if (ctx.components() != 1 || ctx.window() != 1)
        throw ShapeError("co-occurrence reduction needs K = 1 and a 1 x 1 context window, got K = " +
                         std::to_string(ctx.components()) + ", n = " + std::to_string(ctx.window()));
    const std::uint32_t l = ctx.labels();
    Tensor table({l, l});
    for (std::uint32_t u = 0; u < l; ++u)
        for (std::uint32_t v = 0; v < l; ++v) table(u, v) = ctx.mu(0, u, 0, 0, v);
    return table;
}

// One parallel pass under a plain co-occurrence table: the K = 1, n = 1
// special case of mf_update_triple, where the context window collapses to
// the center and the pairwise term becomes
// mu(u, v) * w_i^v * sum_z d(i, z) q_z^v.
inline MarginalField mf_update_cooccurrence(const MarginalField& q, const UnaryField& unary,
                                            const Tensor& cooccurrence, const TripleWindow& tw,
                                            const PixelFeatureGrid& feats, const DistanceParams& dp,
                                            KernelSource source = KernelSource::fixed_unary,
                                            double damping = 1.0, unsigned threads = 1) {
    dp.validate();
    ensure_same_shape(q, unary.probs(), "mf_update_cooccurrence marginals");
    const std::uint32_t l = unary.labels();
    if (cooccurrence.rank() != 2 || cooccurrence.dim(0) != l || cooccurrence.dim(1) != l)
        throw ShapeError("co-occurrence table must be l x l, got " +
                         dims_to_string(cooccurrence.dims()));
    if (!(damping >= 0.0 && damping <= 1.0))
        throw std::invalid_argument("damping must lie in [0, 1]");

    const std::uint32_t h = unary.height(), w = unary.width();
    const Tensor mass = detail::distance_weighted_mass(q, feats, dp, tw);
    const Tensor& kernel_weights = (source == KernelSource::fixed_unary) ? unary.probs() : q;
    MarginalField out = q;
    detail::parallel_rows(h, threads, [&](std::uint32_t y) {
        std::vector<double> neg_energy(l);
        for (std::uint32_t x = 0; x < w; ++x) {
            for (std::uint32_t u = 0; u < l; ++u) {
                double acc = 0.0;
                for (std::uint32_t v = 0; v < l; ++v)
                    acc += cooccurrence(u, v) * kernel_weights(y, x, v) * mass(y, x, v);
                neg_energy[u] = std::log(unary.prob(y, x, u)) - acc;
            }
            detail::write_pixel_update(out, y, x, neg_energy, damping);
        }
    });
    return out;
}

struct MfRun {
    MarginalField marginals;
    std::vector<double> free_energy_trace;  // entry 0 is the initial field
};

inline MfRun run_mf(const MarginalField& init, const UnaryField& unary,
                    const ContextFilterBank& ctx, const TripleWindow& tw,
                    const PixelFeatureGrid& feats, const DistanceParams& dp,
                    const MfSchedule& schedule, KernelSource source = KernelSource::fixed_unary,
                    unsigned threads = 1) {
    schedule.validate();
    MfRun run;
    run.marginals = init;
    run.free_energy_trace.reserve(schedule.iterations + 1);
    run.free_energy_trace.push_back(free_energy(run.marginals, unary, ctx, tw, feats, dp));
    for (std::uint32_t it = 0; it < schedule.iterations; ++it) {
        run.marginals =
            mf_update_triple(run.marginals, unary, ctx, tw, feats, dp, schedule, source, threads);
        run.free_energy_trace.push_back(free_energy(run.marginals, unary, ctx, tw, feats, dp));
    }
    return run;
}

inline void write_free_energy_csv(const std::vector<double>& trace, std::ostream& os) {
    os << "iter,free_energy\n";
    char buf[64];
    for (std::size_t i = 0; i < trace.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, trace[i]);
        os << buf;
    }
}

}  // namespace dpn
