#pragma once

// Shared test machinery: seeded random model instances, an independent
// brute-force implementation of one parallel update step, independent
// reimplementations of the metrics, finite-difference helpers, and process
// plumbing for driving the command-line binary.
//
// The brute-force code here deliberately avoids the library's intermediate
// tables and loop structure; it recomputes everything from the definitions
// with plain nested loops so agreement is evidence, not tautology.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include <dpn/dpn.hpp>

namespace support {

struct ModelInstance {
    dpn::UnaryField unary;
    dpn::PixelFeatureGrid feats;
    dpn::ContextFilterBank bank;
    dpn::TripleWindow window;
    dpn::DistanceParams dist;
    dpn::LinearActivation act;
};

struct InstanceOptions {
    std::uint32_t h_min = 4, h_max = 16;
    std::uint32_t w_min = 4, w_max = 16;
    std::uint32_t l_min = 2, l_max = 4;
    std::uint32_t k_min = 1, k_max = 3;
    std::vector<std::uint32_t> context_windows{1, 3, 5, 7};
    std::vector<std::uint32_t> triple_windows{1, 3, 5, 7};
    std::uint32_t channels_min = 1, channels_max = 3;
    std::uint32_t intensity_max = 255;
    double mu_scale = 0.25;
    double omega1_max = 2e-5;
    double omega2_max = 1e-3;
    double act_scale_min = 1.0, act_scale_max = 1.0;
    double act_offset_min = 0.0, act_offset_max = 0.0;
};

inline ModelInstance random_instance(std::mt19937_64& rng, const InstanceOptions& opt = {}) {
    auto pick_u32 = [&](std::uint32_t lo, std::uint32_t hi) {
        return std::uniform_int_distribution<std::uint32_t>(lo, hi)(rng);
    };
    const std::uint32_t h = pick_u32(opt.h_min, opt.h_max);
    const std::uint32_t w = pick_u32(opt.w_min, opt.w_max);
    const std::uint32_t l = pick_u32(opt.l_min, opt.l_max);
    const std::uint32_t K = pick_u32(opt.k_min, opt.k_max);
    const std::uint32_t n =
        opt.context_windows[pick_u32(0, std::uint32_t(opt.context_windows.size() - 1))];
    const std::uint32_t m =
        opt.triple_windows[pick_u32(0, std::uint32_t(opt.triple_windows.size() - 1))];
    const std::uint32_t ch = pick_u32(opt.channels_min, opt.channels_max);

    dpn::Tensor raw({h, w, l});
    std::uniform_real_distribution<double> belief(0.02, 1.0);
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = belief(rng);

    dpn::PixelFeatureGrid feats(h, w, ch);
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x)
            for (std::uint32_t c = 0; c < ch; ++c)
                feats.set(y, x, c, std::uint8_t(pick_u32(0, opt.intensity_max)));

    dpn::ContextFilterBank bank(K, l, n);
    std::uniform_real_distribution<double> mu(-opt.mu_scale, opt.mu_scale);
    for (double& v : bank.values()) v = mu(rng);

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    dpn::DistanceParams dist{unit(rng) * opt.omega1_max, unit(rng) * opt.omega2_max};
    dpn::LinearActivation act{
        opt.act_scale_min + unit(rng) * (opt.act_scale_max - opt.act_scale_min),
        opt.act_offset_min + unit(rng) * (opt.act_offset_max - opt.act_offset_min)};

    return ModelInstance{dpn::UnaryField(std::move(raw), dpn::LabelSpace(l)), std::move(feats),
                         std::move(bank), dpn::TripleWindow(m), dist, act};
}

// One parallel update step from the definitions: for every pixel and label,
// the mixture min over whole-window sums of mu * (kernel weight) * (distance
// mass), with the activation applied to the per-neighbor filter response.
// Distances are recomputed inline from raw intensities.
inline dpn::Tensor brute_parallel_step(const ModelInstance& inst, const dpn::Tensor& q,
                                       dpn::KernelSource source = dpn::KernelSource::fixed_unary) {
    const std::uint32_t h = inst.unary.height(), w = inst.unary.width(), l = inst.unary.labels();
    const std::int32_t rn = inst.bank.radius();
    const std::int32_t rm = inst.window.radius();
    const std::uint32_t ch = inst.feats.channels();
    dpn::Tensor out({h, w, l});

    auto dist_raw = [&](std::int64_t ay, std::int64_t ax, std::int64_t by, std::int64_t bx) {
        std::int64_t isum = 0;
        for (std::uint32_t c = 0; c < ch; ++c) {
            const std::int64_t d = std::int64_t(inst.feats.intensity(std::uint32_t(ay),
                                                                     std::uint32_t(ax), c)) -
                                   inst.feats.intensity(std::uint32_t(by), std::uint32_t(bx), c);
            isum += d * d;
        }
        const std::int64_t sy = ay - by, sx = ax - bx;
        return inst.dist.intensity_weight * double(isum) +
               inst.dist.spatial_weight * double(sy * sy + sx * sx);
    };

    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            std::vector<double> logit(l);
            for (std::uint32_t u = 0; u < l; ++u) {
                double best = std::numeric_limits<double>::infinity();
                for (std::uint32_t k = 0; k < inst.bank.components(); ++k) {
                    double acc = 0.0;
                    for (std::int32_t dy = -rn; dy <= rn; ++dy)
                        for (std::int32_t dx = -rn; dx <= rn; ++dx) {
                            const std::int64_t jy = std::int64_t(y) + dy;
                            const std::int64_t jx = std::int64_t(x) + dx;
                            if (jy < 0 || jy >= h || jx < 0 || jx >= w) continue;
                            for (std::uint32_t v = 0; v < l; ++v) {
                                double mass = 0.0;
                                for (std::int32_t zy = -rm; zy <= rm; ++zy)
                                    for (std::int32_t zx = -rm; zx <= rm; ++zx) {
                                        const std::int64_t ty = jy + zy, tx = jx + zx;
                                        if (ty < 0 || ty >= h || tx < 0 || tx >= w) continue;
                                        mass += dist_raw(jy, jx, ty, tx) *
                                                q(std::uint32_t(ty), std::uint32_t(tx), v);
                                    }
                                const double kernel_w =
                                    source == dpn::KernelSource::fixed_unary
                                        ? inst.unary.prob(std::uint32_t(jy), std::uint32_t(jx), v)
                                        : q(std::uint32_t(jy), std::uint32_t(jx), v);
                                // the activation applies per (neighbor, label)
                                // filter response
                                const double response =
                                    inst.act.scale * (kernel_w * mass) + inst.act.offset;
                                acc += inst.bank.mu(k, u, dy, dx, v) * response;
                            }
                        }
                    best = std::min(best, acc);
                }
                logit[u] = std::log(inst.unary.prob(y, x, u)) - best;
            }
            double peak = logit[0];
            for (std::uint32_t u = 1; u < l; ++u) peak = std::max(peak, logit[u]);
            double sum = 0.0;
            for (std::uint32_t u = 0; u < l; ++u) sum += std::exp(logit[u] - peak);
            for (std::uint32_t u = 0; u < l; ++u) out(y, x, u) = std::exp(logit[u] - peak) / sum;
        }
    return out;
}

inline double max_abs_diff(const dpn::Tensor& a, const dpn::Tensor& b) {
    if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
    return worst;
}

inline bool bitwise_equal(const dpn::Tensor& a, const dpn::Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
    return true;
}

// ---- independent metric implementations ----

inline double brute_miou_mean(const std::vector<dpn::LabelMap>& preds,
                              const std::vector<dpn::LabelMap>& gts, std::uint32_t labels,
                              std::optional<std::uint32_t> ignore = {}) {
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::uint32_t c = 0; c < labels; ++c) {
        std::uint64_t inter = 0, uni = 0;
        for (std::size_t i = 0; i < preds.size(); ++i)
            for (std::uint32_t y = 0; y < gts[i].height(); ++y)
                for (std::uint32_t x = 0; x < gts[i].width(); ++x) {
                    if (ignore && gts[i].at(y, x) == *ignore) continue;
                    const bool inp = preds[i].at(y, x) == c;
                    const bool ing = gts[i].at(y, x) == c;
                    inter += inp && ing;
                    uni += inp || ing;
                }
        if (uni) {
            sum += double(inter) / double(uni);
            ++counted;
        }
    }
    return counted ? sum / double(counted) : std::numeric_limits<double>::quiet_NaN();
}

inline double brute_tagging_accuracy(const std::vector<dpn::LabelMap>& preds,
                                     const std::vector<dpn::LabelMap>& gts, std::uint32_t labels,
                                     std::optional<std::uint32_t> ignore = {},
                                     double threshold = 0.001) {
    std::size_t agree = 0, total = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        std::uint64_t valid = 0;
        for (std::uint32_t y = 0; y < gts[i].height(); ++y)
            for (std::uint32_t x = 0; x < gts[i].width(); ++x)
                if (!ignore || gts[i].at(y, x) != *ignore) ++valid;
        for (std::uint32_t c = 0; c < labels; ++c) {
            auto tagged = [&](const dpn::LabelMap& map) {
                std::uint64_t count = 0;
                for (std::uint32_t y = 0; y < map.height(); ++y)
                    for (std::uint32_t x = 0; x < map.width(); ++x) {
                        if (ignore && gts[i].at(y, x) == *ignore) continue;
                        count += map.at(y, x) == c;
                    }
                return count > 0 && double(count) >= threshold * double(valid);
            };
            agree += tagged(preds[i]) == tagged(gts[i]);
            ++total;
        }
    }
    return double(agree) / double(total);
}

// Components via label propagation (iterate until no pixel changes owner),
// a deliberately different algorithm from the library's search.
struct BruteBox {
    std::int64_t y0, x0, y1, x1;
};

inline std::vector<BruteBox> brute_components(const dpn::LabelMap& map, const dpn::LabelMap& gt,
                                              std::uint32_t c, std::optional<std::uint32_t> ignore) {
    const std::uint32_t h = map.height(), w = map.width();
    std::vector<std::int64_t> owner(std::size_t(h) * w, -1);
    std::int64_t next = 0;
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x)
            if (map.at(y, x) == c && (!ignore || gt.at(y, x) != *ignore))
                owner[std::size_t(y) * w + x] = next++;
    bool changed = next > 0;
    while (changed) {
        changed = false;
        for (std::uint32_t y = 0; y < h; ++y)
            for (std::uint32_t x = 0; x < w; ++x) {
                const std::size_t at = std::size_t(y) * w + x;
                if (owner[at] < 0) continue;
                auto relax = [&](std::int64_t ny, std::int64_t nx) {
                    if (ny < 0 || ny >= h || nx < 0 || nx >= w) return;
                    const std::size_t nat = std::size_t(ny) * w + std::size_t(nx);
                    if (owner[nat] >= 0 && owner[nat] < owner[at]) {
                        owner[at] = owner[nat];
                        changed = true;
                    }
                };
                relax(std::int64_t(y) - 1, x);
                relax(std::int64_t(y) + 1, x);
                relax(y, std::int64_t(x) - 1);
                relax(y, std::int64_t(x) + 1);
            }
    }
    std::vector<std::int64_t> ids;
    for (std::int64_t o : owner)
        if (o >= 0 && std::find(ids.begin(), ids.end(), o) == ids.end()) ids.push_back(o);
    std::sort(ids.begin(), ids.end());
    std::vector<BruteBox> boxes;
    for (std::int64_t id : ids) {
        BruteBox box{std::int64_t(h), std::int64_t(w), -1, -1};
        for (std::uint32_t y = 0; y < h; ++y)
            for (std::uint32_t x = 0; x < w; ++x)
                if (owner[std::size_t(y) * w + x] == id) {
                    box.y0 = std::min<std::int64_t>(box.y0, y);
                    box.y1 = std::max<std::int64_t>(box.y1, y);
                    box.x0 = std::min<std::int64_t>(box.x0, x);
                    box.x1 = std::max<std::int64_t>(box.x1, x);
                }
        boxes.push_back(box);
    }
    return boxes;
}

inline double brute_box_iou(const BruteBox& a, const BruteBox& b) {
    const std::int64_t y0 = std::max(a.y0, b.y0), x0 = std::max(a.x0, b.x0);
    const std::int64_t y1 = std::min(a.y1, b.y1), x1 = std::min(a.x1, b.x1);
    if (y1 < y0 || x1 < x0) return 0.0;
    const double inter = double(y1 - y0 + 1) * double(x1 - x0 + 1);
    const double aa = double(a.y1 - a.y0 + 1) * double(a.x1 - a.x0 + 1);
    const double bb = double(b.y1 - b.y0 + 1) * double(b.x1 - b.x0 + 1);
    return inter / (aa + bb - inter);
}

struct BruteMatch {
    std::vector<double> ious;
    std::size_t unmatched = 0;
    bool localized = false;
};

// Greedy matching by repeated global-max scans over the remaining pairs.
inline BruteMatch brute_match(const std::vector<BruteBox>& pb, const std::vector<BruteBox>& gb) {
    BruteMatch match;
    std::vector<bool> pu(pb.size(), false), gu(gb.size(), false);
    while (true) {
        double best = 0.0;
        std::size_t bp = 0, bg = 0;
        bool found = false;
        for (std::size_t p = 0; p < pb.size(); ++p) {
            if (pu[p]) continue;
            for (std::size_t g = 0; g < gb.size(); ++g) {
                if (gu[g]) continue;
                const double iou = brute_box_iou(pb[p], gb[g]);
                if (iou > 0.0 && (!found || iou > best)) {
                    best = iou;
                    bp = p;
                    bg = g;
                    found = true;
                }
            }
        }
        if (!found) break;
        pu[bp] = gu[bg] = true;
        match.ious.push_back(best);
        if (best >= 0.5) match.localized = true;
    }
    for (bool u : pu)
        if (!u) ++match.unmatched;
    for (bool u : gu)
        if (!u) ++match.unmatched;
    return match;
}

inline double brute_localization_mean(const std::vector<dpn::LabelMap>& preds,
                                      const std::vector<dpn::LabelMap>& gts, std::uint32_t labels,
                                      std::optional<std::uint32_t> ignore = {}) {
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::uint32_t c = 0; c < labels; ++c) {
        double iou_sum = 0.0;
        std::size_t units = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            const BruteMatch match = brute_match(brute_components(preds[i], gts[i], c, ignore),
                                                 brute_components(gts[i], gts[i], c, ignore));
            for (double iou : match.ious) iou_sum += iou;
            units += match.ious.size() + match.unmatched;
        }
        if (units) {
            sum += iou_sum / double(units);
            ++counted;
        }
    }
    return counted ? sum / double(counted) : std::numeric_limits<double>::quiet_NaN();
}

inline double brute_boundary_mean(const std::vector<dpn::LabelMap>& preds,
                                  const std::vector<dpn::LabelMap>& gts, std::uint32_t labels,
                                  std::uint32_t tau, std::optional<std::uint32_t> ignore = {}) {
    auto boundary_pixels = [&](const dpn::LabelMap& map, const dpn::LabelMap& gt, std::uint32_t c) {
        std::vector<std::pair<std::int64_t, std::int64_t>> pts;
        const std::int64_t h = map.height(), w = map.width();
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                if (map.at(std::uint32_t(y), std::uint32_t(x)) != c) continue;
                if (ignore && gt.at(std::uint32_t(y), std::uint32_t(x)) == *ignore) continue;
                bool edge = false;
                const std::int64_t ns[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
                for (const auto& nb : ns) {
                    if (nb[0] < 0 || nb[0] >= h || nb[1] < 0 || nb[1] >= w) {
                        edge = true;
                    } else {
                        const std::uint32_t ny = std::uint32_t(nb[0]), nx = std::uint32_t(nb[1]);
                        if (ignore && gt.at(ny, nx) == *ignore) continue;
                        if (map.at(ny, nx) != c) edge = true;
                    }
                    if (edge) break;
                }
                if (edge) pts.emplace_back(y, x);
            }
        return pts;
    };
    auto hits = [&](const auto& from, const auto& against) {
        std::size_t hit = 0;
        for (const auto& a : from) {
            bool found = false;
            for (const auto& b : against) {
                if (std::max(std::llabs(a.first - b.first), std::llabs(a.second - b.second)) <=
                    std::int64_t(tau)) {
                    found = true;
                    break;
                }
            }
            hit += found;
        }
        return hit;
    };

    double sum = 0.0;
    std::size_t counted = 0;
    for (std::uint32_t c = 0; c < labels; ++c) {
        std::size_t ph = 0, pa = 0, gh = 0, ga = 0;
        bool any = false;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            const BruteMatch match = brute_match(brute_components(preds[i], gts[i], c, ignore),
                                                 brute_components(gts[i], gts[i], c, ignore));
            if (!match.localized) continue;
            any = true;
            const auto pb = boundary_pixels(preds[i], gts[i], c);
            const auto gb = boundary_pixels(gts[i], gts[i], c);
            ph += hits(pb, gb);
            pa += pb.size();
            gh += hits(gb, pb);
            ga += gb.size();
        }
        if (!any) continue;
        ++counted;
        const double precision = pa ? double(ph) / double(pa) : 0.0;
        const double recall = ga ? double(gh) / double(ga) : 0.0;
        sum += (precision + recall > 0.0) ? 2.0 * precision * recall / (precision + recall) : 0.0;
    }
    return counted ? sum / double(counted) : std::numeric_limits<double>::quiet_NaN();
}

// ---- finite differences ----

struct GradCheckStats {
    double worst_rel = 0.0;
    std::string worst_param;
};

inline double fd_relative_error(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
    return std::fabs(analytic - numeric) / denom;
}

// Central differences at step h over every trainable scalar. Returns the
// worst relative error across omega1, omega2, a, b, and all bank entries.
inline GradCheckStats finite_difference_check(const std::vector<dpn::TrainInstance>& insts,
                                              const dpn::ParamSet& params, double h = 1e-5,
                                              std::optional<std::uint32_t> ignore = {}) {
    const dpn::LossAndGrad lg = dpn::grad_params(insts, params, dpn::TrainStage::joint, ignore);
    GradCheckStats stats;
    auto consider = [&](const std::string& name, double analytic, double numeric) {
        const double rel = fd_relative_error(analytic, numeric);
        if (rel > stats.worst_rel) {
            stats.worst_rel = rel;
            stats.worst_param = name;
        }
    };
    auto loss_at = [&](const dpn::ParamSet& p) { return dpn::corpus_loss(insts, p, ignore); };

    {
        dpn::ParamSet lo = params, hi = params;
        lo.dist.intensity_weight -= h;
        hi.dist.intensity_weight += h;
        consider("omega1", lg.grad.omega1, (loss_at(hi) - loss_at(lo)) / (2 * h));
    }
    {
        dpn::ParamSet lo = params, hi = params;
        lo.dist.spatial_weight -= h;
        hi.dist.spatial_weight += h;
        consider("omega2", lg.grad.omega2, (loss_at(hi) - loss_at(lo)) / (2 * h));
    }
    {
        dpn::ParamSet lo = params, hi = params;
        lo.act.scale -= h;
        hi.act.scale += h;
        consider("a", lg.grad.scale, (loss_at(hi) - loss_at(lo)) / (2 * h));
    }
    {
        dpn::ParamSet lo = params, hi = params;
        lo.act.offset -= h;
        hi.act.offset += h;
        consider("b", lg.grad.offset, (loss_at(hi) - loss_at(lo)) / (2 * h));
    }
    for (std::size_t i = 0; i < params.bank.values().size(); ++i) {
        dpn::ParamSet lo = params, hi = params;
        lo.bank.values()[i] -= h;
        hi.bank.values()[i] += h;
        consider("mu[" + std::to_string(i) + "]", lg.grad.bank[i],
                 (loss_at(hi) - loss_at(lo)) / (2 * h));
    }
    return stats;
}

// The mixture min makes the loss only piecewise smooth; finite differences
// are meaningless across a component tie, so instances for the gradient
// suite must keep a margin between the best and second-best component.
inline bool has_near_tie(const std::vector<dpn::TrainInstance>& insts, const dpn::ParamSet& params,
                         double margin = 1e-2) {
    const std::uint32_t K = params.bank.components();
    if (K < 2) return false;
    for (const dpn::TrainInstance& inst : insts) {
        const dpn::LayerActivations acts = dpn::dpn_forward(inst.unary, inst.feats, params.dist,
                                                            params.bank, params.window, params.act);
        const std::uint32_t h = acts.o13.dim(0), w = acts.o13.dim(1);
        const std::uint32_t blocks = acts.o13.dim(2) / K;
        for (std::uint32_t y = 0; y < h; ++y)
            for (std::uint32_t x = 0; x < w; ++x)
                for (std::uint32_t u = 0; u < blocks; ++u) {
                    double best = std::numeric_limits<double>::infinity();
                    double second = best;
                    for (std::uint32_t k = 0; k < K; ++k) {
                        const double v = acts.o13(y, x, u * K + k);
                        if (v < best) {
                            second = best;
                            best = v;
                        } else if (v < second) {
                            second = v;
                        }
                    }
                    if (second - best < margin) return true;
                }
    }
    return false;
}

// Low-contrast training instances keep the loss surface well conditioned for
// h = 1e-5 central differences (the gradients flow through the same code
// paths regardless of scale).
inline dpn::TrainInstance random_grad_instance(std::mt19937_64& rng, std::uint32_t h,
                                               std::uint32_t w, std::uint32_t l) {
    dpn::Tensor raw({h, w, l});
    std::uniform_real_distribution<double> belief(0.05, 1.0);
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = belief(rng);
    dpn::PixelFeatureGrid feats(h, w, 1);
    std::uniform_int_distribution<std::uint32_t> tone(0, 4);
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) feats.set(y, x, 0, std::uint8_t(tone(rng)));
    dpn::LabelMap gt(h, w, 0);
    std::uniform_int_distribution<std::uint32_t> lab(0, l - 1);
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) gt.set(y, x, lab(rng));
    return dpn::TrainInstance{dpn::UnaryField(std::move(raw), dpn::LabelSpace(l)), std::move(feats),
                              std::move(gt)};
}

inline dpn::ParamSet random_grad_params(std::mt19937_64& rng, std::uint32_t l, std::uint32_t K = 2,
                                        std::uint32_t n = 3, std::uint32_t m = 3) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    dpn::ContextFilterBank bank(K, l, n);
    for (double& v : bank.values()) v = (unit(rng) - 0.5) * 0.4;
    return dpn::ParamSet{dpn::DistanceParams{1e-3 + unit(rng) * 9e-3, 1e-3 + unit(rng) * 9e-3},
                         dpn::LinearActivation{0.8 + unit(rng) * 0.4, (unit(rng) - 0.5) * 0.2},
                         dpn::TripleWindow(m), std::move(bank)};
}

// ---- process helpers ----

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::string tmpl = (std::filesystem::temp_directory_path() / (tag + ".XXXXXX")).string();
        std::vector<char> buf(tmpl.begin(), tmpl.end());
        buf.push_back('\0');
        if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed for " + tmpl);
        path_ = buf.data();
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline int run_cmd(const std::string& cmd) {
    const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
    if (status == -1) return -1;
    if (WIFEXITED(status)) return WEXITSTATUS(status);
    return -2;
}

inline int run_cmd_capture(const std::string& cmd, const std::filesystem::path& out) {
    const int status = std::system((cmd + " >" + out.string() + " 2>&1").c_str());
    if (status == -1) return -1;
    if (WIFEXITED(status)) return WEXITSTATUS(status);
    return -2;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace support
