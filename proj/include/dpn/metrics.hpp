#pragma once

// Segmentation quality measures over label maps: intersection-over-union,
// tag-level accuracy, component localization, and boundary agreement.
//
// Ignore handling: pixels whose ground truth carries the ignore label take
// no part in any count, on either map. Ignored neighbors neither join
// components nor create boundaries; pixels beyond the image border do count
// as boundary contrast.
//
// Localization: connected components by 4-adjacency per class, one-to-one
// greedy matching of bounding boxes by descending IoU (ties broken by lower
// prediction then lower truth component index); zero-overlap pairs never
// match, and unmatched components on either side score zero.
//
// Boundary agreement: boundary pixels are class pixels with a 4-neighbor of
// another class or outside the image. Precision counts predicted boundary
// pixels with a true boundary pixel within Chebyshev distance tau, recall
// mirrors it, and the score is their F1. A class enters the measure for an
// image only when localization matched a box pair there at IoU >= 0.5;
// counts aggregate over qualifying images before the F1.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace dpn {

namespace detail {

inline bool metric_valid(const LabelMap& gt, std::uint32_t y, std::uint32_t x,
                         const std::optional<std::uint32_t>& ignore) {
    return !ignore || gt.at(y, x) != *ignore;
}

inline void check_metric_pair(const LabelMap& pred, const LabelMap& gt, std::uint32_t labels,
                              const std::optional<std::uint32_t>& ignore) {
    if (pred.height() != gt.height() || pred.width() != gt.width())
        throw ShapeError("prediction and ground truth disagree on extents");
    for (std::uint32_t y = 0; y < gt.height(); ++y)
        for (std::uint32_t x = 0; x < gt.width(); ++x) {
            const std::uint32_t g = gt.at(y, x);
            if (g >= labels && !(ignore && g == *ignore))
                throw std::out_of_range("ground-truth label " + std::to_string(g) +
                                        " outside label space of size " + std::to_string(labels));
            if (metric_valid(gt, y, x, ignore) && pred.at(y, x) >= labels)
                throw std::out_of_range("predicted label " + std::to_string(pred.at(y, x)) +
                                        " outside label space of size " + std::to_string(labels));
        }
}

struct ComponentBox {
    std::uint32_t y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // inclusive

    double area() const { return double(y1 - y0 + 1) * double(x1 - x0 + 1); }
};

inline double box_iou(const ComponentBox& a, const ComponentBox& b) {
    const std::uint32_t y0 = std::max(a.y0, b.y0), x0 = std::max(a.x0, b.x0);
    const std::uint32_t y1 = std::min(a.y1, b.y1), x1 = std::min(a.x1, b.x1);
    if (y1 < y0 || x1 < x0) return 0.0;
    const double inter = double(y1 - y0 + 1) * double(x1 - x0 + 1);
    return inter / (a.area() + b.area() - inter);
}

// Bounding boxes of the 4-connected components of class c, in discovery
// (raster) order.
inline std::vector<ComponentBox> class_components(const LabelMap& map, const LabelMap& gt,
                                                  std::uint32_t c,
                                                  const std::optional<std::uint32_t>& ignore) {
    const std::uint32_t h = map.height(), w = map.width();
    std::vector<std::uint8_t> seen(std::size_t(h) * w, 0);
    std::vector<ComponentBox> boxes;
    std::vector<std::uint32_t> stack;
    auto in_class = [&](std::uint32_t y, std::uint32_t x) {
        return map.at(y, x) == c && metric_valid(gt, y, x, ignore);
    };
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            const std::size_t at = std::size_t(y) * w + x;
            if (seen[at] || !in_class(y, x)) continue;
            ComponentBox box{y, x, y, x};
            seen[at] = 1;
            stack.assign(1, std::uint32_t(at));
            while (!stack.empty()) {
                const std::uint32_t cur = stack.back();
                stack.pop_back();
                const std::uint32_t cy = cur / w, cx = cur % w;
                box.y0 = std::min(box.y0, cy);
                box.y1 = std::max(box.y1, cy);
                box.x0 = std::min(box.x0, cx);
                box.x1 = std::max(box.x1, cx);
                const std::int64_t ns[4][2] = {{std::int64_t(cy) - 1, cx},
                                               {std::int64_t(cy) + 1, cx},
                                               {cy, std::int64_t(cx) - 1},
                                               {cy, std::int64_t(cx) + 1}};
                for (const auto& n : ns) {
                    if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
                    const std::uint32_t ny = std::uint32_t(n[0]), nx = std::uint32_t(n[1]);
                    const std::size_t nat = std::size_t(ny) * w + nx;
                    if (seen[nat] || !in_class(ny, nx)) continue;
                    seen[nat] = 1;
                    stack.push_back(std::uint32_t(nat));
                }
            }
            boxes.push_back(box);
        }
    return boxes;
}

struct ClassMatch {
    std::vector<double> matched_ious;
    std::size_t unmatched_pred = 0;
    std::size_t unmatched_gt = 0;
    bool localized = false;  // any matched pair at IoU >= 0.5
    bool present = false;    // any component on either side
};

inline ClassMatch match_class_components(const LabelMap& pred, const LabelMap& gt, std::uint32_t c,
                                         const std::optional<std::uint32_t>& ignore) {
    const std::vector<ComponentBox> pb = class_components(pred, gt, c, ignore);
    const std::vector<ComponentBox> gb = class_components(gt, gt, c, ignore);
    ClassMatch match;
    match.present = !pb.empty() || !gb.empty();

    struct Pair {
        double iou;
        std::size_t p, g;
    };
    std::vector<Pair> pairs;
    for (std::size_t p = 0; p < pb.size(); ++p)
        for (std::size_t g = 0; g < gb.size(); ++g) {
            const double iou = box_iou(pb[p], gb[g]);
            if (iou > 0.0) pairs.push_back({iou, p, g});
        }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.iou != b.iou) return a.iou > b.iou;
        if (a.p != b.p) return a.p < b.p;
        return a.g < b.g;
    });
    std::vector<std::uint8_t> p_used(pb.size(), 0), g_used(gb.size(), 0);
    for (const Pair& pr : pairs) {
        if (p_used[pr.p] || g_used[pr.g]) continue;
        p_used[pr.p] = g_used[pr.g] = 1;
        match.matched_ious.push_back(pr.iou);
        if (pr.iou >= 0.5) match.localized = true;
    }
    for (std::size_t p = 0; p < pb.size(); ++p)
        if (!p_used[p]) ++match.unmatched_pred;
    for (std::size_t g = 0; g < gb.size(); ++g)
        if (!g_used[g]) ++match.unmatched_gt;
    return match;
}

inline std::vector<std::uint8_t> boundary_mask(const LabelMap& map, const LabelMap& gt,
                                               std::uint32_t c,
                                               const std::optional<std::uint32_t>& ignore) {
    const std::uint32_t h = map.height(), w = map.width();
    std::vector<std::uint8_t> mask(std::size_t(h) * w, 0);
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            if (map.at(y, x) != c || !metric_valid(gt, y, x, ignore)) continue;
            bool edge = false;
            const std::int64_t ns[4][2] = {{std::int64_t(y) - 1, x},
                                           {std::int64_t(y) + 1, x},
                                           {y, std::int64_t(x) - 1},
                                           {y, std::int64_t(x) + 1}};
            for (const auto& n : ns) {
                if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) {
                    edge = true;  // image border counts as contrast
                    break;
                }
                const std::uint32_t ny = std::uint32_t(n[0]), nx = std::uint32_t(n[1]);
                if (!metric_valid(gt, ny, nx, ignore)) continue;  // no information, no boundary
                if (map.at(ny, nx) != c) {
                    edge = true;
                    break;
                }
            }
            if (edge) mask[std::size_t(y) * w + x] = 1;
        }
    return mask;
}

// How many set pixels of a have a set pixel of b within Chebyshev radius tau.
inline std::pair<std::size_t, std::size_t> boundary_hits(const std::vector<std::uint8_t>& a,
                                                         const std::vector<std::uint8_t>& b,
                                                         std::uint32_t h, std::uint32_t w,
                                                         std::uint32_t tau) {
    std::size_t hits = 0, total = 0;
    const std::int64_t r = tau;
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            if (!a[std::size_t(y) * w + x]) continue;
            ++total;
            bool found = false;
            for (std::int64_t ny = std::int64_t(y) - r; !found && ny <= std::int64_t(y) + r; ++ny) {
                if (ny < 0 || ny >= h) continue;
                for (std::int64_t nx = std::int64_t(x) - r; nx <= std::int64_t(x) + r; ++nx) {
                    if (nx < 0 || nx >= w) continue;
                    if (b[std::size_t(ny) * w + nx]) {
                        found = true;
                        break;
                    }
                }
            }
            if (found) ++hits;
        }
    return {hits, total};
}

inline double mean_over_counted(const std::vector<double>& per_class,
                                const std::vector<bool>& counted) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < per_class.size(); ++c)
        if (counted[c]) {
            sum += per_class[c];
            ++n;
        }
    return n ? sum / double(n) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

struct IouReport {
    std::vector<double> per_class;
    std::vector<bool> counted;  // false when the class never occurs
    double mean = 0.0;
};

inline IouReport miou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                      std::uint32_t labels, std::optional<std::uint32_t> ignore = {}) {
    if (preds.size() != gts.size() || preds.empty())
        throw std::invalid_argument("metric needs equally many predictions and truths");
    std::vector<std::uint64_t> tp(labels, 0), fp(labels, 0), fn(labels, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        detail::check_metric_pair(preds[i], gts[i], labels, ignore);
        const LabelMap& pred = preds[i];
        const LabelMap& gt = gts[i];
        for (std::uint32_t y = 0; y < gt.height(); ++y)
            for (std::uint32_t x = 0; x < gt.width(); ++x) {
                if (!detail::metric_valid(gt, y, x, ignore)) continue;
                const std::uint32_t p = pred.at(y, x), g = gt.at(y, x);
                if (p == g)
                    ++tp[p];
                else {
                    ++fp[p];
                    ++fn[g];
                }
            }
    }
    IouReport rep;
    rep.per_class.assign(labels, 0.0);
    rep.counted.assign(labels, false);
    for (std::uint32_t c = 0; c < labels; ++c) {
        const std::uint64_t uni = tp[c] + fp[c] + fn[c];
        if (uni == 0) continue;
        rep.counted[c] = true;
        rep.per_class[c] = double(tp[c]) / double(uni);
    }
    rep.mean = detail::mean_over_counted(rep.per_class, rep.counted);
    return rep;
}

inline IouReport miou(const LabelMap& pred, const LabelMap& gt, std::uint32_t labels,
                      std::optional<std::uint32_t> ignore = {}) {
    return miou(std::vector<LabelMap>{pred}, std::vector<LabelMap>{gt}, labels, ignore);
}

// A class is tagged in an image when it covers at least `threshold` of the
// non-ignored pixels. The score is the fraction of (image, class) pairs
// where prediction and truth agree on the tag.
inline double tagging_accuracy(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                               std::uint32_t labels, std::optional<std::uint32_t> ignore = {},
                               double threshold = 0.001) {
    if (preds.size() != gts.size() || preds.empty())
        throw std::invalid_argument("metric needs equally many predictions and truths");
    if (!(threshold >= 0.0 && threshold <= 1.0))
        throw std::invalid_argument("tag threshold must lie in [0, 1]");
    std::size_t agree = 0, total = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        detail::check_metric_pair(preds[i], gts[i], labels, ignore);
        std::vector<std::uint64_t> pc(labels, 0), gc(labels, 0);
        std::uint64_t valid = 0;
        const LabelMap& pred = preds[i];
        const LabelMap& gt = gts[i];
        for (std::uint32_t y = 0; y < gt.height(); ++y)
            for (std::uint32_t x = 0; x < gt.width(); ++x) {
                if (!detail::metric_valid(gt, y, x, ignore)) continue;
                ++valid;
                ++pc[pred.at(y, x)];
                ++gc[gt.at(y, x)];
            }
        const double cut = threshold * double(valid);
        for (std::uint32_t c = 0; c < labels; ++c) {
            const bool pt = valid > 0 && double(pc[c]) >= cut && pc[c] > 0;
            const bool gtag = valid > 0 && double(gc[c]) >= cut && gc[c] > 0;
            agree += (pt == gtag);
            ++total;
        }
    }
    return double(agree) / double(total);
}

struct LocalizationReport {
    std::vector<double> per_class;  // mean matched box IoU, unmatched scoring zero
    std::vector<bool> counted;      // false when the class has no components anywhere
    double mean = 0.0;
};

inline LocalizationReport localization_accuracy(const std::vector<LabelMap>& preds,
                                                const std::vector<LabelMap>& gts,
                                                std::uint32_t labels,
                                                std::optional<std::uint32_t> ignore = {}) {
    if (preds.size() != gts.size() || preds.empty())
        throw std::invalid_argument("metric needs equally many predictions and truths");
    std::vector<double> iou_sum(labels, 0.0);
    std::vector<std::size_t> units(labels, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        detail::check_metric_pair(preds[i], gts[i], labels, ignore);
        for (std::uint32_t c = 0; c < labels; ++c) {
            const detail::ClassMatch match =
                detail::match_class_components(preds[i], gts[i], c, ignore);
            for (double iou : match.matched_ious) iou_sum[c] += iou;
            units[c] += match.matched_ious.size() + match.unmatched_pred + match.unmatched_gt;
        }
    }
    LocalizationReport rep;
    rep.per_class.assign(labels, 0.0);
    rep.counted.assign(labels, false);
    for (std::uint32_t c = 0; c < labels; ++c) {
        if (units[c] == 0) continue;
        rep.counted[c] = true;
        rep.per_class[c] = iou_sum[c] / double(units[c]);
    }
    rep.mean = detail::mean_over_counted(rep.per_class, rep.counted);
    return rep;
}

struct BoundaryReport {
    std::vector<double> per_class;  // F1 of boundary agreement within tau
    std::vector<bool> counted;      // false when the class never qualifies
    double mean = 0.0;
};

inline BoundaryReport boundary_accuracy(const std::vector<LabelMap>& preds,
                                        const std::vector<LabelMap>& gts, std::uint32_t labels,
                                        std::uint32_t tau = 2,
                                        std::optional<std::uint32_t> ignore = {}) {
    if (preds.size() != gts.size() || preds.empty())
        throw std::invalid_argument("metric needs equally many predictions and truths");
    std::vector<std::size_t> p_hit(labels, 0), p_all(labels, 0), g_hit(labels, 0), g_all(labels, 0);
    std::vector<bool> counted(labels, false);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        detail::check_metric_pair(preds[i], gts[i], labels, ignore);
        const std::uint32_t h = gts[i].height(), w = gts[i].width();
        for (std::uint32_t c = 0; c < labels; ++c) {
            const detail::ClassMatch match =
                detail::match_class_components(preds[i], gts[i], c, ignore);
            if (!match.localized) continue;
            counted[c] = true;
            const std::vector<std::uint8_t> pb = detail::boundary_mask(preds[i], gts[i], c, ignore);
            const std::vector<std::uint8_t> gb = detail::boundary_mask(gts[i], gts[i], c, ignore);
            const auto [ph, pa] = detail::boundary_hits(pb, gb, h, w, tau);
            const auto [gh, ga] = detail::boundary_hits(gb, pb, h, w, tau);
            p_hit[c] += ph;
            p_all[c] += pa;
            g_hit[c] += gh;
            g_all[c] += ga;
        }
    }
    BoundaryReport rep;
    rep.per_class.assign(labels, 0.0);
    rep.counted = counted;
    for (std::uint32_t c = 0; c < labels; ++c) {
        if (!counted[c]) continue;
        const double precision = p_all[c] ? double(p_hit[c]) / double(p_all[c]) : 0.0;
        const double recall = g_all[c] ? double(g_hit[c]) / double(g_all[c]) : 0.0;
        rep.per_class[c] =
            (precision + recall > 0.0) ? 2.0 * precision * recall / (precision + recall) : 0.0;
    }
    rep.mean = detail::mean_over_counted(rep.per_class, rep.counted);
    return rep;
}

struct EvalReport {
    std::uint32_t labels = 0;
    IouReport iou;
    double tag_accuracy = 0.0;
    LocalizationReport localization;
    BoundaryReport boundary;

    void to_csv(std::ostream& os) const {
        auto cell = [](double v, bool have) {
            char buf[32];
            if (!have)
                std::snprintf(buf, sizeof buf, "nan");
            else
                std::snprintf(buf, sizeof buf, "%.6f", v);
            return std::string(buf);
        };
        os << "class,iou,ba,biou\n";
        for (std::uint32_t c = 0; c < labels; ++c)
            os << c << ',' << cell(iou.per_class[c], iou.counted[c]) << ','
               << cell(boundary.per_class[c], boundary.counted[c]) << ','
               << cell(localization.per_class[c], localization.counted[c]) << '\n';
        os << "mean," << cell(iou.mean, iou.mean == iou.mean) << ','
           << cell(boundary.mean, boundary.mean == boundary.mean) << ','
           << cell(localization.mean, localization.mean == localization.mean) << '\n';
        os << "tagging_accuracy," << cell(tag_accuracy, true) << ",,\n";
    }
};

inline EvalReport evaluate(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                           std::uint32_t labels, std::uint32_t tau = 2,
                           std::optional<std::uint32_t> ignore = {}) {
    EvalReport rep;
    rep.labels = labels;
    rep.iou = miou(preds, gts, labels, ignore);
    rep.tag_accuracy = tagging_accuracy(preds, gts, labels, ignore);
    rep.localization = localization_accuracy(preds, gts, labels, ignore);
    rep.boundary = boundary_accuracy(preds, gts, labels, tau, ignore);
    return rep;
}

}  // namespace dpn
