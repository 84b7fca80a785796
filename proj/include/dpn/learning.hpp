#pragma once

// Parameter learning for the one-pass stack: pixelwise log loss on o15,
// exact gradients for the distance weights, the b12 activation, and the
// context bank, and the staged training driver.
//
// Loss convention: per image, the mean over non-ignored pixels of
// -ln o15(i, gt_i); per batch, the mean over images, so image size does not
// reweight the corpus. Gradients follow the same convention.
//
// The block-min stage routes gradients to the winning component only
// (ties to the lowest index, matching block_argmin_b14). The mixture makes
// the loss piecewise smooth; between tie surfaces the gradients below are
// exact, which the finite-difference suite checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "layers.hpp"
#include "tensor_io.hpp"

namespace dpn {

struct TrainInstance {
    UnaryField unary;
    PixelFeatureGrid feats;
    LabelMap gt;
};

struct ParamSet {
    DistanceParams dist;
    LinearActivation act;
    TripleWindow window;
    ContextFilterBank bank;
};

// Mean -ln o15(i, gt_i) over non-ignored pixels, clamped away from zero.
// A fully ignored image contributes zero loss.
inline double pixelwise_loss(const MarginalField& o15, const LabelMap& gt,
                             std::optional<std::uint32_t> ignore_label = {}) {
    if (o15.rank() != 3 || o15.dim(0) != gt.height() || o15.dim(1) != gt.width())
        throw ShapeError("beliefs " + dims_to_string(o15.dims()) + " do not cover the label map");
    const std::uint32_t l = o15.dim(2);
    double total = 0.0;
    std::size_t valid = 0;
    for (std::uint32_t y = 0; y < gt.height(); ++y)
        for (std::uint32_t x = 0; x < gt.width(); ++x) {
            const std::uint32_t g = gt.at(y, x);
            if (ignore_label && g == *ignore_label) continue;
            if (g >= l)
                throw std::out_of_range("ground-truth label " + std::to_string(g) +
                                        " outside label space of size " + std::to_string(l));
            total += -std::log(std::max(o15(y, x, g), UnaryField::kProbFloor));
            ++valid;
        }
    return valid ? total / double(valid) : 0.0;
}

enum class TrainStage { unary_passthrough, triple, context, joint };

inline const char* stage_name(TrainStage s) {
    switch (s) {
        case TrainStage::unary_passthrough: return "unary-passthrough";
        case TrainStage::triple: return "triple";
        case TrainStage::context: return "context";
        case TrainStage::joint: return "joint";
    }
    throw std::invalid_argument("unknown training stage");
}

inline TrainStage stage_from_name(const std::string& name) {
    if (name == "unary-passthrough") return TrainStage::unary_passthrough;
    if (name == "triple") return TrainStage::triple;
    if (name == "context") return TrainStage::context;
    if (name == "joint") return TrainStage::joint;
    throw std::invalid_argument("unknown training stage: " + name);
}

// Which parameter groups a stage updates.
struct StageMask {
    bool distance = false;    // omega1, omega2
    bool activation = false;  // a, b
    bool context = false;     // the bank
};

inline StageMask stage_mask(TrainStage s) {
    switch (s) {
        case TrainStage::unary_passthrough: return {false, false, false};
        case TrainStage::triple: return {true, true, false};
        case TrainStage::context: return {false, false, true};
        case TrainStage::joint: return {true, true, true};
    }
    throw std::invalid_argument("unknown training stage");
}

// Flat gradient container; bank follows ContextFilterBank::values() layout.
// Entries for frozen groups are exactly zero.
struct ParamGradients {
    double omega1 = 0.0, omega2 = 0.0;
    double scale = 0.0, offset = 0.0;
    std::vector<double> bank;

    explicit ParamGradients(std::size_t bank_size = 0) : bank(bank_size, 0.0) {}

    void accumulate(const ParamGradients& other, double weight) {
        omega1 += weight * other.omega1;
        omega2 += weight * other.omega2;
        scale += weight * other.scale;
        offset += weight * other.offset;
        for (std::size_t i = 0; i < bank.size(); ++i) bank[i] += weight * other.bank[i];
    }
};

struct LossAndGrad {
    double loss = 0.0;
    ParamGradients grad;
};

namespace detail {

inline std::size_t bank_flat(const ContextFilterBank& bank, std::uint32_t k, std::uint32_t u,
                             std::int32_t dy, std::int32_t dx, std::uint32_t v) {
    const std::int32_t r = bank.radius();
    const std::size_t filter = std::size_t(u) * bank.components() + k;
    return ((filter * bank.window() + std::size_t(dy + r)) * bank.window() + std::size_t(dx + r)) *
               bank.labels() +
           v;
}

inline LossAndGrad instance_loss_and_grad(const TrainInstance& inst, const ParamSet& params,
                                          const StageMask& mask,
                                          std::optional<std::uint32_t> ignore_label) {
    const UnaryField& unary = inst.unary;
    const std::uint32_t h = unary.height(), w = unary.width(), l = unary.labels();
    const std::uint32_t K = params.bank.components();
    const std::int32_t r = params.bank.radius();

    LayerActivations acts =
        dpn_forward(unary, inst.feats, params.dist, params.bank, params.window, params.act);
    const std::vector<std::uint32_t> winner = block_argmin_b14(acts.o13, K);

    LossAndGrad out;
    out.grad = ParamGradients(params.bank.values().size());
    out.loss = pixelwise_loss(acts.o15, inst.gt, ignore_label);

    std::size_t valid = 0;
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            const std::uint32_t g = inst.gt.at(y, x);
            if (ignore_label && g == *ignore_label) continue;
            ++valid;
        }
    if (valid == 0) return out;
    const double inv_valid = 1.0 / double(valid);

    const bool need_delta12 = mask.distance || mask.activation;
    Tensor delta12 = need_delta12 ? Tensor({h, w, l}) : Tensor();

    // d loss / d o14(i, u) = (1[u = gt_i] - o15(i, u)) / valid, routed to the
    // winning component's filter and spread over the taps it read.
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            const std::uint32_t g = inst.gt.at(y, x);
            if (ignore_label && g == *ignore_label) continue;
            for (std::uint32_t u = 0; u < l; ++u) {
                const double delta14 =
                    ((u == g ? 1.0 : 0.0) - acts.o15(y, x, u)) * inv_valid;
                if (delta14 == 0.0) continue;
                const std::uint32_t k = winner[(std::size_t(y) * w + x) * l + u];
                for (std::int32_t dy = -r; dy <= r; ++dy) {
                    const std::int64_t jy = std::int64_t(y) + dy;
                    if (jy < 0 || jy >= h) continue;
                    for (std::int32_t dx = -r; dx <= r; ++dx) {
                        const std::int64_t jx = std::int64_t(x) + dx;
                        if (jx < 0 || jx >= w) continue;
                        const std::uint32_t jyy = std::uint32_t(jy), jxx = std::uint32_t(jx);
                        for (std::uint32_t v = 0; v < l; ++v) {
                            if (mask.context)
                                out.grad.bank[bank_flat(params.bank, k, u, dy, dx, v)] +=
                                    delta14 * acts.o12(jyy, jxx, v);
                            if (need_delta12)
                                delta12(jyy, jxx, v) += delta14 * params.bank.mu(k, u, dy, dx, v);
                        }
                    }
                }
            }
        }

    if (need_delta12) {
        // o12 = a * C + b with C(j, v) = p_j^v (omega1 A + omega2 B), where
        // A and B hold the intensity and spatial squared sums against the
        // unary mass. A and B do not depend on any trainable parameter.
        const Tensor& p = unary.probs();
        const Tensor A = distance_weighted_mass(p, inst.feats, DistanceParams{1.0, 0.0},
                                                params.window);
        const Tensor B = distance_weighted_mass(p, inst.feats, DistanceParams{0.0, 1.0},
                                                params.window);
        for (std::uint32_t y = 0; y < h; ++y)
            for (std::uint32_t x = 0; x < w; ++x)
                for (std::uint32_t v = 0; v < l; ++v) {
                    const double dv = delta12(y, x, v);
                    if (dv == 0.0) continue;
                    const double pv = p(y, x, v);
                    const double av = A(y, x, v), bv = B(y, x, v);
                    if (mask.activation) {
                        out.grad.scale += dv * pv * (params.dist.intensity_weight * av +
                                                     params.dist.spatial_weight * bv);
                        out.grad.offset += dv;
                    }
                    if (mask.distance) {
                        out.grad.omega1 += dv * params.act.scale * pv * av;
                        out.grad.omega2 += dv * params.act.scale * pv * bv;
                    }
                }
    }
    return out;
}

}  // namespace detail

// Batch loss and gradient: the mean over the given instances. Frozen groups
// come back exactly zero.
inline LossAndGrad grad_params(const std::vector<TrainInstance>& instances,
                               const std::vector<std::size_t>& subset, const ParamSet& params,
                               TrainStage stage, std::optional<std::uint32_t> ignore_label = {}) {
    if (subset.empty()) throw std::invalid_argument("gradient needs at least one instance");
    const StageMask mask = stage_mask(stage);
    LossAndGrad total;
    total.grad = ParamGradients(params.bank.values().size());
    const double weight = 1.0 / double(subset.size());
    for (std::size_t idx : subset) {
        LossAndGrad one = detail::instance_loss_and_grad(instances.at(idx), params, mask, ignore_label);
        total.loss += weight * one.loss;
        total.grad.accumulate(one.grad, weight);
    }
    return total;
}

inline LossAndGrad grad_params(const std::vector<TrainInstance>& instances, const ParamSet& params,
                               TrainStage stage, std::optional<std::uint32_t> ignore_label = {}) {
    std::vector<std::size_t> all(instances.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return grad_params(instances, all, params, stage, ignore_label);
}

// Mean forward loss over a corpus, no gradients.
inline double corpus_loss(const std::vector<TrainInstance>& instances, const ParamSet& params,
                          std::optional<std::uint32_t> ignore_label = {}) {
    if (instances.empty()) throw std::invalid_argument("corpus is empty");
    double total = 0.0;
    for (const TrainInstance& inst : instances) {
        LayerActivations acts =
            dpn_forward(inst.unary, inst.feats, params.dist, params.bank, params.window, params.act);
        total += pixelwise_loss(acts.o15, inst.gt, ignore_label);
    }
    return total / double(instances.size());
}

struct StageConfig {
    TrainStage stage = TrainStage::unary_passthrough;
    double learning_rate = 0.1;
    std::uint32_t iterations = 10;
    std::uint32_t batch = 0;  // 0 = full corpus
};

struct TraceRow {
    std::string stage;
    std::uint32_t iter = 0;
    double loss = 0.0;
};

struct TrainResult {
    ParamSet params;
    std::vector<TraceRow> trace;
};

// Staged projected gradient descent, full-batch or seeded mini-batches.
// Each trainable stage logs the pre-update batch loss per iteration and one
// final full-corpus row at iter = iterations; the passthrough stage logs a
// single full-corpus row. Omegas are clamped at zero after every step.
inline TrainResult train_incremental(const std::vector<TrainInstance>& corpus,
                                     const ParamSet& init, const std::vector<StageConfig>& stages,
                                     std::uint64_t seed = 1,
                                     std::optional<std::uint32_t> ignore_label = {}) {
    if (corpus.empty()) throw std::invalid_argument("training corpus is empty");
    for (const TrainInstance& inst : corpus) {
        if (inst.unary.labels() != init.bank.labels())
            throw ShapeError("corpus instance label count does not match the parameter set");
    }

    TrainResult result{init, {}};
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = order.size();  // force an initial shuffle

    for (const StageConfig& cfg : stages) {
        const char* name = stage_name(cfg.stage);
        if (cfg.stage == TrainStage::unary_passthrough) {
            result.trace.push_back({name, 0, corpus_loss(corpus, result.params, ignore_label)});
            continue;
        }
        if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate))
            throw std::invalid_argument("learning rate must be positive and finite");
        const StageMask mask = stage_mask(cfg.stage);
        const std::size_t batch =
            (cfg.batch == 0 || cfg.batch >= corpus.size()) ? corpus.size() : cfg.batch;

        for (std::uint32_t it = 0; it < cfg.iterations; ++it) {
            std::vector<std::size_t> subset;
            if (batch == corpus.size()) {
                subset = order;
            } else {
                subset.reserve(batch);
                while (subset.size() < batch) {
                    if (cursor >= order.size()) {
                        std::shuffle(order.begin(), order.end(), rng);
                        cursor = 0;
                    }
                    subset.push_back(order[cursor++]);
                }
            }
            LossAndGrad lg = grad_params(corpus, subset, result.params, cfg.stage, ignore_label);
            if (!std::isfinite(lg.loss))
                throw std::runtime_error(std::string("training diverged: non-finite loss in stage ") +
                                         name + " at iteration " + std::to_string(it));
            result.trace.push_back({name, it, lg.loss});

            if (mask.distance) {
                result.params.dist.intensity_weight = std::max(
                    0.0, result.params.dist.intensity_weight - cfg.learning_rate * lg.grad.omega1);
                result.params.dist.spatial_weight = std::max(
                    0.0, result.params.dist.spatial_weight - cfg.learning_rate * lg.grad.omega2);
            }
            if (mask.activation) {
                result.params.act.scale -= cfg.learning_rate * lg.grad.scale;
                result.params.act.offset -= cfg.learning_rate * lg.grad.offset;
                if (!std::isfinite(result.params.act.scale) ||
                    !std::isfinite(result.params.act.offset))
                    throw std::runtime_error("training diverged: non-finite activation parameters");
            }
            if (mask.context) {
                std::vector<double>& mu = result.params.bank.values();
                for (std::size_t i = 0; i < mu.size(); ++i) {
                    mu[i] -= cfg.learning_rate * lg.grad.bank[i];
                    if (!std::isfinite(mu[i]))
                        throw std::runtime_error("training diverged: non-finite context bank");
                }
            }
        }
        result.trace.push_back(
            {name, cfg.iterations, corpus_loss(corpus, result.params, ignore_label)});
    }
    return result;
}

inline void write_loss_csv(const std::vector<TraceRow>& trace, std::ostream& os) {
    os << "stage,iter,loss\n";
    char buf[128];
    for (const TraceRow& row : trace) {
        std::snprintf(buf, sizeof buf, "%s,%u,%.17g\n", row.stage.c_str(), row.iter, row.loss);
        os << buf;
    }
}

// On-disk parameter layout: <dir>/context_bank.dpt plus <dir>/params.meta
// holding omega1, omega2, a, b, K, n, m, l as key=value lines.
inline void save_params(const ParamSet& params, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_tensor(params.bank.to_tensor(), dir / "context_bank.dpt");
    std::ofstream meta(dir / "params.meta", std::ios::trunc);
    if (!meta)
        throw TensorIoError(TensorIoError::Code::io_failure,
                            "cannot write " + (dir / "params.meta").string());
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "omega1=%.17g\nomega2=%.17g\na=%.17g\nb=%.17g\nK=%u\nn=%u\nm=%u\nl=%u\n",
                  params.dist.intensity_weight, params.dist.spatial_weight, params.act.scale,
                  params.act.offset, params.bank.components(), params.bank.window(),
                  params.window.extent, params.bank.labels());
    meta << buf;
    if (!meta.flush())
        throw TensorIoError(TensorIoError::Code::io_failure,
                            "short write: " + (dir / "params.meta").string());
}

inline ParamSet load_params(const std::filesystem::path& dir) {
    const std::filesystem::path meta_path = dir / "params.meta";
    std::ifstream meta(meta_path);
    if (!meta)
        throw TensorIoError(TensorIoError::Code::io_failure, "cannot open: " + meta_path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(meta, line)) {
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw TensorIoError(TensorIoError::Code::bad_header,
                                "malformed line in " + meta_path.string() + ": " + line);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto need = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end())
            throw TensorIoError(TensorIoError::Code::bad_header,
                                "missing key '" + std::string(key) + "' in " + meta_path.string());
        return it->second;
    };
    const double omega1 = std::stod(need("omega1"));
    const double omega2 = std::stod(need("omega2"));
    const double a = std::stod(need("a"));
    const double b = std::stod(need("b"));
    const std::uint32_t K = std::uint32_t(std::stoul(need("K")));
    const std::uint32_t n = std::uint32_t(std::stoul(need("n")));
    const std::uint32_t m = std::uint32_t(std::stoul(need("m")));
    const std::uint32_t l = std::uint32_t(std::stoul(need("l")));

    ContextFilterBank bank = ContextFilterBank::from_tensor(read_tensor(dir / "context_bank.dpt"), K);
    if (bank.labels() != l || bank.window() != n)
        throw TensorIoError(TensorIoError::Code::bad_header,
                            "context bank shape disagrees with params.meta in " + dir.string());
    ParamSet params{DistanceParams{omega1, omega2}, LinearActivation{a, b}, TripleWindow(m),
                    std::move(bank)};
    params.dist.validate();
    params.act.validate();
    return params;
}

}  // namespace dpn
