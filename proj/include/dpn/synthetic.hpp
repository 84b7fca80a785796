#pragma once

// Synthetic scene generator for training and evaluation fixtures. Scenes are
// rectangles over a background, optionally with a planted context rule: when
// a rectangle of the anchor label is placed, a companion rectangle of the
// dependent label is painted at a fixed offset, so the dependent label only
// ever occurs in that arrangement. Intensities follow the labels with noise;
// the unary channel is a corrupted one-hot: each pixel's winner is flipped to
// a random other label with the given rate, and the winner takes a fixed
// share of the mass. Everything is a pure function of (spec, seed).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "learning.hpp"
#include "tensor_io.hpp"

namespace dpn {

struct ContextRule {
    std::uint32_t anchor_label = 1;
    std::uint32_t dependent_label = 2;
    std::int32_t dy = 0;
    std::int32_t dx = 0;
};

struct SceneSpec {
    std::uint32_t height = 32, width = 32;
    std::uint32_t labels = 3;
    std::uint32_t shapes_min = 1, shapes_max = 2;   // anchor rectangles per scene
    std::uint32_t shape_min = 6, shape_max = 12;    // rectangle side range
    std::optional<ContextRule> rule;
    double flip_rate = 0.3;      // chance a pixel's unary winner is wrong
    double winner_prob = 0.6;    // unary mass on the winner
    std::uint32_t intensity_noise = 8;

    void validate() const {
        if (labels < 2) throw std::invalid_argument("scene needs at least 2 labels");
        if (height == 0 || width == 0) throw std::invalid_argument("scene extents must be positive");
        if (shape_min == 0 || shape_min > shape_max)
            throw std::invalid_argument("invalid rectangle side range");
        if (shape_max > height || shape_max > width)
            throw std::invalid_argument("rectangles must fit inside the scene");
        if (shapes_min > shapes_max) throw std::invalid_argument("invalid rectangle count range");
        if (!(flip_rate >= 0.0 && flip_rate <= 1.0))
            throw std::invalid_argument("flip rate must lie in [0, 1]");
        if (!(winner_prob > 0.0 && winner_prob < 1.0))
            throw std::invalid_argument("winner probability must lie in (0, 1)");
        if (rule) {
            if (rule->anchor_label >= labels || rule->dependent_label >= labels)
                throw std::invalid_argument("context rule labels outside the label space");
            if (rule->anchor_label == 0 || rule->dependent_label == 0)
                throw std::invalid_argument("context rule labels must be foreground");
            if (rule->anchor_label == rule->dependent_label)
                throw std::invalid_argument("context rule needs two distinct labels");
        }
    }
};

inline TrainInstance gen_synthetic(const SceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    const std::uint32_t h = spec.height, w = spec.width, l = spec.labels;

    LabelMap gt(h, w, 0);
    auto paint = [&](std::int64_t y0, std::int64_t x0, std::uint32_t rh, std::uint32_t rw,
                     std::uint32_t label) {
        for (std::int64_t y = y0; y < y0 + rh; ++y) {
            if (y < 0 || y >= h) continue;
            for (std::int64_t x = x0; x < x0 + rw; ++x) {
                if (x < 0 || x >= w) continue;
                gt.set(std::uint32_t(y), std::uint32_t(x), label);
            }
        }
    };

    // Foreground labels other than the dependent label are placed freely;
    // the dependent one appears only through the rule.
    std::vector<std::uint32_t> free_labels;
    for (std::uint32_t v = 1; v < l; ++v)
        if (!spec.rule || v != spec.rule->dependent_label) free_labels.push_back(v);
    if (free_labels.empty())
        throw std::invalid_argument("context rule leaves no freely placeable label");

    std::uniform_int_distribution<std::uint32_t> shape_count(spec.shapes_min, spec.shapes_max);
    std::uniform_int_distribution<std::uint32_t> side(spec.shape_min, spec.shape_max);
    const std::uint32_t shapes = shape_count(rng);
    for (std::uint32_t s = 0; s < shapes; ++s) {
        const std::uint32_t label = free_labels[std::uniform_int_distribution<std::size_t>(
            0, free_labels.size() - 1)(rng)];
        const std::uint32_t rh = side(rng), rw = side(rng);
        const std::uint32_t y0 = std::uniform_int_distribution<std::uint32_t>(0, h - rh)(rng);
        const std::uint32_t x0 = std::uniform_int_distribution<std::uint32_t>(0, w - rw)(rng);
        paint(y0, x0, rh, rw, label);
        if (spec.rule && label == spec.rule->anchor_label)
            paint(std::int64_t(y0) + spec.rule->dy, std::int64_t(x0) + spec.rule->dx, rh, rw,
                  spec.rule->dependent_label);
    }

    // Label-correlated intensities on one channel.
    PixelFeatureGrid feats(h, w, 1);
    std::uniform_int_distribution<std::int32_t> noise(-std::int32_t(spec.intensity_noise),
                                                      std::int32_t(spec.intensity_noise));
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            const std::int32_t base = std::int32_t((255u * gt.at(y, x)) / (l - 1));
            const std::int32_t v = std::clamp<std::int32_t>(base + noise(rng), 0, 255);
            feats.set(y, x, 0, std::uint8_t(v));
        }

    // Corrupted one-hot unary.
    Tensor raw({h, w, l});
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double rest = (1.0 - spec.winner_prob) / double(l - 1);
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            std::uint32_t winner = gt.at(y, x);
            if (spec.flip_rate > 0.0 && unit(rng) < spec.flip_rate) {
                const std::uint32_t shift =
                    std::uniform_int_distribution<std::uint32_t>(1, l - 1)(rng);
                winner = (winner + shift) % l;
            }
            for (std::uint32_t u = 0; u < l; ++u)
                raw(y, x, u) = (u == winner) ? spec.winner_prob : rest;
        }

    return TrainInstance{UnaryField(std::move(raw), LabelSpace(l)), std::move(feats), std::move(gt)};
}

// Corpus directory layout: NNNN_unary.dpt, NNNN_feats.dpt, NNNN_gt.dpt.
inline std::string instance_stem(std::uint32_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04u", index);
    return buf;
}

inline void save_instance(const TrainInstance& inst, const std::filesystem::path& dir,
                          std::uint32_t index) {
    std::filesystem::create_directories(dir);
    const std::string stem = instance_stem(index);
    write_tensor(inst.unary.probs(), dir / (stem + "_unary.dpt"));
    write_tensor(inst.feats.to_tensor(), dir / (stem + "_feats.dpt"));
    write_label_map(inst.gt, dir / (stem + "_gt.dpt"));
}

inline std::vector<TrainInstance> load_corpus(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw TensorIoError(TensorIoError::Code::io_failure, "not a directory: " + dir.string());
    std::vector<std::filesystem::path> unary_files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() > 10 && name.substr(name.size() - 10) == "_unary.dpt")
            unary_files.push_back(entry.path());
    }
    std::sort(unary_files.begin(), unary_files.end());
    if (unary_files.empty())
        throw TensorIoError(TensorIoError::Code::io_failure,
                            "no *_unary.dpt instances in " + dir.string());
    std::vector<TrainInstance> corpus;
    corpus.reserve(unary_files.size());
    for (const auto& upath : unary_files) {
        std::string stem = upath.filename().string();
        stem.resize(stem.size() - 10);
        const Tensor raw = read_tensor(upath);
        if (raw.rank() != 3)
            throw TensorIoError(TensorIoError::Code::bad_header,
                                "unary must be H x W x L: " + upath.string());
        corpus.push_back(TrainInstance{
            UnaryField(raw, LabelSpace(raw.dim(2))),
            PixelFeatureGrid::from_tensor(read_tensor(dir / (stem + "_feats.dpt"))),
            read_label_map(dir / (stem + "_gt.dpt"))});
    }
    return corpus;
}

// key=value scene description, one pair per line, '#' comments. Returns the
// spec and the instance count (key "count", default 1). The rule keys
// rule_anchor, rule_dependent, rule_dy, rule_dx must appear together.
inline std::pair<SceneSpec, std::uint32_t> parse_scene_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw TensorIoError(TensorIoError::Code::io_failure, "cannot open: " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw TensorIoError(TensorIoError::Code::bad_header,
                                "malformed line in " + path.string() + ": " + line);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }

    SceneSpec spec;
    std::uint32_t count = 1;
    auto take_u32 = [&](const char* key, std::uint32_t& into) {
        if (auto it = kv.find(key); it != kv.end()) into = std::uint32_t(std::stoul(it->second));
    };
    auto take_f64 = [&](const char* key, double& into) {
        if (auto it = kv.find(key); it != kv.end()) into = std::stod(it->second);
    };
    take_u32("height", spec.height);
    take_u32("width", spec.width);
    take_u32("labels", spec.labels);
    take_u32("shapes_min", spec.shapes_min);
    take_u32("shapes_max", spec.shapes_max);
    take_u32("shape_min", spec.shape_min);
    take_u32("shape_max", spec.shape_max);
    take_f64("flip_rate", spec.flip_rate);
    take_f64("winner_prob", spec.winner_prob);
    take_u32("intensity_noise", spec.intensity_noise);
    take_u32("count", count);

    const bool any_rule = kv.count("rule_anchor") || kv.count("rule_dependent") ||
                          kv.count("rule_dy") || kv.count("rule_dx");
    if (any_rule) {
        if (!(kv.count("rule_anchor") && kv.count("rule_dependent") && kv.count("rule_dy") &&
              kv.count("rule_dx")))
            throw TensorIoError(TensorIoError::Code::bad_header,
                                "incomplete context rule in " + path.string());
        ContextRule rule;
        rule.anchor_label = std::uint32_t(std::stoul(kv["rule_anchor"]));
        rule.dependent_label = std::uint32_t(std::stoul(kv["rule_dependent"]));
        rule.dy = std::int32_t(std::stol(kv["rule_dy"]));
        rule.dx = std::int32_t(std::stol(kv["rule_dx"]));
        spec.rule = rule;
    }
    spec.validate();
    if (count == 0)
        throw TensorIoError(TensorIoError::Code::bad_header, "count must be positive in " + path.string());
    return {spec, count};
}

// Instance seeds are decorrelated from consecutive corpus seeds.
inline std::uint64_t instance_seed(std::uint64_t corpus_seed, std::uint32_t index) {
    std::uint64_t z = corpus_seed + 0x9e3779b97f4a7c15ull * (std::uint64_t(index) + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace dpn
