// dpn: one-pass label refinement, mean-field oracle, training, synthesis,
// evaluation, and the layer cost model, over DPT tensor files.
//
// Exit codes: 0 success, 1 computation failure (shape or value problems in
// otherwise readable inputs, divergence), 2 usage or file problems.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <dpn/dpn.hpp>

namespace fs = std::filesystem;

namespace {

dpn::LabelMap argmax_map(const dpn::Tensor& beliefs) {
    const std::uint32_t h = beliefs.dim(0), w = beliefs.dim(1), l = beliefs.dim(2);
    dpn::LabelMap map(h, w, 0);
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            std::uint32_t best = 0;
            for (std::uint32_t u = 1; u < l; ++u)
                if (beliefs(y, x, u) > beliefs(y, x, best)) best = u;
            map.set(y, x, best);
        }
    return map;
}

struct RefineArgs {
    std::string unary, features, params, output;
    std::string argmax_path, dump_dir;
    unsigned threads = 1;
};

int run_refine(const RefineArgs& a) {
    const dpn::ParamSet params = dpn::load_params(a.params);
    const dpn::Tensor raw = dpn::read_tensor(a.unary);
    if (raw.rank() != 3)
        throw dpn::ShapeError("unary must be H x W x L, got " + dpn::dims_to_string(raw.dims()));
    if (raw.dim(2) != params.bank.labels())
        throw dpn::ShapeError("unary has " + std::to_string(raw.dim(2)) +
                              " labels, parameter set expects " +
                              std::to_string(params.bank.labels()));
    const dpn::UnaryField unary(raw, dpn::LabelSpace(raw.dim(2)));
    const dpn::PixelFeatureGrid feats = dpn::PixelFeatureGrid::from_tensor(dpn::read_tensor(a.features));

    const dpn::LayerActivations acts = dpn::dpn_forward(unary, feats, params.dist, params.bank,
                                                        params.window, params.act, a.threads);
    dpn::write_tensor(acts.o15, a.output);
    if (!a.argmax_path.empty()) dpn::write_label_map(argmax_map(acts.o15), a.argmax_path);
    if (!a.dump_dir.empty()) {
        fs::create_directories(a.dump_dir);
        dpn::write_tensor(acts.o11, fs::path(a.dump_dir) / "o11.dpt");
        dpn::write_tensor(acts.o12, fs::path(a.dump_dir) / "o12.dpt");
        dpn::write_tensor(acts.o13, fs::path(a.dump_dir) / "o13.dpt");
        dpn::write_tensor(acts.o14, fs::path(a.dump_dir) / "o14.dpt");
        dpn::write_tensor(acts.o15, fs::path(a.dump_dir) / "o15.dpt");
    }
    return 0;
}

struct OracleArgs {
    std::string unary, features, params, output, trace;
    std::uint32_t iterations = 1;
    std::string schedule = "parallel";
    std::string kernel_source = "fixed-unary";
    double damping = 1.0;
    unsigned threads = 1;
};

int run_oracle(const OracleArgs& a) {
    const dpn::ParamSet params = dpn::load_params(a.params);
    const dpn::Tensor raw = dpn::read_tensor(a.unary);
    if (raw.rank() != 3)
        throw dpn::ShapeError("unary must be H x W x L, got " + dpn::dims_to_string(raw.dims()));
    const dpn::UnaryField unary(raw, dpn::LabelSpace(raw.dim(2)));
    const dpn::PixelFeatureGrid feats = dpn::PixelFeatureGrid::from_tensor(dpn::read_tensor(a.features));

    dpn::MfSchedule schedule;
    schedule.iterations = a.iterations;
    schedule.damping = a.damping;
    schedule.order = a.schedule == "sequential-raster" ? dpn::UpdateOrder::sequential_raster
                                                       : dpn::UpdateOrder::parallel;
    const dpn::KernelSource source = a.kernel_source == "current-q"
                                         ? dpn::KernelSource::current_q
                                         : dpn::KernelSource::fixed_unary;
    const dpn::MfRun run = dpn::run_mf(dpn::mf_init(unary), unary, params.bank, params.window,
                                       feats, params.dist, schedule, source, a.threads);
    dpn::write_tensor(run.marginals, a.output);
    if (!a.trace.empty()) {
        std::ofstream os(a.trace, std::ios::trunc);
        if (!os)
            throw dpn::TensorIoError(dpn::TensorIoError::Code::io_failure,
                                     "cannot write " + a.trace);
        dpn::write_free_energy_csv(run.free_energy_trace, os);
    }
    return 0;
}

struct TrainArgs {
    std::string corpus, out, init_dir, trace;
    std::uint32_t components = 1, context_window = 3, triple_window = 3;
    double omega1 = 1e-5, omega2 = 1e-3, act_scale = 1.0, act_offset = 0.0;
    std::vector<std::string> stages{"unary-passthrough", "triple", "context", "joint"};
    std::vector<double> lr{0.05};
    std::vector<std::uint32_t> iters{20};
    std::uint32_t batch = 0;
    std::uint64_t seed = 1;
    std::int64_t ignore_label = -1;
};

template <typename T>
T per_stage(const std::vector<T>& values, std::size_t stage_index, std::size_t stage_count) {
    if (values.size() == 1) return values[0];
    if (values.size() != stage_count)
        throw CLI::ValidationError("per-stage lists must have one entry or one per stage");
    return values[stage_index];
}

int run_train(const TrainArgs& a) {
    const std::vector<dpn::TrainInstance> corpus = dpn::load_corpus(a.corpus);
    const std::uint32_t labels = corpus.front().unary.labels();

    dpn::ParamSet params =
        a.init_dir.empty()
            ? dpn::ParamSet{dpn::DistanceParams{a.omega1, a.omega2},
                            dpn::LinearActivation{a.act_scale, a.act_offset},
                            dpn::TripleWindow(a.triple_window),
                            dpn::ContextFilterBank(a.components, labels, a.context_window)}
            : dpn::load_params(a.init_dir);

    std::vector<dpn::StageConfig> stages;
    for (std::size_t s = 0; s < a.stages.size(); ++s) {
        dpn::StageConfig cfg;
        cfg.stage = dpn::stage_from_name(a.stages[s]);
        cfg.learning_rate = per_stage(a.lr, s, a.stages.size());
        cfg.iterations = per_stage(a.iters, s, a.stages.size());
        cfg.batch = a.batch;
        stages.push_back(cfg);
    }
    std::optional<std::uint32_t> ignore;
    if (a.ignore_label >= 0) ignore = std::uint32_t(a.ignore_label);

    const dpn::TrainResult result = dpn::train_incremental(corpus, params, stages, a.seed, ignore);
    dpn::save_params(result.params, a.out);
    if (!a.trace.empty()) {
        std::ofstream os(a.trace, std::ios::trunc);
        if (!os)
            throw dpn::TensorIoError(dpn::TensorIoError::Code::io_failure,
                                     "cannot write " + a.trace);
        dpn::write_loss_csv(result.trace, os);
    }
    if (!result.trace.empty())
        std::printf("final loss %.6f over %zu instances\n", result.trace.back().loss, corpus.size());
    return 0;
}

struct EvalArgs {
    std::string pred_dir, gt_dir, output;
    std::int64_t labels = -1;
    std::uint32_t tau = 2;
    std::int64_t ignore_label = -1;
};

int run_eval(const EvalArgs& a) {
    std::vector<fs::path> names;
    for (const auto& entry : fs::directory_iterator(a.pred_dir))
        if (entry.path().extension() == ".dpt") names.push_back(entry.path().filename());
    std::sort(names.begin(), names.end());
    if (names.empty())
        throw dpn::TensorIoError(dpn::TensorIoError::Code::io_failure,
                                 "no .dpt predictions in " + a.pred_dir);
    std::vector<dpn::LabelMap> preds, gts;
    for (const fs::path& name : names) {
        preds.push_back(dpn::read_label_map(fs::path(a.pred_dir) / name));
        gts.push_back(dpn::read_label_map(fs::path(a.gt_dir) / name));
    }

    std::optional<std::uint32_t> ignore;
    if (a.ignore_label >= 0) ignore = std::uint32_t(a.ignore_label);
    std::uint32_t labels;
    if (a.labels > 0) {
        labels = std::uint32_t(a.labels);
    } else {
        std::uint32_t top = 0;
        for (const auto& m : gts)
            for (std::uint32_t v : m.values())
                if (!ignore || v != *ignore) top = std::max(top, v);
        for (const auto& m : preds)
            for (std::uint32_t v : m.values()) top = std::max(top, v);
        labels = top + 1;
    }

    const dpn::EvalReport report = dpn::evaluate(preds, gts, labels, a.tau, ignore);
    if (a.output.empty()) {
        report.to_csv(std::cout);
    } else {
        std::ofstream os(a.output, std::ios::trunc);
        if (!os)
            throw dpn::TensorIoError(dpn::TensorIoError::Code::io_failure,
                                     "cannot write " + a.output);
        report.to_csv(os);
    }
    return 0;
}

struct CostArgs {
    std::uint64_t f = 0, fprime = 0, n = 0, s = 0, m = 0;
};

int run_cost(const CostArgs& a) {
    const dpn::CostModelReport rep =
        dpn::estimate_cost({a.f, a.fprime, a.n, a.s, a.m});
    std::cout << rep.to_text();
    return 0;
}

struct GenArgs {
    std::string spec, out;
    std::uint64_t seed = 1;
    std::int64_t count = -1;
};

int run_gen(const GenArgs& a) {
    auto [spec, count] = dpn::parse_scene_spec(a.spec);
    if (a.count >= 0) count = std::uint32_t(a.count);
    if (count == 0) throw CLI::ValidationError("--count must be positive");
    for (std::uint32_t i = 0; i < count; ++i)
        dpn::save_instance(dpn::gen_synthetic(spec, dpn::instance_seed(a.seed, i)), a.out, i);
    std::printf("wrote %u instances to %s\n", count, a.out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mean-field label refinement over DPT tensors"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key=value defaults; command-line flags win");

    RefineArgs refine;
    CLI::App* cmd_refine = app.add_subcommand("refine", "one filtering pass over a unary field");
    cmd_refine->add_option("--unary", refine.unary, "input beliefs, H x W x L")->required();
    cmd_refine->add_option("--features", refine.features, "pixel intensities, H x W x C")->required();
    cmd_refine->add_option("--params", refine.params, "parameter directory")->required();
    cmd_refine->add_option("--output", refine.output, "refined beliefs")->required();
    cmd_refine->add_option("--argmax", refine.argmax_path, "also write the argmax label map");
    cmd_refine->add_option("--dump-activations", refine.dump_dir, "write o11..o15 here");
    cmd_refine->add_option("--threads", refine.threads, "worker threads (1 = reference mode)")
        ->check(CLI::PositiveNumber);

    OracleArgs oracle;
    CLI::App* cmd_oracle = app.add_subcommand("oracle", "iterated mean-field refinement");
    cmd_oracle->add_option("--unary", oracle.unary)->required();
    cmd_oracle->add_option("--features", oracle.features)->required();
    cmd_oracle->add_option("--params", oracle.params)->required();
    cmd_oracle->add_option("--output", oracle.output)->required();
    cmd_oracle->add_option("--iterations", oracle.iterations, "update passes")
        ->check(CLI::PositiveNumber);
    cmd_oracle->add_option("--schedule", oracle.schedule)
        ->check(CLI::IsMember({"parallel", "sequential-raster"}));
    cmd_oracle->add_option("--kernel-source", oracle.kernel_source)
        ->check(CLI::IsMember({"fixed-unary", "current-q"}));
    cmd_oracle->add_option("--damping", oracle.damping)->check(CLI::Range(0.0, 1.0));
    cmd_oracle->add_option("--trace", oracle.trace, "free-energy CSV");
    cmd_oracle->add_option("--threads", oracle.threads)->check(CLI::PositiveNumber);

    TrainArgs train;
    CLI::App* cmd_train = app.add_subcommand("train", "staged parameter learning on a corpus");
    cmd_train->add_option("--corpus", train.corpus, "directory of NNNN_{unary,feats,gt}.dpt")
        ->required();
    cmd_train->add_option("--out", train.out, "output parameter directory")->required();
    cmd_train->add_option("--init", train.init_dir, "start from this parameter directory");
    cmd_train->add_option("--components", train.components, "mixture size K")
        ->check(CLI::PositiveNumber);
    cmd_train->add_option("--context-window", train.context_window, "context extent n (odd)");
    cmd_train->add_option("--triple-window", train.triple_window, "triple extent m (odd)");
    cmd_train->add_option("--omega1", train.omega1, "initial intensity weight");
    cmd_train->add_option("--omega2", train.omega2, "initial spatial weight");
    cmd_train->add_option("--act-scale", train.act_scale, "initial b12 activation scale");
    cmd_train->add_option("--act-offset", train.act_offset, "initial b12 activation offset");
    cmd_train->add_option("--stages", train.stages, "stage sequence")->delimiter(',');
    cmd_train->add_option("--lr", train.lr, "learning rate, one value or one per stage")
        ->delimiter(',');
    cmd_train->add_option("--iters", train.iters, "iterations, one value or one per stage")
        ->delimiter(',');
    cmd_train->add_option("--batch", train.batch, "mini-batch size, 0 = full corpus");
    cmd_train->add_option("--seed", train.seed, "shuffle seed");
    cmd_train->add_option("--ignore-label", train.ignore_label, "ground-truth label to skip");
    cmd_train->add_option("--trace", train.trace, "loss CSV");

    EvalArgs eva;
    CLI::App* cmd_eval = app.add_subcommand("eval", "score predicted label maps");
    cmd_eval->add_option("--pred", eva.pred_dir, "directory of predicted label maps")->required();
    cmd_eval->add_option("--gt", eva.gt_dir, "directory of matching ground-truth maps")->required();
    cmd_eval->add_option("--labels", eva.labels, "label count (default: inferred)");
    cmd_eval->add_option("--tau", eva.tau, "boundary tolerance radius");
    cmd_eval->add_option("--ignore-label", eva.ignore_label, "ground-truth label to skip");
    cmd_eval->add_option("--output", eva.output, "CSV path (default: stdout)");

    CostArgs cost;
    CLI::App* cmd_cost = app.add_subcommand("cost", "per-layer arithmetic cost");
    cmd_cost->add_option("--f", cost.f, "feature maps")->required()->check(CLI::PositiveNumber);
    cmd_cost->add_option("--fprime", cost.fprime, "output maps")->required()->check(CLI::PositiveNumber);
    cmd_cost->add_option("--N", cost.n, "image side")->required()->check(CLI::PositiveNumber);
    cmd_cost->add_option("--s", cost.s, "filter side")->required()->check(CLI::PositiveNumber);
    cmd_cost->add_option("--M", cost.m, "batch size")->required()->check(CLI::PositiveNumber);

    GenArgs gen;
    CLI::App* cmd_gen = app.add_subcommand("gen", "synthesize a scene corpus");
    cmd_gen->add_option("--spec", gen.spec, "key=value scene description")->required();
    cmd_gen->add_option("--out", gen.out, "output corpus directory")->required();
    cmd_gen->add_option("--seed", gen.seed, "corpus seed");
    cmd_gen->add_option("--count", gen.count, "instance count (overrides the spec)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(cmd_refine)) return run_refine(refine);
        if (app.got_subcommand(cmd_oracle)) return run_oracle(oracle);
        if (app.got_subcommand(cmd_train)) return run_train(train);
        if (app.got_subcommand(cmd_eval)) return run_eval(eva);
        if (app.got_subcommand(cmd_cost)) return run_cost(cost);
        if (app.got_subcommand(cmd_gen)) return run_gen(gen);
    } catch (const dpn::TensorIoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const CLI::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
