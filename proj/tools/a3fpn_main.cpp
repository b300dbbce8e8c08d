#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "a3fpn/a3fpn.hpp"

namespace fs = std::filesystem;
using namespace a3fpn;

namespace {

struct ForwardOpts {
    std::string preset, config, weights, out_dir;
    std::vector<std::string> inputs;
    std::uint64_t seed = 0;
    bool have_seed = false;
    bool stats = false;
};

struct GradcheckOpts {
    std::string preset, config;
    std::uint64_t seed = 0;
    float eps = 1e-3f;
    double tol = 1e-4;
    int base = 16;
    int param_stride = 100;
    bool corrupt = false;
};

struct InfoflowOpts {
    int hops = 1;
    double p = 0.1;
    int trials = 0;
    std::uint64_t seed = 0;
};

struct DumpOpts {
    std::string preset_name, config;
};

struct HeatmapOpts {
    std::string input, out;
    int channel = -1;
    bool mean = false;
};

PyramidConfig resolve_config(const std::string& preset_name, const std::string& config_path) {
    if (!preset_name.empty() && !config_path.empty())
        throw UsageError("--preset and --config are mutually exclusive");
    if (!config_path.empty()) {
        std::ifstream is(config_path);
        if (!is) throw IoError("cannot open config: " + config_path);
        std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        return parse_config(text);
    }
    if (!preset_name.empty()) return preset(preset_name);
    throw UsageError("one of --preset or --config is required");
}

int run_forward(const ForwardOpts& o) {
    PyramidConfig cfg = resolve_config(o.preset, o.config);
    if (!o.weights.empty() && o.have_seed)
        throw UsageError("--weights and --seed are mutually exclusive");
    ModelWeights weights =
        o.weights.empty() ? seeded_init(cfg, o.seed) : load_weights(o.weights, cfg);
    if (static_cast<int>(o.inputs.size()) != cfg.n_levels)
        throw UsageError("expected " + std::to_string(cfg.n_levels) + " --inputs files, got " +
                         std::to_string(o.inputs.size()));
    std::vector<Tensor> inputs;
    for (const std::string& path : o.inputs) inputs.push_back(load_a3t(path));
    validate_pyramid_inputs(cfg, inputs);
    std::vector<Tensor> outputs = pyramid_forward(cfg, weights, inputs);
    fs::create_directories(o.out_dir);
    for (int i = 1; i <= cfg.n_levels; ++i)
        save_a3t((fs::path(o.out_dir) / ("level" + std::to_string(i) + ".a3t")).string(),
                 outputs[static_cast<std::size_t>(i - 1)]);
    if (o.stats) {
        std::ofstream os(fs::path(o.out_dir) / "stats.txt");
        for (int i = 1; i <= cfg.n_levels; ++i) {
            const Tensor& t = outputs[static_cast<std::size_t>(i - 1)];
            float lo = t[0], hi = t[0];
            double sum = 0.0, sq = 0.0;
            for (float v : t.data) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
                sum += v;
                sq += static_cast<double>(v) * v;
            }
            const double mean = sum / static_cast<double>(t.numel());
            const double var = std::max(0.0, sq / static_cast<double>(t.numel()) - mean * mean);
            char line[256];
            std::snprintf(line, sizeof(line), "level%d min=%.6g max=%.6g mean=%.6g std=%.6g\n", i,
                          static_cast<double>(lo), static_cast<double>(hi), mean, std::sqrt(var));
            os << line;
        }
        if (!os) throw IoError("failed to write stats.txt");
    }
    return 0;
}

int run_gradcheck(const GradcheckOpts& o) {
    PyramidConfig cfg =
        (o.preset.empty() && o.config.empty()) ? gradcheck_config() : resolve_config(o.preset, o.config);
    GradCheckReport report =
        gradcheck_pipeline(cfg, o.base, o.seed, o.eps, o.param_stride, o.corrupt);
    for (const GradBlock& blk : report.blocks)
        std::printf("block=%s max_rel_err=%.3e checked=%d\n", blk.name.c_str(), blk.max_err, blk.checked);
    std::printf("worst=%.3e block=%s tol=%.3e\n", report.worst_err, report.worst_block.c_str(), o.tol);
    if (report.passed(o.tol)) {
        std::printf("gradcheck PASS\n");
        return 0;
    }
    std::printf("gradcheck FAIL (worst block: %s)\n", report.worst_block.c_str());
    return 1;
}

int run_infoflow(const InfoflowOpts& o) {
    if (o.p < 0.0 || o.p > 0.5) throw UsageError("--p must be in [0, 0.5]");
    if (o.hops < 1) throw UsageError("--hops must be >= 1");
    if (o.trials < 0) throw UsageError("--trials must be >= 0");
    using namespace infoflow;
    int failures = 0, total = 0;
    auto emit = [&](int id, double info, double bound, bool pass) {
        std::printf("trial=%d I=%.4f bound=%.4f pass=%s\n", id, info, bound, pass ? "true" : "false");
        ++total;
        if (!pass) ++failures;
    };
    {
        std::vector<Mat> hops(static_cast<std::size_t>(o.hops), bsc(o.p));
        Vec etas(static_cast<std::size_t>(o.hops), bsc_eta(o.p));
        ContractionReport r = check_contraction(uniform_binary_source(), hops, etas);
        emit(0, r.info_bits, r.bound_bits, r.pass);
    }
    Rng rng(o.seed);
    for (int t = 1; t <= o.trials; ++t) {
        const int k = 2 + static_cast<int>(rng.below(7)); // alphabet size 2..8
        const int n_hops = 1 + static_cast<int>(rng.below(5));
        ChannelDist src;
        src.k = k;
        src.marginal = random_marginal(k, rng);
        src.transition = identity_channel(k);
        std::vector<Mat> hops;
        for (int h = 0; h < n_hops; ++h) hops.push_back(random_transition(k, rng));
        const Vec prefix = chain_prefix_mi(src, hops);
        bool monotone = true;
        for (std::size_t i = 1; i < prefix.size(); ++i)
            if (prefix[i] > prefix[i - 1] + 1e-9) monotone = false;
        // For arbitrary channels no closed-form eta exists; the DPI bound is
        // the previous hop's mutual information.
        emit(t, prefix.back(), prefix[prefix.size() - 2], monotone);
    }
    std::printf("summary trials=%d failures=%d\n", total, failures);
    return failures == 0 ? 0 : 1;
}

int run_dump_config(const DumpOpts& o) {
    PyramidConfig cfg = resolve_config(o.preset_name, o.config);
    std::fputs(dump_config(cfg).c_str(), stdout);
    return 0;
}

int run_heatmap(const HeatmapOpts& o) {
    if (o.mean == (o.channel >= 0))
        throw UsageError("exactly one of --channel or --mean is required");
    Tensor t = load_a3t(o.input);
    export_heatmap(t, o.mean ? -1 : o.channel, o.out);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Asymptotic content-aware feature pyramid pipeline"};
    app.require_subcommand(1);

    ForwardOpts fo;
    CLI::App* fwd = app.add_subcommand("forward", "Run the pyramid on A3T input levels");
    fwd->add_option("--preset", fo.preset, "Config preset: full | lite");
    fwd->add_option("--config", fo.config, "Config file (key=value lines)");
    fwd->add_option("--weights", fo.weights, "A3W1 weight file");
    fwd->add_option("--seed", fo.seed, "Seed for deterministic initialization")
        ->trigger_on_parse()
        ->each([&fo](const std::string&) { fo.have_seed = true; });
    fwd->add_option("--inputs", fo.inputs, "Input A3T files, one per level")->required();
    fwd->add_option("--out", fo.out_dir, "Output directory")->required();
    fwd->add_flag("--stats", fo.stats, "Also write per-level stats.txt");

    GradcheckOpts go;
    CLI::App* grad = app.add_subcommand("gradcheck", "Finite-difference check of the full pipeline");
    grad->add_option("--preset", go.preset, "Config preset: full | lite");
    grad->add_option("--config", go.config, "Config file");
    grad->add_option("--seed", go.seed, "Seed");
    grad->add_option("--eps", go.eps, "Central difference step");
    grad->add_option("--tol", go.tol, "Max allowed relative error");
    grad->add_option("--base", go.base, "Base level spatial size");
    grad->add_option("--param-stride", go.param_stride, "Check every n-th parameter element");
    grad->add_flag("--corrupt-analytic", go.corrupt, "Negative-control hook: corrupt one gradient")
        ->group(""); // hidden

    InfoflowOpts io;
    CLI::App* info = app.add_subcommand("infoflow", "Information-flow contraction reports");
    info->add_option("--hops", io.hops, "BSC chain length");
    info->add_option("--p", io.p, "BSC flip probability in [0, 0.5]");
    info->add_option("--trials", io.trials, "Randomized DPI trials");
    info->add_option("--seed", io.seed, "Seed for randomized trials");

    DumpOpts dump;
    CLI::App* dc = app.add_subcommand("dump-config", "Print a canonical config");
    dc->add_option("preset", dump.preset_name, "Preset name: full | lite");
    dc->add_option("--config", dump.config, "Config file to echo in canonical form");

    HeatmapOpts ho;
    CLI::App* hm = app.add_subcommand("export-heatmap", "Render one plane of an A3T file as PGM");
    hm->add_option("--input", ho.input, "Rank-4 A3T file")->required();
    hm->add_option("--channel", ho.channel, "Channel index");
    hm->add_flag("--mean", ho.mean, "Export the channel mean instead of one channel");
    hm->add_option("--out", ho.out, "Output PGM path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (fwd->parsed()) return run_forward(fo);
        if (grad->parsed()) return run_gradcheck(go);
        if (info->parsed()) return run_infoflow(io);
        if (dc->parsed()) return run_dump_config(dump);
        if (hm->parsed()) return run_heatmap(ho);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const ComputeError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}
