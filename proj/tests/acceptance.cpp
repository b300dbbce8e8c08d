// Acceptance suite: one pass/fail line per criterion, nonzero exit on failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "oracles.hpp"

using namespace a3fpn;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int id, const char* desc, bool pass, const std::string& detail = "") {
    std::printf("[%s] criterion %d: %s%s%s\n", pass ? "PASS" : "FAIL", id, desc,
                detail.empty() ? "" : " -- ", detail.c_str());
    if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor neutral_offsets(int g, int k, int h, int w) {
    Tensor off({1, g * k * k * 3, h, w});
    for (int c = 0; c < off.c(); ++c)
        if (c % 3 == 2)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) off.at(0, c, y, x) = 1.0f;
    return off;
}

// 1. Degenerate resampler equals a standard convolution.
void criterion_1() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(1001);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = Tensor::random_uniform({1, 8, 16, 16}, rng);
        Tensor wg = Tensor::random_uniform({8}, rng);
        Tape t;
        t.recording = false;
        ResamplerVars rv;
        rv.wg = t.leaf(wg);
        rv.apply_gelu = false; // GELU/LN bypassed, bias off
        Var y = resample(t, t.leaf(x), OffsetField{1, 3, t.leaf(neutral_offsets(1, 3, 16, 16))}, rv);
        Tensor kernel({8, 1, 3, 3});
        for (int c = 0; c < 8; ++c)
            for (int i = 0; i < 9; ++i) kernel.at(c, 0, i / 3, i % 3) = wg[c];
        ConvParams p;
        p.weights = kernel;
        p.stride = 1;
        p.padding = 1;
        p.groups = 8;
        worst = std::max(worst, oracle::max_abs_diff(t.value(y), ops::conv2d(x, p)));
    }
    const double secs = seconds_since(t0);
    char detail[128];
    std::snprintf(detail, sizeof(detail), "max|diff|=%.2e over 50 random inputs, %.1fs", worst, secs);
    report(1, "degenerate resampler equals conv2d (<= 1e-5)", worst <= 1e-5 && secs < 10.0, detail);
}

// 2. End-to-end gradient check on the tiny lite-structure pipeline.
void criterion_2() {
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckReport r = gradcheck_pipeline(gradcheck_config(), 16, 0, 1e-3f, 100);
    const double secs = seconds_since(t0);
    char detail[160];
    std::snprintf(detail, sizeof(detail), "worst=%.2e (block %s), %.0fs", r.worst_err,
                  r.worst_block.c_str(), secs);
    report(2, "end-to-end analytic vs central differences (<= 1e-4)", r.passed(1e-4) && secs < 300.0,
           detail);
}

// 3. Column schedule widths and the top-down mirror.
void criterion_3() {
    PyramidConfig cfg;
    cfg.n_levels = 4;
    cfg.channels = {16, 16, 16, 16};
    cfg.columns = 3;
    cfg.squeeze = {1, 1, 1, 1};
    cfg.use_resampling = {true, true, true};
    cfg.compress_channels = {4, 4, 4, 4};
    cfg.gn_groups = {2, 2, 2, 2};
    cfg.resample_groups = {2, 2, 2, 2};
    std::vector<ColumnPlan> up = plan_columns(cfg);
    bool ok = up.size() == 3 && up[0].width == 2 && up[1].width == 3 && up[2].width == 4 &&
              up[0].ref_levels == std::vector<int>{1, 2} &&
              up[1].ref_levels == std::vector<int>{1, 2, 3} &&
              up[2].ref_levels == std::vector<int>{1, 2, 3, 4};
    cfg.orientation = Orientation::kTopDown;
    std::vector<ColumnPlan> down = plan_columns(cfg);
    ok = ok && down[0].ref_levels == std::vector<int>{3, 4} &&
         down[1].ref_levels == std::vector<int>{2, 3, 4} &&
         down[2].ref_levels == std::vector<int>{1, 2, 3, 4};
    report(3, "plan_columns(m=3,n=4) widths [2,3,4]; top-down mirrored", ok);
}

// 4. ICAtten algebra.
void criterion_4() {
    Rng rng(1004);
    bool norm_ok = true;
    int norm_checked = 0;
    while (norm_checked < 1000) {
        const int c = 1 + static_cast<int>(rng.below(16));
        Tensor alpha = Tensor::random_uniform({c}, rng, -2.0f, 2.0f);
        double sum = 0.0;
        for (float v : alpha.data) sum += v;
        if (std::abs(sum) < 1e-4) continue;
        ++norm_checked;
        InformativenessWeights w = informativeness(alpha, 0.5);
        double total = 0.0;
        for (double v : w.omega) total += v;
        if (std::abs(total - 1.0) > 1e-9) norm_ok = false;
    }
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int c = 2 + static_cast<int>(rng.below(7)); // C <= 8
        Tensor y = Tensor::random_uniform({2, c, 4, 4}, rng);
        Tensor alpha = Tensor::random_uniform({c}, rng, 0.1f, 2.0f);
        Tape t;
        t.recording = false;
        Var out = icatten_reassemble(t, t.leaf(y), t.leaf(alpha), t.leaf(Tensor({c})), 1, 0.5f);
        worst = std::max(worst, oracle::max_abs_diff(t.value(out), oracle::naive_reassemble(y, alpha, 0.5f)));
    }
    Tensor boundary({3}, std::vector<float>{0.0f, 1.0f, 1.0f});
    InformativenessWeights bw = informativeness(boundary, 0.5f);
    const bool boundary_ok = bw.omega1[0] == 0.5f && bw.omega2[0] == 0.5f;
    char detail[128];
    std::snprintf(detail, sizeof(detail), "oracle max|diff|=%.2e", worst);
    report(4, "ICAtten: sum(omega)=1, scalar-oracle match (<= 1e-6), threshold boundary",
           norm_ok && worst <= 1e-6 && boundary_ok, detail);
}

// 5. Context weights in (0,1); fusion matches the per-pixel oracle.
void criterion_5() {
    Rng rng(1005);
    bool range_ok = true;
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const int width = 2 + static_cast<int>(rng.below(3));
        const int c = 6, compress = 4;
        Tape t;
        t.recording = false;
        ContextWeightVars cw;
        for (int i = 0; i < width; ++i)
            cw.squeeze.emplace_back(t.leaf(Tensor::random_uniform({compress, c, 1, 1}, rng, -0.5f, 0.5f)),
                                    t.leaf(Tensor::random_uniform({compress}, rng, -0.2f, 0.2f)));
        const int cat = width * compress;
        const int hidden = rep_hidden_width(cat, 2.0f);
        RepBlockVars blk;
        blk.expand_w = t.leaf(Tensor::random_uniform({hidden, cat, 1, 1}, rng, -0.3f, 0.3f));
        blk.expand_b = t.leaf(Tensor::random_uniform({hidden}, rng, -0.1f, 0.1f));
        blk.core.w3 = t.leaf(Tensor::random_uniform({hidden, hidden, 3, 3}, rng, -0.2f, 0.2f));
        blk.core.b3 = t.leaf(Tensor::random_uniform({hidden}, rng, -0.1f, 0.1f));
        blk.core.w1 = t.leaf(Tensor::random_uniform({hidden, hidden, 1, 1}, rng, -0.2f, 0.2f));
        blk.core.b1 = t.leaf(Tensor::random_uniform({hidden}, rng, -0.1f, 0.1f));
        blk.reduce_w = t.leaf(Tensor::random_uniform({cat, hidden, 1, 1}, rng, -0.3f, 0.3f));
        blk.reduce_b = t.leaf(Tensor::random_uniform({cat}, rng, -0.1f, 0.1f));
        cw.blocks.push_back(blk);
        cw.lower_proj_w = t.leaf(Tensor::random_uniform({width, cat, 1, 1}, rng, -0.5f, 0.5f));
        cw.lower_proj_b = t.leaf(Tensor::random_uniform({width}, rng, -0.2f, 0.2f));
        cw.upper_w = t.leaf(Tensor::random_uniform({width, cat, 1, 1}, rng, -0.5f, 0.5f));
        cw.upper_b = t.leaf(Tensor::random_uniform({width}, rng, -0.2f, 0.2f));
        std::vector<Tensor> vals;
        std::vector<Var> levels;
        for (int i = 0; i < width; ++i) {
            vals.push_back(Tensor::random_uniform({1, c, 5, 5}, rng));
            levels.push_back(t.leaf(vals.back()));
        }
        Var w = generate_context_weights(t, levels, cw);
        for (float v : t.value(w).data)
            if (!(v > 0.0f && v < 1.0f)) range_ok = false;
        Var fused = fuse_levels(t, levels, w);
        worst = std::max(worst, oracle::max_abs_diff(t.value(fused), oracle::naive_fuse(vals, t.value(w))));
    }
    // zero pre-activations -> uniform 0.5
    bool half_ok = true;
    {
        Tape t;
        t.recording = false;
        const int width = 2, c = 4, compress = 3;
        ContextWeightVars cw;
        Rng r2(7);
        for (int i = 0; i < width; ++i)
            cw.squeeze.emplace_back(t.leaf(Tensor::random_uniform({compress, c, 1, 1}, r2)),
                                    t.leaf(Tensor::random_uniform({compress}, r2)));
        cw.lower_proj_w = t.leaf(Tensor({width, width * compress, 1, 1}));
        cw.lower_proj_b = t.leaf(Tensor({width}));
        cw.upper_w = t.leaf(Tensor({width, width * compress, 1, 1}));
        cw.upper_b = t.leaf(Tensor({width}));
        std::vector<Var> levels = {t.leaf(Tensor::random_uniform({1, c, 4, 4}, r2)),
                                   t.leaf(Tensor::random_uniform({1, c, 4, 4}, r2))};
        for (float v : t.value(generate_context_weights(t, levels, cw)).data)
            if (v != 0.5f) half_ok = false;
    }
    char detail[128];
    std::snprintf(detail, sizeof(detail), "fuse oracle max|diff|=%.2e", worst);
    report(5, "context weights in (0,1); fuse matches per-pixel oracle (<= 1e-6); zero case = 0.5",
           range_ok && worst <= 1e-6 && half_ok, detail);
}

// 6. Strong-DPI contraction validation on discrete channels.
void criterion_6() {
    using namespace infoflow;
    const auto t0 = std::chrono::steady_clock::now();
    // closed-form oracles evaluated here (binary entropy arithmetic)
    const double one_hop_expect = 1.0 - binary_entropy(0.1);       // 0.531004
    const double two_hop_expect = 1.0 - binary_entropy(2 * 0.1 * 0.9); // 0.319922
    ContractionReport one = check_contraction(uniform_binary_source(), {bsc(0.1)}, {bsc_eta(0.1)});
    ContractionReport two = check_contraction(uniform_binary_source(), {bsc(0.1), bsc(0.1)},
                                              {bsc_eta(0.1), bsc_eta(0.1)});
    bool ok = std::abs(one.info_bits - one_hop_expect) <= 1e-4 && one.info_bits <= 0.6400 + 1e-12 &&
              one.pass;
    ok = ok && std::abs(two.info_bits - two_hop_expect) <= 1e-4 && two.info_bits <= 0.4096 + 1e-12 &&
         two.pass;
    Rng rng(1006);
    int monotone_failures = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(7));
        ChannelDist src;
        src.k = k;
        src.marginal = random_marginal(k, rng);
        src.transition = identity_channel(k);
        std::vector<Mat> hops;
        const int n = 1 + static_cast<int>(rng.below(5));
        for (int i = 0; i < n; ++i) hops.push_back(random_transition(k, rng));
        const Vec prefix = chain_prefix_mi(src, hops);
        for (std::size_t i = 1; i < prefix.size(); ++i)
            if (prefix[i] > prefix[i - 1] + 1e-9) ++monotone_failures;
    }
    const double secs = seconds_since(t0);
    char detail[192];
    std::snprintf(detail, sizeof(detail),
                  "I1=%.4f (<=0.6400), I2=%.4f (<=0.4096), monotone failures=%d/1000, %.1fs",
                  one.info_bits, two.info_bits, monotone_failures, secs);
    report(6, "SDPI contraction: BSC values and 1000 monotone DPI chains",
           ok && monotone_failures == 0 && secs < 30.0, detail);
}

// 7. Topology: reachability and strictly smaller max hop count.
void criterion_7() {
    using namespace infoflow;
    PyramidConfig cfg;
    cfg.n_levels = 4;
    cfg.channels = {16, 16, 16, 16};
    cfg.columns = 3;
    cfg.squeeze = {1, 1, 1, 1};
    cfg.use_resampling = {true, true, true};
    cfg.compress_channels = {4, 4, 4, 4};
    cfg.gn_groups = {2, 2, 2, 2};
    cfg.resample_groups = {2, 2, 2, 2};
    TopologyGraph asym = asymptotic_graph(cfg);
    bool reach = true;
    for (int a = 1; a <= 4; ++a)
        for (int b = 1; b <= 4; ++b)
            if (!instance_reachable(asym, a, b)) reach = false;
    auto asym_max = max_pairwise_hops(asym);
    auto chain_top_bottom = topology_hops(layerwise_graph(4), 4, 1);
    const bool ok = reach && asym_max.has_value() && chain_top_bottom.has_value() &&
                    *asym_max < *chain_top_bottom;
    char detail[128];
    std::snprintf(detail, sizeof(detail), "max hops asymptotic=%d, layer-wise top->bottom=%d",
                  asym_max.value_or(-1), chain_top_bottom.value_or(-1));
    report(7, "every input level reaches every output; max hops strictly smaller than layer-wise", ok,
           detail);
}

// 8. Config fidelity for both presets.
void criterion_8() {
    const std::string full = dump_config(preset_full());
    const std::string lite = dump_config(preset_lite());
    auto has = [](const std::string& text, const char* line) {
        return text.find(std::string(line) + "\n") != std::string::npos;
    };
    bool ok = has(full, "squeeze=1,2,4,4") && has(full, "use_resampling=true,true,true") &&
              has(full, "compress_channels=16,16,16,32") && has(full, "gn_groups=16,16,16,32") &&
              has(full, "rep_blocks=2") && has(full, "expansion=4.0") &&
              has(full, "resample_groups=16,16,16,32") && has(full, "offset_scale=2.0") &&
              has(full, "norm_after_resampling=ln") && has(full, "resampler_output_bias=true") &&
              has(full, "dwconv_kernel=3");
    ok = ok && has(lite, "squeeze=1,2,4,8") && has(lite, "use_resampling=false,false,true") &&
         has(lite, "compress_channels=16,16,16,16") && has(lite, "gn_groups=16,16,16,16") &&
         has(lite, "rep_blocks=1") && has(lite, "expansion=2.0") &&
         has(lite, "resample_groups=16,16,16,16") && has(lite, "offset_scale=1.0") &&
         has(lite, "norm_after_resampling=ln") && has(lite, "resampler_output_bias=true") &&
         has(lite, "dwconv_kernel=3");
    ok = ok && parse_config(full) == preset_full() && parse_config(lite) == preset_lite() &&
         dump_config(parse_config(full)) == full && dump_config(parse_config(lite)) == lite;
    report(8, "dump-config reproduces every preset hyperparameter row and round-trips", ok);
}

// 9. Determinism and serialization.
void criterion_9() {
    namespace fs = std::filesystem;
    PyramidConfig cfg = gradcheck_config();
    ModelWeights w = seeded_init(cfg, 9);
    Rng rng(1009);
    std::vector<Tensor> inputs;
    for (int i = 1; i <= cfg.n_levels; ++i)
        inputs.push_back(Tensor::random_uniform({1, 8, 16 >> (i - 1), 16 >> (i - 1)}, rng));
    set_threads(1);
    std::vector<Tensor> a = pyramid_forward(cfg, w, inputs);
    std::vector<Tensor> b = pyramid_forward(cfg, w, inputs);
    set_threads(4);
    std::vector<Tensor> c = pyramid_forward(cfg, w, inputs);
    set_threads(0);
    bool ok = true;
    for (std::size_t i = 0; i < a.size(); ++i)
        ok = ok && bitwise_equal(a[i], b[i]) && bitwise_equal(a[i], c[i]);
    const fs::path dir = fs::temp_directory_path() / "a3fpn_acceptance";
    fs::create_directories(dir);
    const std::string path = (dir / "w.a3w").string();
    save_weights(w, path);
    ModelWeights loaded = load_weights(path, cfg);
    ok = ok && (w == loaded);
    std::vector<Tensor> d = pyramid_forward(cfg, loaded, inputs);
    for (std::size_t i = 0; i < a.size(); ++i) ok = ok && bitwise_equal(a[i], d[i]);
    fs::remove_all(dir);
    report(9, "bitwise-reproducible forward (runs, thread counts); bitwise weight round trip", ok);
}

// 10. RepConv structural reparameterization.
void criterion_10() {
    Rng rng(1010);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int c = 1 + static_cast<int>(rng.below(6));
        Tape t;
        t.recording = false;
        RepConvVars u;
        u.w3 = t.leaf(Tensor::random_uniform({c, c, 3, 3}, rng));
        u.b3 = t.leaf(Tensor::random_uniform({c}, rng));
        u.w1 = t.leaf(Tensor::random_uniform({c, c, 1, 1}, rng));
        u.b1 = t.leaf(Tensor::random_uniform({c}, rng));
        Tensor x = Tensor::random_uniform({1, c, 5, 5}, rng);
        Var train = rep_conv_forward(t, t.leaf(x), u);
        Tensor fused_out = ops::conv2d(x, fuse_rep_conv(t, u));
        worst = std::max(worst, oracle::max_abs_diff(t.value(train), fused_out));
    }
    char detail[64];
    std::snprintf(detail, sizeof(detail), "max|diff|=%.2e over 100 trials", worst);
    report(10, "train-form vs fused-form RepConv agree (<= 1e-5)", worst <= 1e-5, detail);
}

} // namespace

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    criterion_10();
    if (g_failures) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all acceptance criteria passed\n");
    return 0;
}
