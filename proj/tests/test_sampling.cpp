#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"

using namespace a3fpn;
using oracle::GradCheck;

namespace {

Tensor identity_1x1(int c) {
    Tensor w({c, c, 1, 1});
    for (int i = 0; i < c; ++i) w.at(i, i, 0, 0) = 1.0f;
    return w;
}

// Zero offsets, unit modulation.
Tensor neutral_offsets(int n, int g, int k, int h, int w) {
    Tensor off({n, g * k * k * 3, h, w});
    for (int in = 0; in < n; ++in)
        for (int c = 0; c < off.c(); ++c)
            if (c % 3 == 2)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) off.at(in, c, y, x) = 1.0f;
    return off;
}

OffsetGeneratorVars random_generator(Tape& t, Rng& rng, int width, int c, int g, int k,
                                     int dw_kernel = 3) {
    OffsetGeneratorVars vars;
    vars.dw_kernel = dw_kernel;
    vars.ctx_w = t.leaf(Tensor::random_uniform({(width - 1) * c, width * c, 1, 1}, rng, -0.3f, 0.3f));
    vars.ctx_b = t.leaf(Tensor::random_uniform({(width - 1) * c}, rng, -0.1f, 0.1f));
    for (int i = 0; i < width - 1; ++i) {
        OffsetBranchVars br;
        br.dw_w = t.leaf(Tensor::random_uniform({c, 1, dw_kernel, dw_kernel}, rng, -0.3f, 0.3f));
        br.dw_b = t.leaf(Tensor::random_uniform({c}, rng, -0.1f, 0.1f));
        br.proj_w = t.leaf(Tensor::random_uniform({g * k * k * 3, c, 1, 1}, rng, -0.3f, 0.3f));
        br.proj_b = t.leaf(Tensor::random_uniform({g * k * k * 3}, rng, -0.1f, 0.1f));
        vars.branches.push_back(br);
    }
    return vars;
}

} // namespace

TEST_CASE("coarse_upsample: identity conv keeps constants, shape doubles") {
    Tape t;
    t.recording = false;
    Var x = t.leaf(Tensor::full({1, 3, 4, 4}, 2.0f));
    Var w = t.leaf(identity_1x1(3));
    Var b = t.leaf(Tensor({3}));
    Var y = coarse_upsample(t, x, 8, 8, w, b, ops::Interp::kBilinear);
    const Tensor& yv = t.value(y);
    REQUIRE(yv.shape == std::vector<int>{1, 3, 8, 8});
    for (float v : yv.data) CHECK(v == 2.0f);
    CHECK_THROWS_AS(coarse_upsample(t, x, 4, 4, w, b, ops::Interp::kBilinear), UsageError);
    CHECK_THROWS_AS(coarse_upsample(t, x, 2, 2, w, b, ops::Interp::kBilinear), UsageError);
}

TEST_CASE("coarse_upsample equals conv2d followed by bilinear_resize") {
    Rng rng(50);
    Tape t;
    t.recording = false;
    Tensor xv = Tensor::random_uniform({2, 3, 4, 5}, rng);
    Tensor wv = Tensor::random_uniform({6, 3, 1, 1}, rng);
    Tensor bv = Tensor::random_uniform({6}, rng);
    Var y = coarse_upsample(t, t.leaf(xv), 8, 10, t.leaf(wv), t.leaf(bv), ops::Interp::kBilinear);
    ConvParams p;
    p.weights = wv;
    p.bias = bv;
    Tensor expect = ops::resize(ops::conv2d(xv, p), 8, 10);
    CHECK(bitwise_equal(t.value(y), expect));
}

TEST_CASE("coarse_downsample: shape contracts for d=1 and d=2") {
    Rng rng(51);
    Tape t;
    t.recording = false;
    Tensor xv = Tensor::random_uniform({1, 8, 16, 16}, rng);
    {
        Var y = coarse_downsample(t, t.leaf(xv), 8, 8, t.leaf(Tensor::random_uniform({5, 8, 3, 3}, rng)),
                                  t.leaf(Tensor({5})));
        CHECK(t.value(y).shape == std::vector<int>{1, 5, 8, 8});
    }
    {
        Var y = coarse_downsample(t, t.leaf(xv), 4, 4, t.leaf(Tensor::random_uniform({5, 8, 5, 5}, rng)),
                                  t.leaf(Tensor({5})));
        CHECK(t.value(y).shape == std::vector<int>{1, 5, 4, 4});
    }
    // non-power-of-two ratio
    Tensor x6 = Tensor::random_uniform({1, 8, 12, 12}, rng);
    CHECK_THROWS_AS(coarse_downsample(t, t.leaf(x6), 4, 4, t.leaf(Tensor::random_uniform({5, 8, 4, 4}, rng)),
                                      t.leaf(Tensor({5}))),
                    ConfigError);
}

TEST_CASE("coarse_downsample: averaging kernel preserves constants") {
    Tape t;
    t.recording = false;
    Var x = t.leaf(Tensor::full({1, 1, 8, 8}, 3.0f));
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f / 9.0f);
    Var y = coarse_downsample(t, x, 4, 4, t.leaf(w), t.leaf(Tensor({1})));
    // interior positions average nine identical values
    CHECK(t.value(y).at(0, 0, 1, 1) == Catch::Approx(3.0).margin(1e-6));
    CHECK(t.value(y).at(0, 0, 2, 2) == Catch::Approx(3.0).margin(1e-6));
}

TEST_CASE("generate_offsets: zero-initialized projection yields dx=dy=0, dm=bias") {
    Rng rng(52);
    const int width = 3, c = 4, g = 2, k = 3;
    Tape t;
    t.recording = false;
    std::vector<Var> levels;
    for (int i = 0; i < width; ++i) levels.push_back(t.leaf(Tensor::random_uniform({1, c, 6, 6}, rng)));
    OffsetGeneratorVars vars = random_generator(t, rng, width, c, g, k);
    const float bm = 0.37f;
    for (auto& br : vars.branches) {
        Tensor zero_w({g * k * k * 3, c, 1, 1});
        Tensor bias({g * k * k * 3});
        for (int i = 0; i < bias.dim(0); ++i)
            bias[i] = (i % 3 == 2) ? bm : 0.0f;
        br.proj_w = t.leaf(zero_w);
        br.proj_b = t.leaf(bias);
    }
    std::vector<OffsetField> fields = generate_offsets(t, levels, vars, g, k, 2.0f);
    REQUIRE(fields.size() == static_cast<std::size_t>(width - 1)); // min-1 fields
    for (const OffsetField& f : fields) {
        const Tensor& v = t.value(f.values);
        REQUIRE(v.shape == std::vector<int>{1, g * k * k * 3, 6, 6});
        for (int ch = 0; ch < v.c(); ++ch)
            for (int y = 0; y < 6; ++y)
                for (int x = 0; x < 6; ++x) {
                    if (ch % 3 == 2)
                        CHECK(v.at(0, ch, y, x) == bm);
                    else
                        CHECK(v.at(0, ch, y, x) == 0.0f);
                }
        // logical (G, K^2, 3, H, W) accessor agrees with the flat layout
        CHECK(OffsetField::at(v, k, 0, g - 1, k * k - 1, 2, 3, 4) == bm);
        CHECK(OffsetField::at(v, k, 0, 0, 0, 0, 3, 4) == 0.0f);
    }
}

TEST_CASE("generate_offsets: doubling offset_scale doubles dx/dy, leaves dm unchanged") {
    Rng rng(53);
    const int width = 2, c = 4, g = 1, k = 3;
    Tape t;
    t.recording = false;
    std::vector<Var> levels = {t.leaf(Tensor::random_uniform({1, c, 5, 5}, rng)),
                               t.leaf(Tensor::random_uniform({1, c, 5, 5}, rng))};
    OffsetGeneratorVars vars = random_generator(t, rng, width, c, g, k);
    Tensor v1 = t.value(generate_offsets(t, levels, vars, g, k, 1.0f)[0].values);
    Tensor v2 = t.value(generate_offsets(t, levels, vars, g, k, 2.0f)[0].values);
    for (int ch = 0; ch < v1.c(); ++ch)
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 5; ++x) {
                if (ch % 3 == 2)
                    CHECK(v2.at(0, ch, y, x) == v1.at(0, ch, y, x));
                else
                    CHECK(v2.at(0, ch, y, x) == Catch::Approx(2.0f * v1.at(0, ch, y, x)).margin(1e-6));
            }
}

TEST_CASE("generate_offsets: the context conv mixes every level into every field") {
    Rng rng(54);
    const int width = 3, c = 4, g = 1, k = 3;
    Tape t;
    t.recording = false;
    std::vector<Tensor> vals;
    std::vector<Var> levels;
    for (int i = 0; i < width; ++i) {
        vals.push_back(Tensor::random_uniform({1, c, 5, 5}, rng));
        levels.push_back(t.leaf(vals.back()));
    }
    OffsetGeneratorVars vars = random_generator(t, rng, width, c, g, k);
    std::vector<OffsetField> base = generate_offsets(t, levels, vars, g, k, 1.0f);
    // perturb level 2 (not the reference of any single field) and re-run
    Tensor bumped = vals[2];
    bumped.at(0, 1, 2, 2) += 0.5f;
    std::vector<Var> levels2 = {t.leaf(vals[0]), t.leaf(vals[1]), t.leaf(bumped)};
    std::vector<OffsetField> moved = generate_offsets(t, levels2, vars, g, k, 1.0f);
    for (std::size_t i = 0; i < base.size(); ++i)
        CHECK(oracle::max_abs_diff(t.value(base[i].values), t.value(moved[i].values)) > 0.0);

    // inconsistent spatial shapes
    std::vector<Var> bad = {levels[0], levels[1], t.leaf(Tensor::random_uniform({1, c, 4, 4}, rng))};
    CHECK_THROWS_AS(generate_offsets(t, bad, vars, g, k, 1.0f), UsageError);
}

TEST_CASE("resample: degenerate offsets reduce to a standard convolution") {
    Rng rng(55);
    Tensor x = Tensor::random_uniform({1, 8, 16, 16}, rng);
    Tensor wg = Tensor::random_uniform({8}, rng);
    Tape t;
    t.recording = false;
    OffsetField field{1, 3, t.leaf(neutral_offsets(1, 1, 3, 16, 16))};
    ResamplerVars rv;
    rv.wg = t.leaf(wg);
    rv.apply_gelu = false;
    Var y = resample(t, t.leaf(x), field, rv);
    // equivalent depthwise conv: every 3x3 tap equals wg[c]
    Tensor kernel({8, 1, 3, 3});
    for (int c = 0; c < 8; ++c)
        for (int i = 0; i < 9; ++i) kernel.at(c, 0, i / 3, i % 3) = wg[c];
    ConvParams p;
    p.weights = kernel;
    p.stride = 1;
    p.padding = 1;
    p.groups = 8;
    Tensor expect = ops::depthwise_conv2d(x, p);
    CHECK(oracle::max_abs_diff(t.value(y), expect) <= 1e-5);
}

TEST_CASE("resample: uniform integer dx shift equals sampling a shifted map") {
    Rng rng(56);
    const int h = 8, w = 8;
    Tensor x = Tensor::random_uniform({1, 4, h, w}, rng);
    Tensor wg = Tensor::random_uniform({4}, rng);
    Tape t;
    t.recording = false;
    Tensor shifted({1, 4, h, w}); // x shifted left by one pixel, zero padded
    for (int c = 0; c < 4; ++c)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx + 1 < w; ++xx) shifted.at(0, c, y, xx) = x.at(0, c, y, xx + 1);
    Tensor off = neutral_offsets(1, 1, 3, h, w);
    for (int ch = 0; ch < off.c(); ++ch)
        if (ch % 3 == 0)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) off.at(0, ch, y, xx) = 1.0f; // dx = +1
    ResamplerVars rv;
    rv.wg = t.leaf(wg);
    rv.apply_gelu = false;
    Var with_offset = resample(t, t.leaf(x), OffsetField{1, 3, t.leaf(off)}, rv);
    Var on_shifted = resample(t, t.leaf(shifted), OffsetField{1, 3, t.leaf(neutral_offsets(1, 1, 3, h, w))}, rv);
    // the shifted map zero-fills x[0], which the offset path still reads, so
    // equivalence holds away from the left border column
    const Tensor& a = t.value(with_offset);
    const Tensor& b = t.value(on_shifted);
    for (int c = 0; c < 4; ++c)
        for (int y = 0; y < h; ++y)
            for (int xx = 1; xx < w; ++xx)
                CHECK(a.at(0, c, y, xx) == Catch::Approx(b.at(0, c, y, xx)).margin(1e-5));
}

TEST_CASE("resample: dm=0 annihilates the pre-activation output") {
    Rng rng(57);
    Tape t;
    t.recording = false;
    Tensor off({1, 2 * 9 * 3, 6, 6}); // all slots zero, including dm
    ResamplerVars rv;
    rv.wg = t.leaf(Tensor::random_uniform({4}, rng));
    rv.apply_gelu = false;
    Var y = resample(t, t.leaf(Tensor::random_uniform({1, 4, 6, 6}, rng)), OffsetField{2, 3, t.leaf(off)}, rv);
    for (float v : t.value(y).data) CHECK(v == 0.0f);
}

TEST_CASE("resample is linear in x for fixed offsets (GELU/LN bypassed)") {
    Rng rng(58);
    Tensor a = Tensor::random_uniform({1, 4, 6, 6}, rng);
    Tensor b = Tensor::random_uniform({1, 4, 6, 6}, rng);
    Tensor off = Tensor::random_uniform({1, 2 * 9 * 3, 6, 6}, rng, -1.0f, 1.0f);
    Tensor wg = Tensor::random_uniform({4}, rng);
    Tape t;
    t.recording = false;
    ResamplerVars rv;
    rv.wg = t.leaf(wg);
    rv.apply_gelu = false;
    auto eval = [&](const Tensor& x) {
        return t.value(resample(t, t.leaf(x), OffsetField{2, 3, t.leaf(off)}, rv));
    };
    const float ca = 1.7f, cb = -0.4f;
    Tensor mix(a.shape);
    for (std::int64_t i = 0; i < a.numel(); ++i) mix[i] = ca * a[i] + cb * b[i];
    Tensor lhs = eval(mix);
    Tensor ra = eval(a), rb = eval(b);
    for (std::int64_t i = 0; i < lhs.numel(); ++i)
        CHECK(lhs[i] == Catch::Approx(ca * ra[i] + cb * rb[i]).margin(1e-4));
}

TEST_CASE("resample output keeps the reference shape; group mismatch rejected") {
    Rng rng(59);
    Tape t;
    t.recording = false;
    Tensor x = Tensor::random_uniform({2, 6, 4, 4}, rng);
    ResamplerVars rv;
    rv.wg = t.leaf(Tensor::random_uniform({6}, rng));
    rv.bias = t.leaf(Tensor::random_uniform({6}, rng));
    rv.ln_gamma = t.leaf(Tensor::full({6}, 1.0f));
    rv.ln_beta = t.leaf(Tensor({6}));
    Var y = resample(t, t.leaf(x), OffsetField{3, 3, t.leaf(neutral_offsets(2, 3, 3, 4, 4))}, rv);
    CHECK(t.value(y).shape == x.shape);
    // 4 groups do not divide 6 channels
    CHECK_THROWS_AS(resample(t, t.leaf(x), OffsetField{4, 3, t.leaf(neutral_offsets(2, 4, 3, 4, 4))}, rv),
                    ConfigError);
}

TEST_CASE("gradcheck: resample w.r.t. x, offsets, wg at generic sample points") {
    Rng rng(60);
    const int g = 2, k = 3;
    Tensor off({1, g * k * k * 3, 5, 5});
    for (int c = 0; c < off.c(); ++c)
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 5; ++x) {
                if (c % 3 == 2) {
                    off.at(0, c, y, x) = rng.uniform(0.4f, 1.3f);
                } else {
                    float v = rng.uniform(-1.0f, 1.0f);
                    if (std::abs(v - std::round(v)) < 0.07f) v += 0.17f;
                    off.at(0, c, y, x) = v;
                }
            }
    GradCheck gc;
    gc.leaves = {Tensor::random_uniform({1, 4, 5, 5}, rng), off, Tensor::random_uniform({4}, rng),
                 Tensor::random_uniform({4}, rng, 0.5f, 1.5f), Tensor::random_uniform({4}, rng)};
    gc.set([g, k](auto& t, const std::vector<Var>& v) {
        ResamplerVars rv;
        rv.wg = v[2];
        rv.ln_gamma = v[3];
        rv.ln_beta = v[4];
        rv.apply_gelu = true;
        return resample(t, v[0], OffsetField{g, k, v[1]}, rv);
    });
    CHECK(gc.run() <= 1e-4);
}

TEST_CASE("gradcheck: full offset generator + resample path") {
    Rng rng(61);
    const int width = 2, c = 4, g = 2, k = 3;
    // leaves: two levels, ctx w/b, dw w/b, proj w/b, wg
    GradCheck gc;
    gc.leaves = {Tensor::random_uniform({1, c, 5, 5}, rng),
                 Tensor::random_uniform({1, c, 5, 5}, rng),
                 Tensor::random_uniform({(width - 1) * c, width * c, 1, 1}, rng, -0.3f, 0.3f),
                 Tensor::random_uniform({(width - 1) * c}, rng, -0.1f, 0.1f),
                 Tensor::random_uniform({c, 1, 3, 3}, rng, -0.3f, 0.3f),
                 Tensor::random_uniform({c}, rng, -0.1f, 0.1f),
                 Tensor::random_uniform({g * k * k * 3, c, 1, 1}, rng, -0.2f, 0.2f),
                 Tensor::random_uniform({g * k * k * 3}, rng, -0.1f, 0.1f),
                 Tensor::random_uniform({c}, rng)};
    gc.set([g, k](auto& t, const std::vector<Var>& v) {
        OffsetGeneratorVars vars;
        vars.dw_kernel = 3;
        vars.ctx_w = v[2];
        vars.ctx_b = v[3];
        vars.branches.push_back(OffsetBranchVars{v[4], v[5], v[6], v[7]});
        std::vector<OffsetField> fields = generate_offsets(t, {v[0], v[1]}, vars, g, k, 1.5f);
        ResamplerVars rv;
        rv.wg = v[8];
        rv.apply_gelu = false;
        return resample(t, v[1], fields[0], rv);
    });
    CHECK(gc.run() <= 1e-4);
}
