#pragma once

#include <vector>

#include "a3fpn/autodiff.hpp"

namespace a3fpn {

// Grouped per-position resampling directives. Logical shape (G, K^2, 3, H, W)
// per batch item with slot 0 = dx, slot 1 = dy, slot 2 = dm; stored flat as a
// rank-4 (N, G*K^2*3, H, W) tensor. dx/dy are in pixels of the target grid and
// already carry the configured offset_scale.
struct OffsetField {
    int groups = 1;
    int k = 3;
    Var values;

    template <typename T>
    static T at(const BasicTensor<T>& v, int k, int in, int g, int n, int slot, int y, int x) {
        return v.at(in, (g * k * k + n) * 3 + slot, y, x);
    }
};

// 1x1 conv to the target channel count, then resize to the target spatial size.
template <typename T>
Var coarse_upsample(BasicTape<T>& t, Var x, int target_h, int target_w, Var w, Var b,
                    ops::Interp mode) {
    if (t.value(x).h() >= target_h || t.value(x).w() >= target_w)
        throw UsageError("coarse_upsample: source must be strictly smaller than the target");
    Var y = ad::conv2d(t, x, w, b, 1, 0, 1);
    return ad::resize(t, y, target_h, target_w, mode);
}

// Single strided conv with stride s = 2^d, kernel s+1, padding s/2.
inline int downsample_stride(int src, int dst) {
    if (src <= dst || dst < 1) throw UsageError("coarse_downsample: source must be larger than target");
    int s = src / dst;
    if (s * dst != src || (s & (s - 1)) != 0)
        throw ConfigError("coarse_downsample: source/target ratio must be a power of two");
    return s;
}

template <typename T>
Var coarse_downsample(BasicTape<T>& t, Var x, int target_h, int target_w, Var w, Var b) {
    const int sy = downsample_stride(t.value(x).h(), target_h);
    const int sx = downsample_stride(t.value(x).w(), target_w);
    if (sy != sx) throw ConfigError("coarse_downsample: anisotropic ratios are not supported");
    if (t.value(w).dim(2) != sy + 1 || t.value(w).dim(3) != sy + 1)
        throw ConfigError("coarse_downsample: kernel must be stride+1");
    return ad::conv2d(t, x, w, b, sy, sy / 2, 1);
}

struct OffsetBranchVars {
    Var dw_w, dw_b;     // depthwise (C,1,k,k) conv
    Var proj_w, proj_b; // 1x1 projection to G*K^2*3 channels
};

struct OffsetGeneratorVars {
    Var ctx_w, ctx_b; // 1x1 context conv to (min-1)*C channels
    std::vector<OffsetBranchVars> branches;
    int dw_kernel = 3;
};

// Builds the per-channel constant that scales the dx/dy slots by offset_scale
// and leaves dm untouched.
template <typename T>
BasicTensor<T> offset_scale_mask(int groups, int k, float offset_scale) {
    BasicTensor<T> mask({1, groups * k * k * 3, 1, 1}, T(1));
    for (int c = 0; c < mask.c(); ++c)
        if (c % 3 != 2) mask[c] = T(offset_scale);
    return mask;
}

// levels[i] is the reference when i == reference_index; all entries share one
// shape. Produces one OffsetField per non-reference level, in level order.
template <typename T>
std::vector<OffsetField> generate_offsets(BasicTape<T>& t, const std::vector<Var>& levels,
                                          const OffsetGeneratorVars& vars, int groups, int k,
                                          float offset_scale) {
    if (levels.size() < 2) throw UsageError("generate_offsets: need at least two levels");
    const std::vector<int> ref_shape = t.value(levels[0]).shape;
    const int c = ref_shape[1];
    for (const Var v : levels)
        if (t.value(v).shape != ref_shape)
            throw UsageError("generate_offsets: inconsistent shapes among inputs");
    const int width = static_cast<int>(levels.size());
    if (static_cast<int>(vars.branches.size()) != width - 1)
        throw ConfigError("generate_offsets: branch count must be width-1");

    Var ctx = ad::conv2d(t, ad::concat_channels(t, levels), vars.ctx_w, vars.ctx_b, 1, 0, 1);
    ctx = ad::gelu(t, ctx);
    const std::vector<int> sizes(static_cast<std::size_t>(width - 1), c);
    std::vector<Var> parts = ad::split_channels(t, ctx, sizes);

    Var mask = ad::constant(t, offset_scale_mask<T>(groups, k, offset_scale));
    std::vector<OffsetField> fields;
    fields.reserve(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const OffsetBranchVars& br = vars.branches[i];
        Var h = ad::depthwise_conv2d(t, parts[i], br.dw_w, br.dw_b, (vars.dw_kernel - 1) / 2);
        h = ad::gelu(t, h);
        Var raw = ad::conv2d(t, h, br.proj_w, br.proj_b, 1, 0, 1);
        Var scaled = ad::hadamard(t, raw, mask);
        if (!t.value(scaled).all_finite())
            throw ComputeError("generate_offsets: non-finite offset value");
        fields.push_back(OffsetField{groups, k, scaled});
    }
    return fields;
}

struct ResamplerVars {
    Var wg;                // rank-1 (C): per-group projection weights, c/G per group
    Var bias;              // optional rank-1 (C)
    Var ln_gamma, ln_beta; // optional post-resample layer norm
    bool apply_gelu = true;
};

// Grouped context-aware deformable gather, then optional bias/GELU/LN. Output
// has the reference level's shape.
template <typename T>
Var resample(BasicTape<T>& t, Var x, const OffsetField& field, const ResamplerVars& vars) {
    Var y = ad::deform_resample(t, x, field.values, vars.wg, vars.bias, field.groups, field.k);
    if (vars.apply_gelu) y = ad::gelu(t, y);
    if (vars.ln_gamma.valid()) y = ad::layer_norm(t, y, vars.ln_gamma, vars.ln_beta);
    return y;
}

} // namespace a3fpn
