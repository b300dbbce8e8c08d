#pragma once

#include <vector>

#include "a3fpn/autodiff.hpp"

namespace a3fpn {

// Train-form RepConv unit: parallel 3x3 conv + 1x1 conv (+ identity when the
// channel counts allow it), summed. Activation is applied by the caller.
struct RepConvVars {
    Var w3, b3; // (C_out, C_in, 3, 3)
    Var w1, b1; // (C_out, C_in, 1, 1)
    bool identity = true;
};

template <typename T>
Var rep_conv_forward(BasicTape<T>& t, Var x, const RepConvVars& vars) {
    Var y = ad::add(t, ad::conv2d(t, x, vars.w3, vars.b3, 1, 1, 1),
                    ad::conv2d(t, x, vars.w1, vars.b1, 1, 0, 1));
    if (vars.identity) y = ad::add(t, y, x);
    return y;
}

// Deployment fold: 1x1 kernel embedded at the center of the 3x3, identity as a
// centered delta kernel. Forward outputs match the train form exactly up to
// float rounding.
template <typename T>
BasicConvParams<T> fuse_rep_conv(const BasicTensor<T>& w3, const BasicTensor<T>& b3,
                                 const BasicTensor<T>& w1, const BasicTensor<T>& b1, bool identity) {
    if (w3.rank() != 4 || w3.dim(2) != 3 || w3.dim(3) != 3)
        throw ConfigError("fuse_rep_conv: expected a 3x3 kernel");
    if (w1.rank() != 4 || w1.dim(2) != 1 || w1.dim(3) != 1 || w1.dim(0) != w3.dim(0) ||
        w1.dim(1) != w3.dim(1))
        throw ConfigError("fuse_rep_conv: 1x1 kernel shape mismatch");
    if (identity && w3.dim(0) != w3.dim(1))
        throw ConfigError("fuse_rep_conv: identity path requires C_in == C_out");
    BasicConvParams<T> fused;
    fused.weights = w3;
    fused.stride = 1;
    fused.padding = 1;
    fused.groups = 1;
    for (int co = 0; co < w3.dim(0); ++co)
        for (int ci = 0; ci < w3.dim(1); ++ci) {
            T& center = fused.weights.at(co, ci, 1, 1);
            center += w1.at(co, ci, 0, 0);
            if (identity && co == ci) center += T(1);
        }
    fused.bias = BasicTensor<T>({w3.dim(0)});
    for (int co = 0; co < w3.dim(0); ++co) {
        T b = T(0);
        if (!b3.shape.empty()) b += b3[co];
        if (!b1.shape.empty()) b += b1[co];
        fused.bias[co] = b;
    }
    return fused;
}

template <typename T>
BasicConvParams<T> fuse_rep_conv(const BasicTape<T>& t, const RepConvVars& vars) {
    static const BasicTensor<T> kEmpty;
    return fuse_rep_conv(t.value(vars.w3), vars.b3.valid() ? t.value(vars.b3) : kEmpty,
                         t.value(vars.w1), vars.b1.valid() ? t.value(vars.b1) : kEmpty, vars.identity);
}

// Residual block around a foldable RepConv core at hidden width round(e * C):
//   out = x + reduce1x1( gelu( repconv( gelu( expand1x1(x) ) ) ) )
struct RepBlockVars {
    Var expand_w, expand_b; // C -> hidden
    RepConvVars core;       // hidden -> hidden
    Var reduce_w, reduce_b; // hidden -> C
};

inline int rep_hidden_width(int channels, float expansion) {
    const int h = static_cast<int>(std::lround(static_cast<double>(channels) * expansion));
    return std::max(1, h);
}

template <typename T>
Var rep_block_forward(BasicTape<T>& t, Var x, const RepBlockVars& vars, bool use_fused_core = false) {
    Var h = ad::gelu(t, ad::conv2d(t, x, vars.expand_w, vars.expand_b, 1, 0, 1));
    if (use_fused_core) {
        const BasicConvParams<T> fused = fuse_rep_conv(t, vars.core);
        Var fw = ad::constant(t, fused.weights);
        Var fb = ad::constant(t, fused.bias);
        h = ad::conv2d(t, h, fw, fb, 1, 1, 1);
    } else {
        h = rep_conv_forward(t, h, vars.core);
    }
    h = ad::gelu(t, h);
    Var y = ad::conv2d(t, h, vars.reduce_w, vars.reduce_b, 1, 0, 1);
    return ad::add(t, x, y);
}

// Context weight generator: squeeze every level, concatenate, run a RepBlock
// branch and a cheap 1x1 branch to `width` channels each, add, sigmoid.
struct ContextWeightVars {
    std::vector<std::pair<Var, Var>> squeeze; // per level 1x1 (w, b) to compress channels
    std::vector<RepBlockVars> blocks;
    Var lower_proj_w, lower_proj_b; // concat width -> width
    Var upper_w, upper_b;           // concat width -> width
};

template <typename T>
Var generate_context_weights(BasicTape<T>& t, const std::vector<Var>& levels,
                             const ContextWeightVars& vars) {
    if (levels.size() < 2) throw UsageError("generate_context_weights: need at least two levels");
    {
        const int rh = t.value(levels[0]).h(), rw = t.value(levels[0]).w();
        for (const Var v : levels)
            if (t.value(v).h() != rh || t.value(v).w() != rw)
                throw UsageError("generate_context_weights: inconsistent spatial shapes");
    }
    if (vars.squeeze.size() != levels.size())
        throw ConfigError("generate_context_weights: one squeeze conv per level required");
    std::vector<Var> squeezed;
    squeezed.reserve(levels.size());
    for (std::size_t i = 0; i < levels.size(); ++i)
        squeezed.push_back(
            ad::gelu(t, ad::conv2d(t, levels[i], vars.squeeze[i].first, vars.squeeze[i].second, 1, 0, 1)));
    Var cat = ad::concat_channels(t, squeezed);
    Var lower = cat;
    for (const RepBlockVars& blk : vars.blocks) lower = rep_block_forward(t, lower, blk);
    lower = ad::conv2d(t, lower, vars.lower_proj_w, vars.lower_proj_b, 1, 0, 1);
    Var upper = ad::conv2d(t, cat, vars.upper_w, vars.upper_b, 1, 0, 1);
    return ad::sigmoid(t, ad::add(t, lower, upper));
}

// Y = sum_n W^n (x) X_n, each weight plane broadcast across its level's channels.
template <typename T>
Var fuse_levels(BasicTape<T>& t, const std::vector<Var>& levels, Var weights) {
    if (t.value(weights).c() != static_cast<int>(levels.size()))
        throw UsageError("fuse_levels: weight channel count must equal the level count");
    {
        const std::vector<int> ref = t.value(levels[0]).shape;
        for (const Var v : levels)
            if (t.value(v).shape != ref) throw UsageError("fuse_levels: level shape mismatch");
        const auto& wv = t.value(weights);
        if (wv.n() != ref[0] || wv.h() != ref[2] || wv.w() != ref[3])
            throw UsageError("fuse_levels: weight spatial shape mismatch");
    }
    const std::vector<int> ones(levels.size(), 1);
    std::vector<Var> planes = ad::split_channels(t, weights, ones);
    Var acc;
    for (std::size_t i = 0; i < levels.size(); ++i) {
        Var term = ad::hadamard(t, levels[i], planes[i]);
        acc = (i == 0) ? term : ad::add(t, acc, term);
    }
    return acc;
}

} // namespace a3fpn
