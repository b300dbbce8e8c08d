#pragma once

#include <map>
#include <string>
#include <vector>

#include "a3fpn/icatten.hpp"
#include "a3fpn/params.hpp"
#include "a3fpn/sampling.hpp"

namespace a3fpn {

// Lazily mounts named weight tensors onto a tape, one leaf per parameter, and
// remembers the binding so gradients can be fetched by name after backward.
template <typename T>
struct BasicParamBinder {
    BasicTape<T>& tape;
    const ModelWeights& weights;
    bool trainable = false;
    std::map<std::string, Var> bound;

    BasicParamBinder(BasicTape<T>& t, const ModelWeights& w, bool train = false)
        : tape(t), weights(w), trainable(train) {}

    Var operator()(const std::string& name) {
        auto it = bound.find(name);
        if (it != bound.end()) return it->second;
        Var v = tape.leaf(tensor_cast<T>(weights.at(name)), trainable);
        bound.emplace(name, v);
        return v;
    }
};

using ParamBinder = BasicParamBinder<float>;

// Binder over an explicit tensor map of the tape's own scalar type; used by the
// high-precision differencing path, which perturbs double copies of the weights.
template <typename T>
struct TensorMapBinder {
    BasicTape<T>& tape;
    const std::map<std::string, BasicTensor<T>>& tensors;
    std::map<std::string, Var> bound;

    TensorMapBinder(BasicTape<T>& t, const std::map<std::string, BasicTensor<T>>& m)
        : tape(t), tensors(m) {}

    Var operator()(const std::string& name) {
        auto it = bound.find(name);
        if (it != bound.end()) return it->second;
        auto found = tensors.find(name);
        if (found == tensors.end()) throw CheckpointError("missing parameter: " + name);
        Var v = tape.leaf(found->second, false);
        bound.emplace(name, v);
        return v;
    }
};

template <typename T>
void validate_pyramid_inputs(const PyramidConfig& cfg, const std::vector<BasicTensor<T>>& inputs) {
    if (inputs.size() != static_cast<std::size_t>(cfg.n_levels))
        throw UsageError("forward expects " + std::to_string(cfg.n_levels) + " input levels, got " +
                         std::to_string(inputs.size()));
    const BasicTensor<T>& base = inputs[0];
    if (base.rank() != 4) throw UsageError("level 1 input must be rank-4");
    const int div = 1 << (cfg.n_levels - 1);
    if (base.h() % div != 0 || base.w() % div != 0)
        throw UsageError("level 1 spatial extents must be divisible by 2^(n_levels-1)");
    for (int i = 1; i <= cfg.n_levels; ++i) {
        const BasicTensor<T>& x = inputs[static_cast<std::size_t>(i - 1)];
        const std::string lvl = "level " + std::to_string(i);
        if (x.rank() != 4) throw UsageError(lvl + ": input must be rank-4");
        if (x.n() != base.n()) throw UsageError(lvl + ": batch size mismatch");
        if (x.c() != cfg.channels[static_cast<std::size_t>(i - 1)])
            throw UsageError(lvl + ": expected " + std::to_string(cfg.channels[static_cast<std::size_t>(i - 1)]) +
                             " channels, got " + std::to_string(x.c()));
        const int scale = 1 << (i - 1);
        if (x.h() * scale != base.h() || x.w() * scale != base.w())
            throw UsageError(lvl + ": expected spatial size " + std::to_string(base.h() / scale) + "x" +
                             std::to_string(base.w() / scale) + ", got " + std::to_string(x.h()) + "x" +
                             std::to_string(x.w()));
    }
}

namespace detail {

template <typename Binder>
RepBlockVars bind_rep_block(Binder& bind, const std::string& base) {
    RepBlockVars blk;
    blk.expand_w = bind(base + "/expand/w");
    blk.expand_b = bind(base + "/expand/b");
    blk.core.w3 = bind(base + "/conv3/w");
    blk.core.b3 = bind(base + "/conv3/b");
    blk.core.w1 = bind(base + "/conv1/w");
    blk.core.b1 = bind(base + "/conv1/b");
    blk.core.identity = true;
    blk.reduce_w = bind(base + "/reduce/w");
    blk.reduce_b = bind(base + "/reduce/b");
    return blk;
}

} // namespace detail

// One whole forward pass over the column schedule (for each column, every
// reference level reads the previous column's outputs; levels above the column
// width pass through unchanged).
template <typename T, typename Binder>
std::vector<Var> pyramid_forward(BasicTape<T>& t, Binder& bind, const PyramidConfig& cfg,
                                 const std::vector<Var>& inputs) {
    {
        std::vector<BasicTensor<T>> vals;
        vals.reserve(inputs.size());
        for (Var v : inputs) vals.push_back(t.value(v));
        validate_pyramid_inputs(cfg, vals);
    }
    std::vector<Var> current = inputs;
    for (const ColumnPlan& plan : plan_columns(cfg)) {
        const int j = plan.column;
        const bool resampling = cfg.use_resampling[static_cast<std::size_t>(j - 1)];
        std::map<int, Var> work;
        for (int level : plan.ref_levels)
            work[level] = ad::conv2d(t, current[static_cast<std::size_t>(level - 1)],
                                     bind(keys::squeeze(j, level) + "/w"),
                                     bind(keys::squeeze(j, level) + "/b"), 1, 0, 1);
        std::map<int, Var> refined;
        for (const ColumnPlan::Reference& ref : plan.refs) {
            const int i = ref.level;
            const int target_h = t.value(work[i]).h();
            const int target_w = t.value(work[i]).w();
            // Coarse sampling toward the reference grid, kept in level order.
            std::vector<Var> coarse;
            std::vector<int> order;
            for (int k : plan.ref_levels) {
                if (k == i) {
                    coarse.push_back(work[i]);
                } else if (k > i) {
                    coarse.push_back(coarse_upsample(t, work[k], target_h, target_w,
                                                     bind(keys::sample(j, i, k) + "/w"),
                                                     bind(keys::sample(j, i, k) + "/b"),
                                                     cfg.interpolation));
                } else {
                    coarse.push_back(coarse_downsample(t, work[k], target_h, target_w,
                                                       bind(keys::sample(j, i, k) + "/w"),
                                                       bind(keys::sample(j, i, k) + "/b")));
                }
                order.push_back(k);
            }
            std::vector<Var> fused_inputs = coarse;
            if (resampling) {
                OffsetGeneratorVars gen;
                gen.dw_kernel = cfg.dwconv_kernel;
                gen.ctx_w = bind(keys::offsets_ctx(j, i) + "/w");
                gen.ctx_b = bind(keys::offsets_ctx(j, i) + "/b");
                for (int k : plan.ref_levels) {
                    if (k == i) continue;
                    const std::string br = keys::offsets_branch(j, i, k);
                    gen.branches.push_back(OffsetBranchVars{bind(br + "/dw/w"), bind(br + "/dw/b"),
                                                            bind(br + "/proj/w"), bind(br + "/proj/b")});
                }
                const int g = cfg.resample_groups[static_cast<std::size_t>(i - 1)];
                std::vector<OffsetField> fields =
                    generate_offsets(t, coarse, gen, g, cfg.resample_k, cfg.offset_scale);
                std::size_t field_idx = 0;
                for (std::size_t pos = 0; pos < order.size(); ++pos) {
                    const int k = order[pos];
                    if (k == i) continue;
                    const std::string rs = keys::resample(j, i, k);
                    ResamplerVars rv;
                    rv.wg = bind(rs + "/wg");
                    if (cfg.resampler_output_bias) rv.bias = bind(rs + "/bias");
                    if (cfg.norm_after_resampling == "ln") {
                        rv.ln_gamma = bind(rs + "/ln/gamma");
                        rv.ln_beta = bind(rs + "/ln/beta");
                    }
                    fused_inputs[pos] = resample(t, coarse[pos], fields[field_idx++], rv);
                }
            }
            ContextWeightVars cw;
            for (int k : plan.ref_levels)
                cw.squeeze.emplace_back(bind(keys::ctxw_squeeze(j, i, k) + "/w"),
                                        bind(keys::ctxw_squeeze(j, i, k) + "/b"));
            for (int rb = 1; rb <= cfg.rep_blocks; ++rb)
                cw.blocks.push_back(detail::bind_rep_block(bind, keys::ctxw_rep(j, i, rb)));
            cw.lower_proj_w = bind(keys::ctxw(j, i) + "/lower_proj/w");
            cw.lower_proj_b = bind(keys::ctxw(j, i) + "/lower_proj/b");
            cw.upper_w = bind(keys::ctxw(j, i) + "/upper/w");
            cw.upper_b = bind(keys::ctxw(j, i) + "/upper/b");
            Var weights = generate_context_weights(t, fused_inputs, cw);
            Var fused = fuse_levels(t, fused_inputs, weights);
            refined[i] = icatten_reassemble(t, fused, bind(keys::icatten(j, i) + "/gn/alpha"),
                                            bind(keys::icatten(j, i) + "/gn/beta"),
                                            cfg.gn_groups[static_cast<std::size_t>(i - 1)],
                                            cfg.icatten_threshold);
        }
        for (int level : plan.ref_levels)
            current[static_cast<std::size_t>(level - 1)] =
                ad::conv2d(t, refined[level], bind(keys::restore(j, level) + "/w"),
                           bind(keys::restore(j, level) + "/b"), 1, 0, 1);
    }
    return current;
}

// Convenience wrapper: plain tensors in, plain tensors out, no gradients.
template <typename T>
std::vector<BasicTensor<T>> pyramid_forward(const PyramidConfig& cfg, const ModelWeights& weights,
                                            const std::vector<BasicTensor<T>>& inputs) {
    BasicTape<T> t;
    t.recording = false;
    BasicParamBinder<T> bind(t, weights, false);
    std::vector<Var> in;
    in.reserve(inputs.size());
    for (const BasicTensor<T>& x : inputs) in.push_back(t.leaf(x, false));
    std::vector<Var> out = pyramid_forward(t, bind, cfg, in);
    std::vector<BasicTensor<T>> result;
    result.reserve(out.size());
    for (Var v : out) result.push_back(t.value(v));
    return result;
}

} // namespace a3fpn
