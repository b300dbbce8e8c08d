#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "a3fpn/fusion.hpp"
#include "a3fpn/plan.hpp"
#include "a3fpn/weights.hpp"

namespace a3fpn {

// Shared name scheme for parameters; enumeration and forward must agree.
namespace keys {

inline std::string col(int j) { return "col" + std::to_string(j); }
inline std::string squeeze(int j, int level) { return col(j) + "/squeeze" + std::to_string(level); }
inline std::string restore(int j, int level) { return col(j) + "/restore" + std::to_string(level); }
inline std::string ref(int j, int i) { return col(j) + "/lvl" + std::to_string(i); }
inline std::string sample(int j, int i, int k) { return ref(j, i) + "/sample" + std::to_string(k); }
inline std::string offsets_ctx(int j, int i) { return ref(j, i) + "/offsets/context"; }
inline std::string offsets_branch(int j, int i, int k) {
    return ref(j, i) + "/offsets/branch" + std::to_string(k);
}
inline std::string resample(int j, int i, int k) { return ref(j, i) + "/resample" + std::to_string(k); }
inline std::string ctxw(int j, int i) { return ref(j, i) + "/ctxw"; }
inline std::string ctxw_squeeze(int j, int i, int k) { return ctxw(j, i) + "/squeeze" + std::to_string(k); }
inline std::string ctxw_rep(int j, int i, int t) { return ctxw(j, i) + "/rep" + std::to_string(t); }
inline std::string icatten(int j, int i) { return ref(j, i) + "/icatten"; }

} // namespace keys

enum class ParamInit {
    kConvUniform, // uniform in +-sqrt(1/fan_in)
    kZeros,
    kOnes,
    kOffsetProjBias, // zeros, except every dm slot = 1
};

struct ParamSpec {
    std::string name;
    std::vector<int> shape;
    ParamInit init = ParamInit::kZeros;
    int fan_in = 1;
    int slots = 3; // stride of the dm pattern for kOffsetProjBias
};

// Walks every learnable parameter implied by the config, in a fixed structural
// order. This is the single source of truth for the checkpoint key set.
inline void for_each_param(const PyramidConfig& cfg, const std::function<void(const ParamSpec&)>& fn) {
    cfg.validate();
    auto conv = [&](const std::string& base, int cout, int cin_per_group, int k) {
        const int fan_in = cin_per_group * k * k;
        fn(ParamSpec{base + "/w", {cout, cin_per_group, k, k}, ParamInit::kConvUniform, fan_in});
        fn(ParamSpec{base + "/b", {cout}, ParamInit::kZeros});
    };
    const int kk = cfg.resample_k;
    for (const ColumnPlan& plan : plan_columns(cfg)) {
        const int j = plan.column;
        const bool resampling = cfg.use_resampling[static_cast<std::size_t>(j - 1)];
        for (int level : plan.ref_levels) {
            const int c = cfg.channels[static_cast<std::size_t>(level - 1)];
            const int wc = cfg.working_channels(level);
            conv(keys::squeeze(j, level), wc, c, 1);
            conv(keys::restore(j, level), c, wc, 1);
        }
        for (const ColumnPlan::Reference& ref : plan.refs) {
            const int i = ref.level;
            const int wc = cfg.working_channels(i);
            const int g = cfg.resample_groups[static_cast<std::size_t>(i - 1)];
            for (const ColumnPlan::Source& src : ref.sources) {
                const int src_wc = cfg.working_channels(src.level);
                const int kern = src.is_up ? 1 : (1 << src.gap) + 1;
                conv(keys::sample(j, i, src.level), wc, src_wc, kern);
            }
            if (resampling) {
                conv(keys::offsets_ctx(j, i), (plan.width - 1) * wc, plan.width * wc, 1);
                for (const ColumnPlan::Source& src : ref.sources) {
                    const std::string br = keys::offsets_branch(j, i, src.level);
                    fn(ParamSpec{br + "/dw/w", {wc, 1, cfg.dwconv_kernel, cfg.dwconv_kernel},
                                 ParamInit::kConvUniform, cfg.dwconv_kernel * cfg.dwconv_kernel});
                    fn(ParamSpec{br + "/dw/b", {wc}, ParamInit::kZeros});
                    fn(ParamSpec{br + "/proj/w", {g * kk * kk * 3, wc, 1, 1}, ParamInit::kZeros});
                    fn(ParamSpec{br + "/proj/b", {g * kk * kk * 3}, ParamInit::kOffsetProjBias});
                    const std::string rs = keys::resample(j, i, src.level);
                    fn(ParamSpec{rs + "/wg", {wc}, ParamInit::kConvUniform, kk * kk});
                    if (cfg.resampler_output_bias) fn(ParamSpec{rs + "/bias", {wc}, ParamInit::kZeros});
                    if (cfg.norm_after_resampling == "ln") {
                        fn(ParamSpec{rs + "/ln/gamma", {wc}, ParamInit::kOnes});
                        fn(ParamSpec{rs + "/ln/beta", {wc}, ParamInit::kZeros});
                    }
                }
            }
            const int cc = cfg.compress_channels[static_cast<std::size_t>(i - 1)];
            for (int k : plan.ref_levels) conv(keys::ctxw_squeeze(j, i, k), cc, wc, 1);
            const int cat = plan.width * cc;
            const int hidden = rep_hidden_width(cat, cfg.expansion);
            for (int t = 1; t <= cfg.rep_blocks; ++t) {
                const std::string rb = keys::ctxw_rep(j, i, t);
                conv(rb + "/expand", hidden, cat, 1);
                conv(rb + "/conv3", hidden, hidden, 3);
                conv(rb + "/conv1", hidden, hidden, 1);
                conv(rb + "/reduce", cat, hidden, 1);
            }
            conv(keys::ctxw(j, i) + "/lower_proj", plan.width, cat, 1);
            conv(keys::ctxw(j, i) + "/upper", plan.width, cat, 1);
            fn(ParamSpec{keys::icatten(j, i) + "/gn/alpha", {wc}, ParamInit::kOnes});
            fn(ParamSpec{keys::icatten(j, i) + "/gn/beta", {wc}, ParamInit::kZeros});
        }
    }
}

inline std::vector<ParamSpec> param_specs(const PyramidConfig& cfg) {
    std::vector<ParamSpec> out;
    for_each_param(cfg, [&](const ParamSpec& p) { out.push_back(p); });
    return out;
}

// Deterministic initialization: convs uniform in +-sqrt(1/fan_in), offset
// projections zero with dm bias 1, norm scales 1 / shifts 0.
inline ModelWeights seeded_init(const PyramidConfig& cfg, std::uint64_t seed) {
    ModelWeights w;
    Rng rng(seed);
    for_each_param(cfg, [&](const ParamSpec& p) {
        Tensor t(p.shape);
        switch (p.init) {
            case ParamInit::kConvUniform: {
                const float bound = std::sqrt(1.0f / static_cast<float>(p.fan_in));
                for (float& v : t.data) v = rng.uniform(-bound, bound);
                break;
            }
            case ParamInit::kZeros:
                break;
            case ParamInit::kOnes:
                for (float& v : t.data) v = 1.0f;
                break;
            case ParamInit::kOffsetProjBias:
                for (std::int64_t i = 0; i < t.numel(); ++i)
                    if (i % p.slots == p.slots - 1) t[i] = 1.0f;
                break;
        }
        w.tensors.emplace(p.name, std::move(t));
    });
    return w;
}

// Key/shape compatibility check; reports every offending key by name.
inline void validate_weights(const PyramidConfig& cfg, const ModelWeights& w) {
    std::map<std::string, std::vector<int>> expected;
    for_each_param(cfg, [&](const ParamSpec& p) { expected.emplace(p.name, p.shape); });
    std::string missing, extra, bad_shape;
    for (const auto& [name, shape] : expected) {
        auto it = w.tensors.find(name);
        if (it == w.tensors.end())
            missing += (missing.empty() ? "" : ", ") + name;
        else if (it->second.shape != shape)
            bad_shape += (bad_shape.empty() ? "" : ", ") + name;
    }
    for (const auto& [name, tensor] : w.tensors)
        if (!expected.count(name)) extra += (extra.empty() ? "" : ", ") + name;
    if (missing.empty() && extra.empty() && bad_shape.empty()) return;
    std::string msg = "incompatible checkpoint for this config:";
    if (!missing.empty()) msg += " missing keys [" + missing + "]";
    if (!extra.empty()) msg += " extra keys [" + extra + "]";
    if (!bad_shape.empty()) msg += " wrong shapes [" + bad_shape + "]";
    throw CheckpointError(msg);
}

inline ModelWeights load_weights(const std::string& path, const PyramidConfig& cfg) {
    ModelWeights w = load_weights(path);
    validate_weights(cfg, w);
    return w;
}

} // namespace a3fpn
