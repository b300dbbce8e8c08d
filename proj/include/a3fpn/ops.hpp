#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "a3fpn/common.hpp"
#include "a3fpn/tensor.hpp"

namespace a3fpn {

// Convolution parameters. weights is (C_out, C_in/groups, k_h, k_w); bias is an
// optional rank-1 (C_out) tensor (empty shape = no bias).
template <typename T>
struct BasicConvParams {
    BasicTensor<T> weights;
    BasicTensor<T> bias;
    int stride = 1;
    int padding = 0;
    int groups = 1;

    bool has_bias() const { return !bias.shape.empty(); }
    int out_channels() const { return weights.dim(0); }
    int in_channels() const { return weights.dim(1) * groups; }
    int kh() const { return weights.dim(2); }
    int kw() const { return weights.dim(3); }

    void validate() const {
        if (weights.rank() != 4) throw ConfigError("conv weights must be rank 4");
        if (stride < 1) throw ConfigError("conv stride must be positive");
        if (padding < 0) throw ConfigError("conv padding must be non-negative");
        if (groups < 1) throw ConfigError("conv groups must be positive");
        if (out_channels() % groups != 0)
            throw ConfigError("conv C_out not divisible by groups");
        if (has_bias() && (bias.rank() != 1 || bias.dim(0) != out_channels()))
            throw ConfigError("conv bias length must equal C_out");
    }
};

using ConvParams = BasicConvParams<float>;

namespace ops {

// ---- elementwise ------------------------------------------------------------

constexpr double kGeluA = 0.7978845608; // sqrt(2/pi), pinned
constexpr double kGeluB = 0.044715;

template <typename T>
T sigmoid_scalar(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
T gelu_scalar(T x) {
    const T t = std::tanh(T(kGeluA) * (x + T(kGeluB) * x * x * x));
    return T(0.5) * x * (T(1) + t);
}

template <typename T>
T gelu_grad_scalar(T x) {
    const T u = T(kGeluA) * (x + T(kGeluB) * x * x * x);
    const T t = std::tanh(u);
    const T du = T(kGeluA) * (T(1) + T(3) * T(kGeluB) * x * x);
    return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
    BasicTensor<T> out(x.shape);
    parallel_for(x.numel(), [&](std::int64_t i) { out[i] = sigmoid_scalar(x[i]); });
    return out;
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
    BasicTensor<T> out(x.shape);
    parallel_for(x.numel(), [&](std::int64_t i) { out[i] = gelu_scalar(x[i]); });
    return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (!a.same_shape(b))
        throw ConfigError("add: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    BasicTensor<T> out(a.shape);
    parallel_for(a.numel(), [&](std::int64_t i) { out[i] = a[i] + b[i]; });
    return out;
}

template <typename T>
BasicTensor<T> reciprocal(const BasicTensor<T>& x) {
    BasicTensor<T> out(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = T(1) / x[i];
    return out;
}

template <typename T>
BasicTensor<T> sum_all(const BasicTensor<T>& x) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < x.numel(); ++i) acc += x[i];
    BasicTensor<T> out({1});
    out[0] = static_cast<T>(acc);
    return out;
}

// where(x > th) -> 1, else keep x. Equality keeps x.
template <typename T>
BasicTensor<T> clamp_to_one_above(const BasicTensor<T>& x, T threshold) {
    BasicTensor<T> out(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] > threshold ? T(1) : x[i];
    return out;
}

// where(x < th) -> 0, else keep x. Equality keeps x.
template <typename T>
BasicTensor<T> clamp_to_zero_below(const BasicTensor<T>& x, T threshold) {
    BasicTensor<T> out(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] < threshold ? T(0) : x[i];
    return out;
}

// ---- broadcasting hadamard ---------------------------------------------------
// Same-rank operands; every dimension pair must be equal or contain a 1.
// Output extent is the max of the pair.

namespace detail {

struct BcastPlan {
    std::vector<int> out_shape;
    int dims[4];
    std::int64_t sa[4]; // strides into a (0 on broadcast axes)
    std::int64_t sb[4];
};

template <typename T>
BcastPlan broadcast_plan(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() != b.rank())
        throw ConfigError("hadamard: rank mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    const int r = a.rank();
    BcastPlan p;
    p.out_shape.resize(static_cast<std::size_t>(r));
    int pa[4] = {1, 1, 1, 1}, pb[4] = {1, 1, 1, 1};
    for (int i = 0; i < r; ++i) {
        pa[4 - r + i] = a.dim(i);
        pb[4 - r + i] = b.dim(i);
    }
    for (int i = 0; i < 4; ++i) {
        if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1)
            throw ConfigError("hadamard: incompatible shapes " + shape_str(a.shape) + " vs " +
                              shape_str(b.shape));
        p.dims[i] = std::max(pa[i], pb[i]);
    }
    std::int64_t stra = 1, strb = 1;
    for (int i = 3; i >= 0; --i) {
        p.sa[i] = (pa[i] == 1) ? 0 : stra;
        p.sb[i] = (pb[i] == 1) ? 0 : strb;
        stra *= pa[i];
        strb *= pb[i];
    }
    for (int i = 0; i < r; ++i) p.out_shape[static_cast<std::size_t>(i)] = p.dims[4 - r + i];
    return p;
}

} // namespace detail

template <typename T>
BasicTensor<T> hadamard(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const auto p = detail::broadcast_plan(a, b);
    BasicTensor<T> out(p.out_shape);
    std::int64_t o = 0;
    for (int i0 = 0; i0 < p.dims[0]; ++i0)
        for (int i1 = 0; i1 < p.dims[1]; ++i1)
            for (int i2 = 0; i2 < p.dims[2]; ++i2)
                for (int i3 = 0; i3 < p.dims[3]; ++i3) {
                    const std::int64_t ia = i0 * p.sa[0] + i1 * p.sa[1] + i2 * p.sa[2] + i3 * p.sa[3];
                    const std::int64_t ib = i0 * p.sb[0] + i1 * p.sb[1] + i2 * p.sb[2] + i3 * p.sb[3];
                    out[o++] = a[ia] * b[ib];
                }
    return out;
}

// grad of hadamard w.r.t. `a`: gout * b reduced onto a's shape.
template <typename T>
BasicTensor<T> hadamard_backward_lhs(const BasicTensor<T>& a, const BasicTensor<T>& b,
                                     const BasicTensor<T>& gout) {
    const auto p = detail::broadcast_plan(a, b);
    std::vector<double> acc(static_cast<std::size_t>(a.numel()), 0.0);
    std::int64_t o = 0;
    for (int i0 = 0; i0 < p.dims[0]; ++i0)
        for (int i1 = 0; i1 < p.dims[1]; ++i1)
            for (int i2 = 0; i2 < p.dims[2]; ++i2)
                for (int i3 = 0; i3 < p.dims[3]; ++i3) {
                    const std::int64_t ia = i0 * p.sa[0] + i1 * p.sa[1] + i2 * p.sa[2] + i3 * p.sa[3];
                    const std::int64_t ib = i0 * p.sb[0] + i1 * p.sb[1] + i2 * p.sb[2] + i3 * p.sb[3];
                    acc[static_cast<std::size_t>(ia)] += static_cast<double>(gout[o++]) * b[ib];
                }
    BasicTensor<T> da(a.shape);
    for (std::int64_t i = 0; i < a.numel(); ++i) da[i] = static_cast<T>(acc[static_cast<std::size_t>(i)]);
    return da;
}

// ---- channel utilities -------------------------------------------------------

template <typename T>
BasicTensor<T> concat_channels(const std::vector<const BasicTensor<T>*>& xs) {
    if (xs.empty()) throw UsageError("concat_channels: empty input list");
    const BasicTensor<T>& first = *xs[0];
    if (first.rank() != 4) throw ConfigError("concat_channels expects rank-4 tensors");
    int ctot = 0;
    for (const BasicTensor<T>* t : xs) {
        if (t->rank() != 4 || t->n() != first.n() || t->h() != first.h() || t->w() != first.w())
            throw ConfigError("concat_channels: inconsistent shapes");
        ctot += t->c();
    }
    BasicTensor<T> out({first.n(), ctot, first.h(), first.w()});
    const std::int64_t hw = static_cast<std::int64_t>(first.h()) * first.w();
    for (int in = 0; in < first.n(); ++in) {
        std::int64_t off = 0;
        for (const BasicTensor<T>* t : xs) {
            const std::int64_t block = static_cast<std::int64_t>(t->c()) * hw;
            std::copy_n(t->data.data() + in * block, block,
                        out.data.data() + (static_cast<std::int64_t>(in) * ctot) * hw + off);
            off += block;
        }
    }
    return out;
}

template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& x, const std::vector<int>& sizes) {
    if (x.rank() != 4) throw ConfigError("split_channels expects a rank-4 tensor");
    int total = 0;
    for (int s : sizes) {
        if (s < 1) throw ConfigError("split_channels: sizes must be >= 1");
        total += s;
    }
    if (total != x.c()) throw ConfigError("split_channels: sizes do not sum to channel count");
    std::vector<BasicTensor<T>> parts;
    parts.reserve(sizes.size());
    const std::int64_t hw = static_cast<std::int64_t>(x.h()) * x.w();
    int c0 = 0;
    for (int s : sizes) {
        BasicTensor<T> part({x.n(), s, x.h(), x.w()});
        for (int in = 0; in < x.n(); ++in)
            std::copy_n(x.data.data() + (static_cast<std::int64_t>(in) * x.c() + c0) * hw, s * hw,
                        part.data.data() + static_cast<std::int64_t>(in) * s * hw);
        parts.push_back(std::move(part));
        c0 += s;
    }
    return parts;
}

template <typename T>
BasicTensor<T> reverse_channels(const BasicTensor<T>& x) {
    if (x.rank() != 4) throw ConfigError("reverse_channels expects a rank-4 tensor");
    BasicTensor<T> out(x.shape);
    const std::int64_t hw = static_cast<std::int64_t>(x.h()) * x.w();
    for (int in = 0; in < x.n(); ++in)
        for (int ic = 0; ic < x.c(); ++ic)
            std::copy_n(x.data.data() + (static_cast<std::int64_t>(in) * x.c() + ic) * hw, hw,
                        out.data.data() + (static_cast<std::int64_t>(in) * x.c() + (x.c() - 1 - ic)) * hw);
    return out;
}

// out[n,c,y,x] = x[n,c,y,x] * v[c]
template <typename T>
BasicTensor<T> channel_scale(const BasicTensor<T>& x, const BasicTensor<T>& v) {
    if (x.rank() != 4 || v.rank() != 1 || v.dim(0) != x.c())
        throw ConfigError("channel_scale: v must be rank-1 of length C");
    BasicTensor<T> out(x.shape);
    const std::int64_t hw = static_cast<std::int64_t>(x.h()) * x.w();
    parallel_for(static_cast<std::int64_t>(x.n()) * x.c(), [&](std::int64_t nc) {
        const T s = v[nc % x.c()];
        const std::int64_t base = nc * hw;
        for (std::int64_t i = 0; i < hw; ++i) out[base + i] = x[base + i] * s;
    });
    return out;
}

template <typename T>
void channel_scale_backward(const BasicTensor<T>& x, const BasicTensor<T>& v,
                            const BasicTensor<T>& gout, BasicTensor<T>* dx, BasicTensor<T>* dv) {
    const std::int64_t hw = static_cast<std::int64_t>(x.h()) * x.w();
    if (dx) {
        *dx = BasicTensor<T>(x.shape);
        for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(x.n()) * x.c(); ++nc) {
            const T s = v[nc % x.c()];
            for (std::int64_t i = 0; i < hw; ++i) (*dx)[nc * hw + i] = gout[nc * hw + i] * s;
        }
    }
    if (dv) {
        std::vector<double> acc(static_cast<std::size_t>(x.c()), 0.0);
        for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(x.n()) * x.c(); ++nc)
            for (std::int64_t i = 0; i < hw; ++i)
                acc[static_cast<std::size_t>(nc % x.c())] +=
                    static_cast<double>(gout[nc * hw + i]) * x[nc * hw + i];
        *dv = BasicTensor<T>(v.shape);
        for (int ic = 0; ic < x.c(); ++ic) (*dv)[ic] = static_cast<T>(acc[static_cast<std::size_t>(ic)]);
    }
}

// ---- convolution ------------------------------------------------------------

template <typename T>
void conv_out_shape(const BasicTensor<T>& x, const BasicConvParams<T>& p, int* oh, int* ow) {
    *oh = (x.h() + 2 * p.padding - p.kh()) / p.stride + 1;
    *ow = (x.w() + 2 * p.padding - p.kw()) / p.stride + 1;
    if (x.h() + 2 * p.padding < p.kh() || x.w() + 2 * p.padding < p.kw() || *oh < 1 || *ow < 1)
        throw ConfigError("conv2d: kernel larger than padded input");
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicConvParams<T>& p) {
    p.validate();
    if (x.rank() != 4) throw ConfigError("conv2d expects a rank-4 input");
    if (x.c() != p.in_channels())
        throw ConfigError("conv2d: input has " + std::to_string(x.c()) + " channels, params expect " +
                          std::to_string(p.in_channels()));
    int oh = 0, ow = 0;
    conv_out_shape(x, p, &oh, &ow);
    const int cin_g = p.weights.dim(1);
    const int cout_g = p.out_channels() / p.groups;
    BasicTensor<T> out({x.n(), p.out_channels(), oh, ow});
    parallel_for(static_cast<std::int64_t>(x.n()) * p.out_channels(), [&](std::int64_t nco) {
        const int in = static_cast<int>(nco / p.out_channels());
        const int co = static_cast<int>(nco % p.out_channels());
        const int g = co / cout_g;
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = p.has_bias() ? static_cast<double>(p.bias[co]) : 0.0;
                for (int ci = 0; ci < cin_g; ++ci) {
                    const int cin = g * cin_g + ci;
                    for (int ky = 0; ky < p.kh(); ++ky) {
                        const int iy = oy * p.stride - p.padding + ky;
                        if (iy < 0 || iy >= x.h()) continue;
                        for (int kx = 0; kx < p.kw(); ++kx) {
                            const int ix = ox * p.stride - p.padding + kx;
                            if (ix < 0 || ix >= x.w()) continue;
                            acc += static_cast<double>(x.at(in, cin, iy, ix)) * p.weights.at(co, ci, ky, kx);
                        }
                    }
                }
                out.at(in, co, oy, ox) = static_cast<T>(acc);
            }
    });
    return out;
}

template <typename T>
BasicTensor<T> depthwise_conv2d(const BasicTensor<T>& x, const BasicConvParams<T>& p) {
    if (p.groups != p.in_channels() || p.groups != p.out_channels())
        throw ConfigError("depthwise_conv2d requires groups == C_in == C_out");
    return conv2d(x, p);
}

template <typename T>
void conv2d_backward(const BasicTensor<T>& x, const BasicConvParams<T>& p, const BasicTensor<T>& gout,
                     BasicTensor<T>* dx, BasicTensor<T>* dw, BasicTensor<T>* db) {
    const int cin_g = p.weights.dim(1);
    const int cout_g = p.out_channels() / p.groups;
    std::vector<double> ax, aw, ab;
    if (dx) ax.assign(static_cast<std::size_t>(x.numel()), 0.0);
    if (dw) aw.assign(static_cast<std::size_t>(p.weights.numel()), 0.0);
    if (db) ab.assign(static_cast<std::size_t>(p.out_channels()), 0.0);
    for (int in = 0; in < x.n(); ++in)
        for (int co = 0; co < p.out_channels(); ++co) {
            const int g = co / cout_g;
            for (int oy = 0; oy < gout.h(); ++oy)
                for (int ox = 0; ox < gout.w(); ++ox) {
                    const double gv = gout.at(in, co, oy, ox);
                    if (db) ab[static_cast<std::size_t>(co)] += gv;
                    if (!dx && !dw) continue;
                    for (int ci = 0; ci < cin_g; ++ci) {
                        const int cin = g * cin_g + ci;
                        for (int ky = 0; ky < p.kh(); ++ky) {
                            const int iy = oy * p.stride - p.padding + ky;
                            if (iy < 0 || iy >= x.h()) continue;
                            for (int kx = 0; kx < p.kw(); ++kx) {
                                const int ix = ox * p.stride - p.padding + kx;
                                if (ix < 0 || ix >= x.w()) continue;
                                if (dx)
                                    ax[static_cast<std::size_t>(x.index(in, cin, iy, ix))] +=
                                        gv * p.weights.at(co, ci, ky, kx);
                                if (dw)
                                    aw[static_cast<std::size_t>(p.weights.index(co, ci, ky, kx))] +=
                                        gv * x.at(in, cin, iy, ix);
                            }
                        }
                    }
                }
        }
    if (dx) {
        *dx = BasicTensor<T>(x.shape);
        for (std::int64_t i = 0; i < x.numel(); ++i) (*dx)[i] = static_cast<T>(ax[static_cast<std::size_t>(i)]);
    }
    if (dw) {
        *dw = BasicTensor<T>(p.weights.shape);
        for (std::int64_t i = 0; i < p.weights.numel(); ++i)
            (*dw)[i] = static_cast<T>(aw[static_cast<std::size_t>(i)]);
    }
    if (db) {
        *db = BasicTensor<T>({p.out_channels()});
        for (int co = 0; co < p.out_channels(); ++co)
            (*db)[co] = static_cast<T>(ab[static_cast<std::size_t>(co)]);
    }
}

// ---- resize -------------------------------------------------------------------

enum class Interp { kBilinear, kNearest };

// Half-pixel alignment: src = (dst + 0.5) * scale - 0.5, borders clamped.
template <typename T>
BasicTensor<T> resize(const BasicTensor<T>& x, int out_h, int out_w, Interp mode = Interp::kBilinear) {
    if (x.rank() != 4) throw ConfigError("resize expects a rank-4 input");
    if (out_h < 1 || out_w < 1) throw ConfigError("resize: target extents must be >= 1");
    BasicTensor<T> out({x.n(), x.c(), out_h, out_w});
    const double sy = static_cast<double>(x.h()) / out_h;
    const double sx = static_cast<double>(x.w()) / out_w;
    parallel_for(static_cast<std::int64_t>(x.n()) * x.c(), [&](std::int64_t nc) {
        const int in = static_cast<int>(nc / x.c());
        const int ic = static_cast<int>(nc % x.c());
        for (int oy = 0; oy < out_h; ++oy)
            for (int ox = 0; ox < out_w; ++ox) {
                if (mode == Interp::kNearest) {
                    const int iy = std::clamp(static_cast<int>(std::floor((oy + 0.5) * sy)), 0, x.h() - 1);
                    const int ix = std::clamp(static_cast<int>(std::floor((ox + 0.5) * sx)), 0, x.w() - 1);
                    out.at(in, ic, oy, ox) = x.at(in, ic, iy, ix);
                    continue;
                }
                const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(x.h() - 1));
                const double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(x.w() - 1));
                const int y0 = static_cast<int>(std::floor(fy));
                const int x0 = static_cast<int>(std::floor(fx));
                const int y1 = std::min(y0 + 1, x.h() - 1);
                const int x1 = std::min(x0 + 1, x.w() - 1);
                const double wy = fy - y0, wx = fx - x0;
                const double v = (1.0 - wy) * ((1.0 - wx) * x.at(in, ic, y0, x0) + wx * x.at(in, ic, y0, x1)) +
                                 wy * ((1.0 - wx) * x.at(in, ic, y1, x0) + wx * x.at(in, ic, y1, x1));
                out.at(in, ic, oy, ox) = static_cast<T>(v);
            }
    });
    return out;
}

template <typename T>
BasicTensor<T> resize_backward(const BasicTensor<T>& x, int out_h, int out_w, Interp mode,
                               const BasicTensor<T>& gout) {
    std::vector<double> acc(static_cast<std::size_t>(x.numel()), 0.0);
    const double sy = static_cast<double>(x.h()) / out_h;
    const double sx = static_cast<double>(x.w()) / out_w;
    for (int in = 0; in < x.n(); ++in)
        for (int ic = 0; ic < x.c(); ++ic)
            for (int oy = 0; oy < out_h; ++oy)
                for (int ox = 0; ox < out_w; ++ox) {
                    const double gv = gout.at(in, ic, oy, ox);
                    if (mode == Interp::kNearest) {
                        const int iy = std::clamp(static_cast<int>(std::floor((oy + 0.5) * sy)), 0, x.h() - 1);
                        const int ix = std::clamp(static_cast<int>(std::floor((ox + 0.5) * sx)), 0, x.w() - 1);
                        acc[static_cast<std::size_t>(x.index(in, ic, iy, ix))] += gv;
                        continue;
                    }
                    const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(x.h() - 1));
                    const double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(x.w() - 1));
                    const int y0 = static_cast<int>(std::floor(fy));
                    const int x0 = static_cast<int>(std::floor(fx));
                    const int y1 = std::min(y0 + 1, x.h() - 1);
                    const int x1 = std::min(x0 + 1, x.w() - 1);
                    const double wy = fy - y0, wx = fx - x0;
                    acc[static_cast<std::size_t>(x.index(in, ic, y0, x0))] += gv * (1.0 - wy) * (1.0 - wx);
                    acc[static_cast<std::size_t>(x.index(in, ic, y0, x1))] += gv * (1.0 - wy) * wx;
                    acc[static_cast<std::size_t>(x.index(in, ic, y1, x0))] += gv * wy * (1.0 - wx);
                    acc[static_cast<std::size_t>(x.index(in, ic, y1, x1))] += gv * wy * wx;
                }
    BasicTensor<T> dx(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) dx[i] = static_cast<T>(acc[static_cast<std::size_t>(i)]);
    return dx;
}

// ---- fractional sampling ------------------------------------------------------
// coords is (N, 2, H_out, W_out): channel 0 = y, channel 1 = x, in pixels of the
// source map. Neighbors outside the map contribute zero.

namespace detail {

struct BilinTaps {
    int y0, x0;
    double wy, wx;
};

template <typename T>
double sample_value(const BasicTensor<T>& x, int in, int ic, const BilinTaps& t) {
    auto pick = [&](int yy, int xx) -> double {
        if (yy < 0 || yy >= x.h() || xx < 0 || xx >= x.w()) return 0.0;
        return x.at(in, ic, yy, xx);
    };
    return (1.0 - t.wy) * ((1.0 - t.wx) * pick(t.y0, t.x0) + t.wx * pick(t.y0, t.x0 + 1)) +
           t.wy * ((1.0 - t.wx) * pick(t.y0 + 1, t.x0) + t.wx * pick(t.y0 + 1, t.x0 + 1));
}

} // namespace detail

template <typename T>
BasicTensor<T> bilinear_sample(const BasicTensor<T>& x, const BasicTensor<T>& coords) {
    if (x.rank() != 4 || coords.rank() != 4 || coords.c() != 2 || coords.n() != x.n())
        throw ConfigError("bilinear_sample: coords must be (N,2,H,W) matching the input batch");
    if (!coords.all_finite()) throw ComputeError("bilinear_sample: non-finite coordinate");
    BasicTensor<T> out({x.n(), x.c(), coords.h(), coords.w()});
    parallel_for(static_cast<std::int64_t>(x.n()) * x.c(), [&](std::int64_t nc) {
        const int in = static_cast<int>(nc / x.c());
        const int ic = static_cast<int>(nc % x.c());
        for (int oy = 0; oy < coords.h(); ++oy)
            for (int ox = 0; ox < coords.w(); ++ox) {
                const double py = coords.at(in, 0, oy, ox);
                const double px = coords.at(in, 1, oy, ox);
                detail::BilinTaps t;
                t.y0 = static_cast<int>(std::floor(py));
                t.x0 = static_cast<int>(std::floor(px));
                t.wy = py - t.y0;
                t.wx = px - t.x0;
                out.at(in, ic, oy, ox) = static_cast<T>(detail::sample_value(x, in, ic, t));
            }
    });
    return out;
}

template <typename T>
void bilinear_sample_backward(const BasicTensor<T>& x, const BasicTensor<T>& coords,
                              const BasicTensor<T>& gout, BasicTensor<T>* dx, BasicTensor<T>* dcoords) {
    std::vector<double> ax, ac;
    if (dx) ax.assign(static_cast<std::size_t>(x.numel()), 0.0);
    if (dcoords) ac.assign(static_cast<std::size_t>(coords.numel()), 0.0);
    for (int in = 0; in < x.n(); ++in)
        for (int oy = 0; oy < coords.h(); ++oy)
            for (int ox = 0; ox < coords.w(); ++ox) {
                const double py = coords.at(in, 0, oy, ox);
                const double px = coords.at(in, 1, oy, ox);
                const int y0 = static_cast<int>(std::floor(py));
                const int x0 = static_cast<int>(std::floor(px));
                const double wy = py - y0, wx = px - x0;
                auto valid = [&](int yy, int xx) { return yy >= 0 && yy < x.h() && xx >= 0 && xx < x.w(); };
                for (int ic = 0; ic < x.c(); ++ic) {
                    const double gv = gout.at(in, ic, oy, ox);
                    auto pick = [&](int yy, int xx) -> double {
                        return valid(yy, xx) ? x.at(in, ic, yy, xx) : 0.0;
                    };
                    if (dx) {
                        auto put = [&](int yy, int xx, double w) {
                            if (valid(yy, xx)) ax[static_cast<std::size_t>(x.index(in, ic, yy, xx))] += gv * w;
                        };
                        put(y0, x0, (1.0 - wy) * (1.0 - wx));
                        put(y0, x0 + 1, (1.0 - wy) * wx);
                        put(y0 + 1, x0, wy * (1.0 - wx));
                        put(y0 + 1, x0 + 1, wy * wx);
                    }
                    if (dcoords) {
                        const double v00 = pick(y0, x0), v01 = pick(y0, x0 + 1);
                        const double v10 = pick(y0 + 1, x0), v11 = pick(y0 + 1, x0 + 1);
                        ac[static_cast<std::size_t>(coords.index(in, 0, oy, ox))] +=
                            gv * ((1.0 - wx) * (v10 - v00) + wx * (v11 - v01));
                        ac[static_cast<std::size_t>(coords.index(in, 1, oy, ox))] +=
                            gv * ((1.0 - wy) * (v01 - v00) + wy * (v11 - v10));
                    }
                }
            }
    if (dx) {
        *dx = BasicTensor<T>(x.shape);
        for (std::int64_t i = 0; i < x.numel(); ++i) (*dx)[i] = static_cast<T>(ax[static_cast<std::size_t>(i)]);
    }
    if (dcoords) {
        *dcoords = BasicTensor<T>(coords.shape);
        for (std::int64_t i = 0; i < coords.numel(); ++i)
            (*dcoords)[i] = static_cast<T>(ac[static_cast<std::size_t>(i)]);
    }
}

// ---- normalization -------------------------------------------------------------

constexpr float kNormEps = 1e-5f;

struct NormStats {
    std::vector<double> mean;
    std::vector<double> invstd;
};

// Per-sample, per-group standardization over (C/groups, H, W), then alpha*xhat+beta.
template <typename T>
BasicTensor<T> group_norm(const BasicTensor<T>& x, int groups, const BasicTensor<T>& alpha,
                          const BasicTensor<T>& beta, float eps = kNormEps, NormStats* stats = nullptr) {
    if (x.rank() != 4) throw ConfigError("group_norm expects a rank-4 input");
    if (groups < 1 || x.c() % groups != 0)
        throw ConfigError("group_norm: channel count not divisible by groups");
    if (alpha.rank() != 1 || alpha.dim(0) != x.c() || beta.rank() != 1 || beta.dim(0) != x.c())
        throw ConfigError("group_norm: alpha/beta must be rank-1 of length C");
    const int cg = x.c() / groups;
    const std::int64_t m = static_cast<std::int64_t>(cg) * x.h() * x.w();
    BasicTensor<T> out(x.shape);
    NormStats local;
    NormStats& st = stats ? *stats : local;
    st.mean.assign(static_cast<std::size_t>(x.n()) * groups, 0.0);
    st.invstd.assign(static_cast<std::size_t>(x.n()) * groups, 0.0);
    for (int in = 0; in < x.n(); ++in)
        for (int g = 0; g < groups; ++g) {
            double sum = 0.0, sq = 0.0;
            for (int ci = 0; ci < cg; ++ci) {
                const int ic = g * cg + ci;
                for (int iy = 0; iy < x.h(); ++iy)
                    for (int ix = 0; ix < x.w(); ++ix) {
                        const double v = x.at(in, ic, iy, ix);
                        sum += v;
                        sq += v * v;
                    }
            }
            const double mean = sum / static_cast<double>(m);
            const double var = std::max(0.0, sq / static_cast<double>(m) - mean * mean);
            const double inv = 1.0 / std::sqrt(var + eps);
            st.mean[static_cast<std::size_t>(in) * groups + g] = mean;
            st.invstd[static_cast<std::size_t>(in) * groups + g] = inv;
            for (int ci = 0; ci < cg; ++ci) {
                const int ic = g * cg + ci;
                for (int iy = 0; iy < x.h(); ++iy)
                    for (int ix = 0; ix < x.w(); ++ix)
                        out.at(in, ic, iy, ix) = static_cast<T>(
                            alpha[ic] * (x.at(in, ic, iy, ix) - mean) * inv + beta[ic]);
            }
        }
    return out;
}

template <typename T>
void group_norm_backward(const BasicTensor<T>& x, int groups, const BasicTensor<T>& alpha,
                         const NormStats& st, const BasicTensor<T>& gout, BasicTensor<T>* dx,
                         BasicTensor<T>* dalpha, BasicTensor<T>* dbeta) {
    const int cg = x.c() / groups;
    const std::int64_t m = static_cast<std::int64_t>(cg) * x.h() * x.w();
    std::vector<double> aa, ab;
    if (dalpha) aa.assign(static_cast<std::size_t>(x.c()), 0.0);
    if (dbeta) ab.assign(static_cast<std::size_t>(x.c()), 0.0);
    if (dx) *dx = BasicTensor<T>(x.shape);
    for (int in = 0; in < x.n(); ++in)
        for (int g = 0; g < groups; ++g) {
            const double mean = st.mean[static_cast<std::size_t>(in) * groups + g];
            const double inv = st.invstd[static_cast<std::size_t>(in) * groups + g];
            double s1 = 0.0, s2 = 0.0; // mean(dxhat), mean(dxhat*xhat)
            for (int ci = 0; ci < cg; ++ci) {
                const int ic = g * cg + ci;
                for (int iy = 0; iy < x.h(); ++iy)
                    for (int ix = 0; ix < x.w(); ++ix) {
                        const double xh = (x.at(in, ic, iy, ix) - mean) * inv;
                        const double go = gout.at(in, ic, iy, ix);
                        const double dxh = go * alpha[ic];
                        s1 += dxh;
                        s2 += dxh * xh;
                        if (dalpha) aa[static_cast<std::size_t>(ic)] += go * xh;
                        if (dbeta) ab[static_cast<std::size_t>(ic)] += go;
                    }
            }
            if (!dx) continue;
            s1 /= static_cast<double>(m);
            s2 /= static_cast<double>(m);
            for (int ci = 0; ci < cg; ++ci) {
                const int ic = g * cg + ci;
                for (int iy = 0; iy < x.h(); ++iy)
                    for (int ix = 0; ix < x.w(); ++ix) {
                        const double xh = (x.at(in, ic, iy, ix) - mean) * inv;
                        const double dxh = gout.at(in, ic, iy, ix) * alpha[ic];
                        dx->at(in, ic, iy, ix) = static_cast<T>(inv * (dxh - s1 - xh * s2));
                    }
            }
        }
    if (dalpha) {
        *dalpha = BasicTensor<T>({x.c()});
        for (int ic = 0; ic < x.c(); ++ic) (*dalpha)[ic] = static_cast<T>(aa[static_cast<std::size_t>(ic)]);
    }
    if (dbeta) {
        *dbeta = BasicTensor<T>({x.c()});
        for (int ic = 0; ic < x.c(); ++ic) (*dbeta)[ic] = static_cast<T>(ab[static_cast<std::size_t>(ic)]);
    }
}

// Per-position normalization over the channel axis, affine per channel.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, float eps = kNormEps, NormStats* stats = nullptr) {
    if (x.rank() != 4) throw ConfigError("layer_norm expects a rank-4 input");
    if (gamma.rank() != 1 || gamma.dim(0) != x.c() || beta.rank() != 1 || beta.dim(0) != x.c())
        throw ConfigError("layer_norm: gamma/beta must be rank-1 of length C");
    BasicTensor<T> out(x.shape);
    NormStats local;
    NormStats& st = stats ? *stats : local;
    const std::int64_t positions = static_cast<std::int64_t>(x.n()) * x.h() * x.w();
    st.mean.assign(static_cast<std::size_t>(positions), 0.0);
    st.invstd.assign(static_cast<std::size_t>(positions), 0.0);
    const std::int64_t hw = static_cast<std::int64_t>(x.h()) * x.w();
    parallel_for(positions, [&](std::int64_t pos) {
        const int in = static_cast<int>(pos / hw);
        const std::int64_t yx = pos % hw;
        const std::int64_t base = static_cast<std::int64_t>(in) * x.c() * hw + yx;
        double sum = 0.0, sq = 0.0;
        for (int ic = 0; ic < x.c(); ++ic) {
            const double v = x[base + static_cast<std::int64_t>(ic) * hw];
            sum += v;
            sq += v * v;
        }
        const double mean = sum / x.c();
        const double var = std::max(0.0, sq / x.c() - mean * mean);
        const double inv = 1.0 / std::sqrt(var + eps);
        st.mean[static_cast<std::size_t>(pos)] = mean;
        st.invstd[static_cast<std::size_t>(pos)] = inv;
        for (int ic = 0; ic < x.c(); ++ic)
            out[base + static_cast<std::int64_t>(ic) * hw] = static_cast<T>(
                gamma[ic] * (x[base + static_cast<std::int64_t>(ic) * hw] - mean) * inv + beta[ic]);
    });
    return out;
}

template <typename T>
void layer_norm_backward(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const NormStats& st,
                         const BasicTensor<T>& gout, BasicTensor<T>* dx, BasicTensor<T>* dgamma,
                         BasicTensor<T>* dbeta) {
    std::vector<double> ag, ab;
    if (dgamma) ag.assign(static_cast<std::size_t>(x.c()), 0.0);
    if (dbeta) ab.assign(static_cast<std::size_t>(x.c()), 0.0);
    if (dx) *dx = BasicTensor<T>(x.shape);
    const std::int64_t hw = static_cast<std::int64_t>(x.h()) * x.w();
    const std::int64_t positions = static_cast<std::int64_t>(x.n()) * hw;
    for (std::int64_t pos = 0; pos < positions; ++pos) {
        const int in = static_cast<int>(pos / hw);
        const std::int64_t yx = pos % hw;
        const std::int64_t base = static_cast<std::int64_t>(in) * x.c() * hw + yx;
        const double mean = st.mean[static_cast<std::size_t>(pos)];
        const double inv = st.invstd[static_cast<std::size_t>(pos)];
        double s1 = 0.0, s2 = 0.0;
        for (int ic = 0; ic < x.c(); ++ic) {
            const double xh = (x[base + static_cast<std::int64_t>(ic) * hw] - mean) * inv;
            const double go = gout[base + static_cast<std::int64_t>(ic) * hw];
            const double dxh = go * gamma[ic];
            s1 += dxh;
            s2 += dxh * xh;
            if (dgamma) ag[static_cast<std::size_t>(ic)] += go * xh;
            if (dbeta) ab[static_cast<std::size_t>(ic)] += go;
        }
        if (!dx) continue;
        s1 /= x.c();
        s2 /= x.c();
        for (int ic = 0; ic < x.c(); ++ic) {
            const double xh = (x[base + static_cast<std::int64_t>(ic) * hw] - mean) * inv;
            const double dxh = gout[base + static_cast<std::int64_t>(ic) * hw] * gamma[ic];
            (*dx)[base + static_cast<std::int64_t>(ic) * hw] = static_cast<T>(inv * (dxh - s1 - xh * s2));
        }
    }
    if (dgamma) {
        *dgamma = BasicTensor<T>({x.c()});
        for (int ic = 0; ic < x.c(); ++ic) (*dgamma)[ic] = static_cast<T>(ag[static_cast<std::size_t>(ic)]);
    }
    if (dbeta) {
        *dbeta = BasicTensor<T>({x.c()});
        for (int ic = 0; ic < x.c(); ++ic) (*dbeta)[ic] = static_cast<T>(ab[static_cast<std::size_t>(ic)]);
    }
}

// ---- grouped deformable resampling ---------------------------------------------
// offsets is (N, G*K*K*3, H, W) with channel ((g*K*K + n)*3 + slot), slot 0 = dx,
// 1 = dy, 2 = dm; displacements are in pixels of the output grid. Per group g the
// location-irrelevant weight w[c] scales each channel's modulated K*K gather:
//   out[n,c,y,x] = w[c] * sum_n dm[g,n,y,x] * bilinear(x_c, y+py_n+dy, x+px_n+dx) (+ bias[c])

template <typename T>
void validate_deform(const BasicTensor<T>& x, const BasicTensor<T>& offsets, const BasicTensor<T>& wg,
                     const BasicTensor<T>& bias, int groups, int k) {
    if (x.rank() != 4) throw ConfigError("deform_resample expects a rank-4 input");
    if (groups < 1 || x.c() % groups != 0)
        throw ConfigError("deform_resample: channels not divisible by groups");
    if (offsets.rank() != 4 || offsets.n() != x.n() || offsets.h() != x.h() || offsets.w() != x.w() ||
        offsets.c() != groups * k * k * 3)
        throw ConfigError("deform_resample: offsets must be (N, G*K*K*3, H, W)");
    if (wg.rank() != 1 || wg.dim(0) != x.c())
        throw ConfigError("deform_resample: weight vector must have C entries");
    if (!bias.shape.empty() && (bias.rank() != 1 || bias.dim(0) != x.c()))
        throw ConfigError("deform_resample: bias must have C entries");
}

template <typename T>
BasicTensor<T> deform_resample(const BasicTensor<T>& x, const BasicTensor<T>& offsets,
                               const BasicTensor<T>& wg, const BasicTensor<T>& bias, int groups, int k) {
    validate_deform(x, offsets, wg, bias, groups, k);
    const int cg = x.c() / groups;
    const int kk = k * k;
    const int half = k / 2;
    BasicTensor<T> out(x.shape);
    parallel_for(static_cast<std::int64_t>(x.n()) * groups, [&](std::int64_t ng) {
        const int in = static_cast<int>(ng / groups);
        const int g = static_cast<int>(ng % groups);
        for (int oy = 0; oy < x.h(); ++oy)
            for (int ox = 0; ox < x.w(); ++ox) {
                for (int ci = 0; ci < cg; ++ci) {
                    const int ic = g * cg + ci;
                    double acc = 0.0;
                    for (int n = 0; n < kk; ++n) {
                        const int base = (g * kk + n) * 3;
                        const double dxo = offsets.at(in, base + 0, oy, ox);
                        const double dyo = offsets.at(in, base + 1, oy, ox);
                        const double dm = offsets.at(in, base + 2, oy, ox);
                        const double py = oy + (n / k - half) + dyo;
                        const double px = ox + (n % k - half) + dxo;
                        detail::BilinTaps t;
                        t.y0 = static_cast<int>(std::floor(py));
                        t.x0 = static_cast<int>(std::floor(px));
                        t.wy = py - t.y0;
                        t.wx = px - t.x0;
                        acc += dm * detail::sample_value(x, in, ic, t);
                    }
                    acc *= wg[ic];
                    if (!bias.shape.empty()) acc += bias[ic];
                    out.at(in, ic, oy, ox) = static_cast<T>(acc);
                }
            }
    });
    return out;
}

template <typename T>
void deform_resample_backward(const BasicTensor<T>& x, const BasicTensor<T>& offsets,
                              const BasicTensor<T>& wg, const BasicTensor<T>& bias, int groups, int k,
                              const BasicTensor<T>& gout, BasicTensor<T>* dx, BasicTensor<T>* doffsets,
                              BasicTensor<T>* dwg, BasicTensor<T>* dbias) {
    const int cg = x.c() / groups;
    const int kk = k * k;
    const int half = k / 2;
    std::vector<double> ax, ao, aw, ab;
    if (dx) ax.assign(static_cast<std::size_t>(x.numel()), 0.0);
    if (doffsets) ao.assign(static_cast<std::size_t>(offsets.numel()), 0.0);
    if (dwg) aw.assign(static_cast<std::size_t>(x.c()), 0.0);
    if (dbias && !bias.shape.empty()) ab.assign(static_cast<std::size_t>(x.c()), 0.0);
    for (int in = 0; in < x.n(); ++in)
        for (int g = 0; g < groups; ++g)
            for (int oy = 0; oy < x.h(); ++oy)
                for (int ox = 0; ox < x.w(); ++ox)
                    for (int ci = 0; ci < cg; ++ci) {
                        const int ic = g * cg + ci;
                        const double gv = gout.at(in, ic, oy, ox);
                        double gather = 0.0; // for dwg
                        for (int n = 0; n < kk; ++n) {
                            const int base = (g * kk + n) * 3;
                            const double dxo = offsets.at(in, base + 0, oy, ox);
                            const double dyo = offsets.at(in, base + 1, oy, ox);
                            const double dm = offsets.at(in, base + 2, oy, ox);
                            const double py = oy + (n / k - half) + dyo;
                            const double px = ox + (n % k - half) + dxo;
                            const int y0 = static_cast<int>(std::floor(py));
                            const int x0 = static_cast<int>(std::floor(px));
                            const double wy = py - y0, wx = px - x0;
                            auto valid = [&](int yy, int xx) {
                                return yy >= 0 && yy < x.h() && xx >= 0 && xx < x.w();
                            };
                            auto pick = [&](int yy, int xx) -> double {
                                return valid(yy, xx) ? x.at(in, ic, yy, xx) : 0.0;
                            };
                            const double v00 = pick(y0, x0), v01 = pick(y0, x0 + 1);
                            const double v10 = pick(y0 + 1, x0), v11 = pick(y0 + 1, x0 + 1);
                            const double sampled = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) +
                                                   wy * ((1.0 - wx) * v10 + wx * v11);
                            gather += dm * sampled;
                            const double coef = gv * wg[ic];
                            if (dx) {
                                auto put = [&](int yy, int xx, double w) {
                                    if (valid(yy, xx))
                                        ax[static_cast<std::size_t>(x.index(in, ic, yy, xx))] += coef * dm * w;
                                };
                                put(y0, x0, (1.0 - wy) * (1.0 - wx));
                                put(y0, x0 + 1, (1.0 - wy) * wx);
                                put(y0 + 1, x0, wy * (1.0 - wx));
                                put(y0 + 1, x0 + 1, wy * wx);
                            }
                            if (doffsets) {
                                ao[static_cast<std::size_t>(offsets.index(in, base + 0, oy, ox))] +=
                                    coef * dm * ((1.0 - wy) * (v01 - v00) + wy * (v11 - v10));
                                ao[static_cast<std::size_t>(offsets.index(in, base + 1, oy, ox))] +=
                                    coef * dm * ((1.0 - wx) * (v10 - v00) + wx * (v11 - v01));
                                ao[static_cast<std::size_t>(offsets.index(in, base + 2, oy, ox))] +=
                                    coef * sampled;
                            }
                        }
                        if (dwg) aw[static_cast<std::size_t>(ic)] += gv * gather;
                        if (dbias && !bias.shape.empty()) ab[static_cast<std::size_t>(ic)] += gv;
                    }
    if (dx) {
        *dx = BasicTensor<T>(x.shape);
        for (std::int64_t i = 0; i < x.numel(); ++i) (*dx)[i] = static_cast<T>(ax[static_cast<std::size_t>(i)]);
    }
    if (doffsets) {
        *doffsets = BasicTensor<T>(offsets.shape);
        for (std::int64_t i = 0; i < offsets.numel(); ++i)
            (*doffsets)[i] = static_cast<T>(ao[static_cast<std::size_t>(i)]);
    }
    if (dwg) {
        *dwg = BasicTensor<T>({x.c()});
        for (int ic = 0; ic < x.c(); ++ic) (*dwg)[ic] = static_cast<T>(aw[static_cast<std::size_t>(ic)]);
    }
    if (dbias && !bias.shape.empty()) {
        *dbias = BasicTensor<T>({x.c()});
        for (int ic = 0; ic < x.c(); ++ic) (*dbias)[ic] = static_cast<T>(ab[static_cast<std::size_t>(ic)]);
    }
}

} // namespace ops
} // namespace a3fpn
