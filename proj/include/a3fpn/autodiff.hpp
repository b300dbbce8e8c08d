#pragma once

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "a3fpn/ops.hpp"

namespace a3fpn {

struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

// Records every executed operation with enough state to replay gradients in
// exact reverse execution order. Single consumer: one backward() per tape.
// The float instantiation is the engine; the double one backs high-precision
// finite differencing.
template <typename T>
class BasicTape {
public:
    bool recording = true;

    Var leaf(BasicTensor<T> value, bool requires_grad = false) {
        values_.push_back(std::move(value));
        grads_.emplace_back();
        requires_.push_back(requires_grad && recording);
        return Var{static_cast<std::int32_t>(values_.size() - 1)};
    }

    Var zero_leaf(std::vector<int> shape) { return leaf(BasicTensor<T>(std::move(shape)), false); }

    const BasicTensor<T>& value(Var v) const { return values_[static_cast<std::size_t>(v.id)]; }
    bool requires_grad(Var v) const { return requires_[static_cast<std::size_t>(v.id)]; }

    bool has_grad(Var v) const { return !grads_[static_cast<std::size_t>(v.id)].shape.empty(); }

    const BasicTensor<T>& grad(Var v) const {
        if (!has_grad(v)) throw UsageError("no gradient recorded for this variable");
        return grads_[static_cast<std::size_t>(v.id)];
    }

    BasicTensor<T> grad_or_zero(Var v) const {
        return has_grad(v) ? grads_[static_cast<std::size_t>(v.id)] : BasicTensor<T>(value(v).shape);
    }

    void accumulate(Var v, const BasicTensor<T>& contribution) {
        if (contribution.shape != value(v).shape)
            throw UsageError("gradient contribution shape must match the value it differentiates");
        BasicTensor<T>& g = grads_[static_cast<std::size_t>(v.id)];
        if (g.shape.empty()) {
            g = contribution;
            return;
        }
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += contribution[i];
    }

    // Registers the output of an op. backprop reads the output gradient and
    // accumulates into the inputs; skipped when the output was never reached.
    Var emit(BasicTensor<T> value, const std::vector<Var>& inputs,
             std::function<void(BasicTape&, Var)> backprop) {
        bool needs = false;
        if (recording)
            for (Var in : inputs)
                if (in.valid() && requires_grad(in)) needs = true;
        Var out = leaf(std::move(value), needs);
        if (needs) nodes_.push_back(Node{out, std::move(backprop)});
        return out;
    }

    void backward(Var out, const BasicTensor<T>& seed) {
        if (consumed_) throw UsageError("tape already consumed by a previous backward pass");
        if (!out.valid()) throw UsageError("backward: invalid output variable");
        if (seed.shape != value(out).shape)
            throw UsageError("backward: seed gradient shape must match the forward output");
        consumed_ = true;
        accumulate(out, seed);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
            if (has_grad(it->out)) it->backprop(*this, it->out);
    }

    bool consumed() const { return consumed_; }
    std::size_t size() const { return values_.size(); }

private:
    struct Node {
        Var out;
        std::function<void(BasicTape&, Var)> backprop;
    };

    // deques: growing the tape never invalidates references to stored tensors
    std::deque<BasicTensor<T>> values_;
    std::deque<BasicTensor<T>> grads_;
    std::vector<bool> requires_;
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

using Tape = BasicTape<float>;
using TapeD = BasicTape<double>;

namespace ad {

template <typename T>
Var constant(BasicTape<T>& t, BasicTensor<T> v) {
    return t.leaf(std::move(v), false);
}

template <typename T>
Var sigmoid(BasicTape<T>& t, Var x) {
    return t.emit(ops::sigmoid(t.value(x)), {x}, [x](BasicTape<T>& tp, Var out) {
        const BasicTensor<T>& y = tp.value(out);
        const BasicTensor<T>& g = tp.grad(out);
        BasicTensor<T> dx(y.shape);
        for (std::int64_t i = 0; i < y.numel(); ++i) dx[i] = g[i] * y[i] * (T(1) - y[i]);
        tp.accumulate(x, dx);
    });
}

template <typename T>
Var gelu(BasicTape<T>& t, Var x) {
    return t.emit(ops::gelu(t.value(x)), {x}, [x](BasicTape<T>& tp, Var out) {
        const BasicTensor<T>& xin = tp.value(x);
        const BasicTensor<T>& g = tp.grad(out);
        BasicTensor<T> dx(xin.shape);
        for (std::int64_t i = 0; i < xin.numel(); ++i) dx[i] = g[i] * ops::gelu_grad_scalar(xin[i]);
        tp.accumulate(x, dx);
    });
}

template <typename T>
Var add(BasicTape<T>& t, Var a, Var b) {
    return t.emit(ops::add(t.value(a), t.value(b)), {a, b}, [a, b](BasicTape<T>& tp, Var out) {
        const BasicTensor<T>& g = tp.grad(out);
        tp.accumulate(a, g);
        tp.accumulate(b, g);
    });
}

template <typename T>
Var reciprocal(BasicTape<T>& t, Var x) {
    return t.emit(ops::reciprocal(t.value(x)), {x}, [x](BasicTape<T>& tp, Var out) {
        const BasicTensor<T>& xin = tp.value(x);
        const BasicTensor<T>& g = tp.grad(out);
        BasicTensor<T> dx(xin.shape);
        for (std::int64_t i = 0; i < xin.numel(); ++i) dx[i] = -g[i] / (xin[i] * xin[i]);
        tp.accumulate(x, dx);
    });
}

template <typename T>
Var sum_all(BasicTape<T>& t, Var x) {
    return t.emit(ops::sum_all(t.value(x)), {x}, [x](BasicTape<T>& tp, Var out) {
        const T s = tp.grad(out)[0];
        tp.accumulate(x, BasicTensor<T>::full(tp.value(x).shape, s));
    });
}

template <typename T>
Var hadamard(BasicTape<T>& t, Var a, Var b) {
    return t.emit(ops::hadamard(t.value(a), t.value(b)), {a, b}, [a, b](BasicTape<T>& tp, Var out) {
        const BasicTensor<T>& g = tp.grad(out);
        tp.accumulate(a, ops::hadamard_backward_lhs(tp.value(a), tp.value(b), g));
        tp.accumulate(b, ops::hadamard_backward_lhs(tp.value(b), tp.value(a), g));
    });
}

template <typename T>
Var clamp_to_one_above(BasicTape<T>& t, Var x, float threshold) {
    return t.emit(ops::clamp_to_one_above(t.value(x), T(threshold)), {x},
                  [x, threshold](BasicTape<T>& tp, Var out) {
                      const BasicTensor<T>& xin = tp.value(x);
                      const BasicTensor<T>& g = tp.grad(out);
                      BasicTensor<T> dx(xin.shape);
                      for (std::int64_t i = 0; i < xin.numel(); ++i)
                          dx[i] = xin[i] > T(threshold) ? T(0) : g[i];
                      tp.accumulate(x, dx);
                  });
}

template <typename T>
Var clamp_to_zero_below(BasicTape<T>& t, Var x, float threshold) {
    return t.emit(ops::clamp_to_zero_below(t.value(x), T(threshold)), {x},
                  [x, threshold](BasicTape<T>& tp, Var out) {
                      const BasicTensor<T>& xin = tp.value(x);
                      const BasicTensor<T>& g = tp.grad(out);
                      BasicTensor<T> dx(xin.shape);
                      for (std::int64_t i = 0; i < xin.numel(); ++i)
                          dx[i] = xin[i] < T(threshold) ? T(0) : g[i];
                      tp.accumulate(x, dx);
                  });
}

template <typename T>
Var channel_scale(BasicTape<T>& t, Var x, Var v) {
    return t.emit(ops::channel_scale(t.value(x), t.value(v)), {x, v}, [x, v](BasicTape<T>& tp, Var out) {
        const BasicTensor<T>& g = tp.grad(out);
        BasicTensor<T> dx, dv;
        ops::channel_scale_backward(tp.value(x), tp.value(v), g, tp.requires_grad(x) ? &dx : nullptr,
                                    tp.requires_grad(v) ? &dv : nullptr);
        if (tp.requires_grad(x)) tp.accumulate(x, dx);
        if (tp.requires_grad(v)) tp.accumulate(v, dv);
    });
}

template <typename T>
Var reverse_channels(BasicTape<T>& t, Var x) {
    return t.emit(ops::reverse_channels(t.value(x)), {x}, [x](BasicTape<T>& tp, Var out) {
        tp.accumulate(x, ops::reverse_channels(tp.grad(out)));
    });
}

template <typename T>
Var concat_channels(BasicTape<T>& t, const std::vector<Var>& xs) {
    std::vector<const BasicTensor<T>*> ptrs;
    ptrs.reserve(xs.size());
    for (Var v : xs) ptrs.push_back(&t.value(v));
    return t.emit(ops::concat_channels(ptrs), xs, [xs](BasicTape<T>& tp, Var out) {
        const BasicTensor<T>& g = tp.grad(out);
        std::vector<int> sizes;
        sizes.reserve(xs.size());
        for (Var v : xs) sizes.push_back(tp.value(v).c());
        std::vector<BasicTensor<T>> parts = ops::split_channels(g, sizes);
        for (std::size_t i = 0; i < xs.size(); ++i) tp.accumulate(xs[i], parts[i]);
    });
}

template <typename T>
std::vector<Var> split_channels(BasicTape<T>& t, Var x, const std::vector<int>& sizes) {
    std::vector<BasicTensor<T>> parts = ops::split_channels(t.value(x), sizes);
    std::vector<Var> out;
    out.reserve(parts.size());
    int start = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const int c0 = start;
        const int len = sizes[i];
        start += len;
        out.push_back(t.emit(std::move(parts[i]), {x}, [x, c0, len](BasicTape<T>& tp, Var part) {
            const BasicTensor<T>& g = tp.grad(part);
            const BasicTensor<T>& xin = tp.value(x);
            BasicTensor<T> dx(xin.shape);
            const std::int64_t hw = static_cast<std::int64_t>(xin.h()) * xin.w();
            for (int in = 0; in < xin.n(); ++in)
                std::copy_n(g.data.data() + static_cast<std::int64_t>(in) * len * hw, len * hw,
                            dx.data.data() + (static_cast<std::int64_t>(in) * xin.c() + c0) * hw);
            tp.accumulate(x, dx);
        }));
    }
    return out;
}

template <typename T>
Var conv2d(BasicTape<T>& t, Var x, Var w, Var b, int stride, int padding, int groups) {
    BasicConvParams<T> p;
    p.weights = t.value(w);
    if (b.valid()) p.bias = t.value(b);
    p.stride = stride;
    p.padding = padding;
    p.groups = groups;
    return t.emit(ops::conv2d(t.value(x), p), {x, w, b},
                  [x, w, b, stride, padding, groups](BasicTape<T>& tp, Var out) {
                      BasicConvParams<T> q;
                      q.weights = tp.value(w);
                      if (b.valid()) q.bias = tp.value(b);
                      q.stride = stride;
                      q.padding = padding;
                      q.groups = groups;
                      BasicTensor<T> dx, dw, db;
                      const bool nx = tp.requires_grad(x), nw = tp.requires_grad(w);
                      const bool nb = b.valid() && tp.requires_grad(b);
                      ops::conv2d_backward(tp.value(x), q, tp.grad(out), nx ? &dx : nullptr,
                                           nw ? &dw : nullptr, nb ? &db : nullptr);
                      if (nx) tp.accumulate(x, dx);
                      if (nw) tp.accumulate(w, dw);
                      if (nb) tp.accumulate(b, db);
                  });
}

template <typename T>
Var depthwise_conv2d(BasicTape<T>& t, Var x, Var w, Var b, int padding) {
    const int c = t.value(x).c();
    if (t.value(w).dim(0) != c || t.value(w).dim(1) != 1)
        throw ConfigError("depthwise_conv2d requires per-channel (C,1,k,k) weights");
    return conv2d(t, x, w, b, 1, padding, c);
}

template <typename T>
Var resize(BasicTape<T>& t, Var x, int out_h, int out_w, ops::Interp mode = ops::Interp::kBilinear) {
    return t.emit(ops::resize(t.value(x), out_h, out_w, mode), {x},
                  [x, out_h, out_w, mode](BasicTape<T>& tp, Var out) {
                      tp.accumulate(x, ops::resize_backward(tp.value(x), out_h, out_w, mode, tp.grad(out)));
                  });
}

template <typename T>
Var bilinear_sample(BasicTape<T>& t, Var x, Var coords) {
    return t.emit(ops::bilinear_sample(t.value(x), t.value(coords)), {x, coords},
                  [x, coords](BasicTape<T>& tp, Var out) {
                      BasicTensor<T> dx, dc;
                      const bool nx = tp.requires_grad(x), nc = tp.requires_grad(coords);
                      ops::bilinear_sample_backward(tp.value(x), tp.value(coords), tp.grad(out),
                                                    nx ? &dx : nullptr, nc ? &dc : nullptr);
                      if (nx) tp.accumulate(x, dx);
                      if (nc) tp.accumulate(coords, dc);
                  });
}

template <typename T>
Var group_norm(BasicTape<T>& t, Var x, int groups, Var alpha, Var beta, float eps = ops::kNormEps) {
    ops::NormStats stats;
    BasicTensor<T> y = ops::group_norm(t.value(x), groups, t.value(alpha), t.value(beta), eps, &stats);
    return t.emit(std::move(y), {x, alpha, beta},
                  [x, alpha, beta, groups, stats = std::move(stats)](BasicTape<T>& tp, Var out) {
                      BasicTensor<T> dx, da, db;
                      const bool nx = tp.requires_grad(x), na = tp.requires_grad(alpha);
                      const bool nb = tp.requires_grad(beta);
                      ops::group_norm_backward(tp.value(x), groups, tp.value(alpha), stats, tp.grad(out),
                                               nx ? &dx : nullptr, na ? &da : nullptr, nb ? &db : nullptr);
                      if (nx) tp.accumulate(x, dx);
                      if (na) tp.accumulate(alpha, da);
                      if (nb) tp.accumulate(beta, db);
                  });
}

template <typename T>
Var layer_norm(BasicTape<T>& t, Var x, Var gamma, Var beta, float eps = ops::kNormEps) {
    ops::NormStats stats;
    BasicTensor<T> y = ops::layer_norm(t.value(x), t.value(gamma), t.value(beta), eps, &stats);
    return t.emit(std::move(y), {x, gamma, beta},
                  [x, gamma, beta, stats = std::move(stats)](BasicTape<T>& tp, Var out) {
                      BasicTensor<T> dx, dg, db;
                      const bool nx = tp.requires_grad(x), ng = tp.requires_grad(gamma);
                      const bool nb = tp.requires_grad(beta);
                      ops::layer_norm_backward(tp.value(x), tp.value(gamma), stats, tp.grad(out),
                                               nx ? &dx : nullptr, ng ? &dg : nullptr, nb ? &db : nullptr);
                      if (nx) tp.accumulate(x, dx);
                      if (ng) tp.accumulate(gamma, dg);
                      if (nb) tp.accumulate(beta, db);
                  });
}

template <typename T>
Var deform_resample(BasicTape<T>& t, Var x, Var offsets, Var wg, Var bias, int groups, int k) {
    static const BasicTensor<T> kNoBias;
    const BasicTensor<T>& b = bias.valid() ? t.value(bias) : kNoBias;
    return t.emit(ops::deform_resample(t.value(x), t.value(offsets), t.value(wg), b, groups, k),
                  {x, offsets, wg, bias}, [x, offsets, wg, bias, groups, k](BasicTape<T>& tp, Var out) {
                      static const BasicTensor<T> kEmpty;
                      const BasicTensor<T>& bv = bias.valid() ? tp.value(bias) : kEmpty;
                      BasicTensor<T> dx, doff, dwg, db;
                      const bool nx = tp.requires_grad(x), no = tp.requires_grad(offsets);
                      const bool nw = tp.requires_grad(wg);
                      const bool nb = bias.valid() && tp.requires_grad(bias);
                      ops::deform_resample_backward(tp.value(x), tp.value(offsets), tp.value(wg), bv,
                                                    groups, k, tp.grad(out), nx ? &dx : nullptr,
                                                    no ? &doff : nullptr, nw ? &dwg : nullptr,
                                                    nb ? &db : nullptr);
                      if (nx) tp.accumulate(x, dx);
                      if (no) tp.accumulate(offsets, doff);
                      if (nw) tp.accumulate(wg, dwg);
                      if (nb) tp.accumulate(bias, db);
                  });
}

} // namespace ad
} // namespace a3fpn
