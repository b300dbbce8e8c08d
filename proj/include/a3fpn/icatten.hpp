#pragma once

#include <vector>

#include "a3fpn/autodiff.hpp"

namespace a3fpn {

// Channel informativeness derived from group-norm scale factors:
//   omega_c  = alpha_c / sum(alpha)
//   omega1_c = sigmoid(omega_c) if <= threshold, else 1
//   omega2_c = sigmoid(omega_c) if >= threshold, else 0
// At sigmoid(omega) == threshold both keep the sigmoid value.
struct InformativenessWeights {
    std::vector<double> omega;
    std::vector<double> omega1;
    std::vector<double> omega2;
    double threshold = 0.5;
};

inline InformativenessWeights informativeness(const Tensor& alpha, double threshold) {
    if (alpha.rank() != 1) throw ConfigError("informativeness: alpha must be rank-1");
    double sum = 0.0;
    for (float v : alpha.data) sum += v;
    if (sum == 0.0) throw ComputeError("informativeness: sum of alpha is zero");
    InformativenessWeights w;
    w.threshold = threshold;
    const int c = alpha.dim(0);
    w.omega.resize(static_cast<std::size_t>(c));
    w.omega1.resize(static_cast<std::size_t>(c));
    w.omega2.resize(static_cast<std::size_t>(c));
    for (int i = 0; i < c; ++i) {
        const double om = alpha[i] / sum;
        const double s = 1.0 / (1.0 + std::exp(-om));
        w.omega[static_cast<std::size_t>(i)] = om;
        w.omega1[static_cast<std::size_t>(i)] = s > threshold ? 1.0 : s;
        w.omega2[static_cast<std::size_t>(i)] = s < threshold ? 0.0 : s;
    }
    return w;
}

// Intra-scale reassembly (1-indexed channels):
//   Z1 = y (.) omega1,  Z2 = y (.) omega2,  out[c] = Z1[c] + Z2[C-c+1]
// The group norm is applied for its learned alpha only; the raw y is what gets
// reweighted, so its normalized output is discarded. Clamped weights carry zero
// gradient w.r.t. alpha.
template <typename T>
Var icatten_reassemble(BasicTape<T>& t, Var y, Var alpha, Var beta, int gn_groups, float threshold) {
    if (t.value(y).rank() != 4) throw ConfigError("icatten_reassemble: y must be rank-4");
    if (gn_groups < 1 || t.value(y).c() % gn_groups != 0)
        throw ConfigError("icatten_reassemble: channel count not divisible by gn_groups");
    double sum = 0.0;
    for (T v : t.value(alpha).data) sum += v;
    if (sum == 0.0) throw ComputeError("icatten_reassemble: sum of alpha is zero");

    ad::group_norm(t, y, gn_groups, alpha, beta); // runs for its learned alpha; output unused

    Var s = ad::sum_all(t, alpha);
    Var omega = ad::hadamard(t, alpha, ad::reciprocal(t, s));
    Var sig = ad::sigmoid(t, omega);
    Var w1 = ad::clamp_to_one_above(t, sig, threshold);
    Var w2 = ad::clamp_to_zero_below(t, sig, threshold);
    Var z1 = ad::channel_scale(t, y, w1);
    Var z2 = ad::channel_scale(t, y, w2);
    return ad::add(t, z1, ad::reverse_channels(t, z2));
}

} // namespace a3fpn
