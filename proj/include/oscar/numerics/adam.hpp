#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "oscar/numerics/params.hpp"

namespace oscar {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct BasicAdamState {
    std::vector<std::vector<T>> first_moment;
    std::vector<std::vector<T>> second_moment;
    std::uint64_t step = 0;
};

using AdamState = BasicAdamState<float>;

template <typename T>
void adam_step(BasicParamSet<T>& params, const BasicParamSet<T>& grads, BasicAdamState<T>& state,
               const AdamConfig& cfg = {}) {
    if (!(cfg.lr > 0.0)) throw Error("Adam learning rate must be positive");
    if (!params.same_layout(grads)) throw ShapeError("gradient layout does not match parameters");
    for (std::size_t i = 0; i < grads.count(); ++i)
        if (!grads.tensor(i).all_finite())
            throw NumericError("non-finite gradient for parameter '" + grads.name(i) + "'");

    if (state.first_moment.empty()) {
        for (std::size_t i = 0; i < params.count(); ++i) {
            state.first_moment.emplace_back(params.tensor(i).size(), T{0});
            state.second_moment.emplace_back(params.tensor(i).size(), T{0});
        }
    }
    if (state.first_moment.size() != params.count()) throw ShapeError("Adam state does not match parameters");

    ++state.step;
    const double t = static_cast<double>(state.step);
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t));
    const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t));
    const T lr = static_cast<T>(cfg.lr), eps = static_cast<T>(cfg.eps);

    for (std::size_t i = 0; i < params.count(); ++i) {
        auto p = params.tensor(i).data();
        auto g = grads.tensor(i).data();
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        if (m.size() != p.size()) throw ShapeError("Adam accumulator shape mismatch for '" + params.name(i) + "'");
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = b1 * m[k] + (T{1} - b1) * g[k];
            v[k] = b2 * v[k] + (T{1} - b2) * g[k] * g[k];
            const T m_hat = m[k] / c1;
            const T v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

}  // namespace oscar
