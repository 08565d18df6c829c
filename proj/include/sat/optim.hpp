#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sat/tensor.hpp"

namespace sat {

template <typename S>
struct NamedParam {
    std::string name;
    TensorT<S> tensor; // shares storage with the owning module
};

template <typename S>
using ParamList = std::vector<NamedParam<S>>;

template <typename S>
void zero_gradients(ParamList<S>& params) {
    for (auto& p : params) p.tensor.zero_grad();
}

/// Clamp every gradient component into [lo, hi].
template <typename S>
void clip_gradients(ParamList<S>& params, double lo = -5.0, double hi = 5.0) {
    for (auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (S& g : p.tensor.grad())
            g = std::min(static_cast<S>(hi), std::max(static_cast<S>(lo), g));
    }
}

/// Adam with bias correction. Moment arrays are keyed by parameter order,
/// which must stay stable across steps.
template <typename S>
struct AdamState {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step_count = 0;

    std::vector<std::vector<S>> m;
    std::vector<std::vector<S>> v;

    void step(ParamList<S>& params) {
        if (m.empty()) {
            m.resize(params.size());
            v.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m[i].assign(params[i].tensor.size(), S(0));
                v[i].assign(params[i].tensor.size(), S(0));
            }
        }
        if (m.size() != params.size())
            throw std::runtime_error("adam_step: parameter list changed size");
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            if (!p.tensor.has_grad())
                throw std::runtime_error("adam_step: missing gradient for parameter '" + p.name + "'");
            if (m[i].size() != p.tensor.size())
                throw std::runtime_error("adam_step: moment shape mismatch for parameter '" + p.name + "'");
            auto g = p.tensor.grad();
            auto w = p.tensor.data();
            for (std::size_t j = 0; j < g.size(); ++j) {
                m[i][j] = static_cast<S>(beta1 * m[i][j] + (1.0 - beta1) * g[j]);
                v[i][j] = static_cast<S>(beta2 * v[i][j] + (1.0 - beta2) * g[j] * g[j]);
                const double mhat = m[i][j] / bc1;
                const double vhat = v[i][j] / bc2;
                w[j] -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }
};

template <typename S>
void adam_step(ParamList<S>& params, AdamState<S>& state) {
    state.step(params);
}

} // namespace sat
