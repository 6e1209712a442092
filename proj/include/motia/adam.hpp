#pragma once

#include <cmath>

#include "tensor.hpp"

namespace motia {

// Adam with decoupled weight decay (AdamW). Moments are stored per parameter
// tensor, aligned by index with the parameter list handed to adam_step.
template <typename T>
struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
    int64_t step = 0;
    std::vector<std::vector<double>> m;  // first moments
    std::vector<std::vector<double>> v;  // second moments

    void init(const std::vector<Tensor<T>>& params) {
        m.clear();
        v.clear();
        for (const auto& p : params) {
            m.emplace_back(static_cast<size_t>(p.numel()), 0.0);
            v.emplace_back(static_cast<size_t>(p.numel()), 0.0);
        }
        step = 0;
    }
};

template <typename T>
void adam_step(AdamState<T>& state, std::vector<Tensor<T>>& params) {
    if (state.m.size() != params.size())
        throw ContractError("adam_step: state not initialized for this parameter list");
    for (size_t i = 0; i < params.size(); ++i) {
        if (static_cast<int64_t>(state.m[i].size()) != params[i].numel())
            throw ContractError("adam_step: moment length mismatch at parameter " +
                                std::to_string(i));
        const auto& g = params[i].grad_vector();
        if (!g.empty())
            for (T gv : g)
                if (!std::isfinite(static_cast<double>(gv)))
                    throw NumericError("adam_step: non-finite gradient, update rejected");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        T* p = params[i].data();
        const auto& g = params[i].grad_vector();
        auto& m = state.m[i];
        auto& v = state.v[i];
        const int64_t n = params[i].numel();
        for (int64_t j = 0; j < n; ++j) {
            double gj = g.empty() ? 0.0 : static_cast<double>(g[static_cast<size_t>(j)]);
            m[static_cast<size_t>(j)] = state.beta1 * m[static_cast<size_t>(j)] + (1.0 - state.beta1) * gj;
            v[static_cast<size_t>(j)] = state.beta2 * v[static_cast<size_t>(j)] + (1.0 - state.beta2) * gj * gj;
            double mhat = m[static_cast<size_t>(j)] / bc1;
            double vhat = v[static_cast<size_t>(j)] / bc2;
            double pj = static_cast<double>(p[j]);
            // decay decoupled from the moment update, computed on the incoming value
            pj -= state.lr * (mhat / (std::sqrt(vhat) + state.eps) + state.weight_decay * pj);
            p[j] = static_cast<T>(pj);
        }
    }
}

}  // namespace motia
