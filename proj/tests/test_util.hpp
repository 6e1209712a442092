#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "motia/tensor.hpp"

namespace testutil {

// Central-difference gradient check against a scalar-producing forward pass.
// Returns the max relative error over every element of every parameter.
template <typename T>
double fd_gradcheck(const std::function<motia::Tensor<T>()>& forward,
                    std::vector<motia::Tensor<T>> params, T h = T(1e-3)) {
    for (auto& p : params) p.set_requires_grad(true);
    motia::GradTape<T> tape;
    {
        motia::TapeScope<T> scope(tape);
        auto loss = forward();
        tape.backward(loss);
    }
    double max_rel = 0.0;
    for (auto& p : params) {
        const std::vector<T>& g = p.grad_vector();
        for (int64_t i = 0; i < p.numel(); ++i) {
            T saved = p.data()[i];
            p.data()[i] = saved + h;
            double fp = static_cast<double>(forward().item());
            p.data()[i] = saved - h;
            double fm = static_cast<double>(forward().item());
            p.data()[i] = saved;
            double fd = (fp - fm) / (2.0 * static_cast<double>(h));
            double an = g.empty() ? 0.0 : static_cast<double>(g[static_cast<size_t>(i)]);
            double denom = std::max({1e-6, std::fabs(fd), std::fabs(an)});
            max_rel = std::max(max_rel, std::fabs(an - fd) / denom);
        }
    }
    return max_rel;
}

inline bool approx(double a, double b, double tol) { return std::fabs(a - b) <= tol; }

template <typename T>
double max_abs_diff(const motia::Tensor<T>& a, const motia::Tensor<T>& b) {
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::fabs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
    return m;
}

template <typename T>
bool bit_identical(const motia::Tensor<T>& a, const motia::Tensor<T>& b) {
    if (a.shape() != b.shape()) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a.data()[i] != b.data()[i]) return false;
    return true;
}

}  // namespace testutil
