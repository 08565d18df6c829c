#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sat/tensor.hpp"

namespace sat {

/// Central-difference gradient verification at 64-bit precision.
///
/// `f` evaluates a scalar loss from the current contents of `x` (and anything
/// else it closes over). The autodiff gradient of one backward() pass at the
/// base point is compared coordinate-wise against (f(x+h) - f(x-h)) / 2h.
/// Relative error uses denominator max(|a|, |b|, 1e-8).
inline double finite_diff_check(const std::function<TensorT<double>()>& f, TensorT<double>& x,
                                double h = 1e-5) {
    x.set_requires_grad(true);
    x.zero_grad();
    TensorT<double> loss = f();
    loss.backward();
    std::vector<double> autodiff(x.grad().begin(), x.grad().end());

    double max_rel = 0.0;
    NoGradGuard eval_only;
    auto xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i) {
        const double orig = xd[i];
        xd[i] = orig + h;
        const double fp = f().item();
        xd[i] = orig - h;
        const double fm = f().item();
        xd[i] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double denom = std::max({std::abs(fd), std::abs(autodiff[i]), 1e-8});
        max_rel = std::max(max_rel, std::abs(fd - autodiff[i]) / denom);
    }
    return max_rel;
}

/// Convenience: check several tensors against the same scalar function.
inline double finite_diff_check_many(const std::function<TensorT<double>()>& f,
                                     std::vector<TensorT<double>*> xs, double h = 1e-5) {
    double max_rel = 0.0;
    for (TensorT<double>* x : xs) max_rel = std::max(max_rel, finite_diff_check(f, *x, h));
    return max_rel;
}

struct GradCheckReport {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

} // namespace sat
