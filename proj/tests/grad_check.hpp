#pragma once

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "simcis/autograd.hpp"

namespace simcis {

// Central finite differences against the analytic gradient of a scalar loss.
// Checks every element of every parameter.
inline void check_grad(const std::vector<Var>& params, const std::function<Var()>& loss_fn,
                       double eps = 1e-5, double tol = 1e-6) {
    Var loss = loss_fn();
    REQUIRE(loss.numel() == 1);
    for (auto p : params) p.zero_grad();
    backward(loss);

    for (auto p : params) {
        Tensor analytic = p.grad();
        for (int64_t i = 0; i < p.numel(); ++i) {
            const double orig = p.value()[i];
            p.value()[i] = orig + eps;
            const double fp = loss_fn().scalar();
            p.value()[i] = orig - eps;
            const double fm = loss_fn().scalar();
            p.value()[i] = orig;
            const double fd = (fp - fm) / (2.0 * eps);
            const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-4});
            const double rel = std::abs(fd - analytic[i]) / denom;
            INFO("param elem ", i, " fd=", fd, " analytic=", analytic[i]);
            CHECK(rel < tol);
        }
    }
}

}  // namespace simcis
