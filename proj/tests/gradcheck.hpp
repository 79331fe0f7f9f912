#pragma once

// Central finite-difference oracle for gradient validation. Independent of
// the autodiff tape: it re-evaluates the forward closure at perturbed
// parameter values and compares the quotient against the analytic gradient.

#include <cmath>
#include <functional>
#include <vector>

#include "pavenet/rng.hpp"
#include "pavenet/tensor.hpp"

namespace gradcheck {

inline pavenet::Tensor random_input(pavenet::Shape shape, uint64_t seed, double lo = -1.0,
                                    double hi = 1.0, double keep_away_from_zero = 0.0) {
    pavenet::SplitMix64 g(seed);
    std::vector<double> v(pavenet::numel_of(shape));
    for (double& x : v) {
        x = g.uniform(lo, hi);
        if (keep_away_from_zero > 0.0 && std::abs(x) < keep_away_from_zero)
            x = x < 0.0 ? x - keep_away_from_zero : x + keep_away_from_zero;
    }
    pavenet::Tensor t = pavenet::Tensor::from(std::move(shape), std::move(v));
    t.impl->requires_grad = true;
    return t;
}

// Fixed random projection so non-scalar op outputs can be checked through a
// scalar loss that mixes every output element.
inline pavenet::Tensor project_to_scalar(const pavenet::Tensor& out, uint64_t seed = 0xabcd) {
    pavenet::SplitMix64 g(seed);
    std::vector<double> w(out.numel());
    for (double& x : w) x = g.uniform(-1.0, 1.0);
    pavenet::Tensor weights = pavenet::Tensor::from(out.shape(), std::move(w));
    return pavenet::dot(pavenet::flatten(out), pavenet::flatten(weights));
}

// max over elements of |analytic - central difference| / (|cd| + 1e-8)
inline double max_rel_error(const std::vector<pavenet::Tensor*>& inputs,
                            const std::function<pavenet::Tensor()>& forward,
                            double h = 1e-4) {
    for (pavenet::Tensor* t : inputs) t->zero_grad();
    pavenet::Tensor loss = forward();
    pavenet::backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (pavenet::Tensor* t : inputs) analytic.push_back(t->grad());
    for (pavenet::Tensor* t : inputs) t->zero_grad();

    double worst = 0.0;
    for (size_t pi = 0; pi < inputs.size(); ++pi) {
        pavenet::Tensor* t = inputs[pi];
        for (size_t i = 0; i < t->numel(); ++i) {
            const double orig = t->values()[i];
            double fp, fm;
            {
                pavenet::NoGradGuard ng;
                t->values()[i] = orig + h;
                fp = forward().value();
                t->values()[i] = orig - h;
                fm = forward().value();
            }
            t->values()[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double rel = std::abs(analytic[pi][i] - fd) / (std::abs(fd) + 1e-8);
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace gradcheck
