#pragma once

#include <cmath>
#include <numeric>
#include <utility>

#include "hairseg/autodiff.hpp"

namespace hairseg {

// Central-difference verification of reverse-mode gradients, always in
// 64-bit precision. `f` maps leaf variables to a scalar and must be a pure
// function of the leaf values (re-seed any internal RNG per call).
//
// Returns the maximum relative discrepancy |ad - fd| / max(|ad|, |fd|, 1).
// `max_coords_per_input` of 0 checks every coordinate; otherwise that many
// coordinates per tensor are drawn deterministically from `rng`.
template <class F>
double grad_check_sampled(F&& f, const std::vector<Tensor64>& inputs, double h,
                          std::size_t max_coords_per_input, RngState rng) {
    std::vector<Var64> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) leaves.emplace_back(t, /*requires_grad=*/true);
    Var64 loss = f(leaves);
    HS_CHECK_CONTRACT(loss.size() == 1,
                      "grad_check: f must be scalar-valued, got " << shape_str(loss.shape()));
    backward(loss);
    std::vector<Tensor64> ad;
    ad.reserve(leaves.size());
    for (const auto& l : leaves) ad.push_back(l.grad());

    auto eval = [&f](const std::vector<Tensor64>& xs) {
        NoGradGuard ng;
        std::vector<Var64> vs;
        vs.reserve(xs.size());
        for (const auto& t : xs) vs.emplace_back(t, false);
        return f(vs).value()[0];
    };

    std::vector<Tensor64> work = inputs;
    double max_err = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const std::size_t n = inputs[i].size();
        std::vector<std::size_t> coords;
        if (max_coords_per_input == 0 || n <= max_coords_per_input) {
            coords.resize(n);
            std::iota(coords.begin(), coords.end(), std::size_t{0});
        } else {
            coords.reserve(max_coords_per_input);
            for (std::size_t k = 0; k < max_coords_per_input; ++k)
                coords.push_back(rng.next_range(0, n - 1));
        }
        for (std::size_t j : coords) {
            const double orig = work[i][j];
            work[i][j] = orig + h;
            const double fp = eval(work);
            work[i][j] = orig - h;
            const double fm = eval(work);
            work[i][j] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double a = ad[i][j];
            const double err = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1.0});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

template <class F>
double grad_check(F&& f, const std::vector<Tensor64>& inputs, double h = 1e-5) {
    return grad_check_sampled(std::forward<F>(f), inputs, h, 0, RngState(0));
}

} // namespace hairseg
