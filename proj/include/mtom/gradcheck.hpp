#pragma once

// Central finite-difference verification of tape gradients. Lives beside the
// engine because the CLI exposes it as `analyze gradcheck`; it never reuses
// the backward path it is checking.

#include <functional>
#include <vector>

#include "mtom/tensor.hpp"

namespace mtom {

// f builds a fresh forward pass on the given tape from the given inputs and
// returns a scalar. Inputs must have requires_grad set.
template <typename Real>
using ScalarFn =
    std::function<Tensor<Real>(Tape<Real>&, const std::vector<Tensor<Real>>&)>;

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

// Compares d f / d x per coordinate against (f(x+h) - f(x-h)) / 2h.
// Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
template <typename Real>
GradCheckResult finite_diff_check(const ScalarFn<Real>& f,
                                  std::vector<Tensor<Real>> inputs,
                                  double h = 1e-5) {
    for (auto& x : inputs) {
        if (!x.requires_grad())
            throw TensorError("finite_diff_check: inputs must require grad");
        x.zero_grad();
    }
    Tape<Real> tape;
    Tensor<Real> loss = f(tape, inputs);
    if (loss.numel() != 1)
        throw TensorError("finite_diff_check: f must be scalar-valued");
    tape.backward(loss);

    GradCheckResult res;
    for (auto& x : inputs) {
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const Real saved = x.value()[i];
            x.value()[i] = saved + static_cast<Real>(h);
            Tape<Real> tp;
            const double fp = static_cast<double>(f(tp, inputs).item());
            x.value()[i] = saved - static_cast<Real>(h);
            Tape<Real> tm;
            const double fm = static_cast<double>(f(tm, inputs).item());
            x.value()[i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = static_cast<double>(x.grad()[i]);
            const double denom =
                std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            res.max_rel_err =
                std::max(res.max_rel_err, std::abs(analytic - numeric) / denom);
            ++res.checked;
        }
    }
    return res;
}

// Same comparison over a random subset of coordinates; for big parameter
// sets where the full sweep would be quadratic-slow.
template <typename Real>
GradCheckResult finite_diff_check_sampled(const ScalarFn<Real>& f,
                                          std::vector<Tensor<Real>> inputs,
                                          std::size_t n_samples, Rng& rng,
                                          double h = 1e-5) {
    std::size_t total = 0;
    for (auto& x : inputs) {
        if (!x.requires_grad())
            throw TensorError("finite_diff_check: inputs must require grad");
        x.zero_grad();
        total += x.numel();
    }
    if (total == 0) throw TensorError("finite_diff_check: no coordinates");
    Tape<Real> tape;
    Tensor<Real> loss = f(tape, inputs);
    if (loss.numel() != 1)
        throw TensorError("finite_diff_check: f must be scalar-valued");
    tape.backward(loss);

    GradCheckResult res;
    for (std::size_t s = 0; s < n_samples; ++s) {
        std::size_t flat = rng.index(total);
        std::size_t which = 0;
        while (flat >= inputs[which].numel()) {
            flat -= inputs[which].numel();
            ++which;
        }
        auto& x = inputs[which];
        const Real saved = x.value()[flat];
        x.value()[flat] = saved + static_cast<Real>(h);
        Tape<Real> tp;
        const double fp = static_cast<double>(f(tp, inputs).item());
        x.value()[flat] = saved - static_cast<Real>(h);
        Tape<Real> tm;
        const double fm = static_cast<double>(f(tm, inputs).item());
        x.value()[flat] = saved;
        const double numeric = (fp - fm) / (2.0 * h);
        const double analytic = static_cast<double>(x.grad()[flat]);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        res.max_rel_err = std::max(res.max_rel_err, std::abs(analytic - numeric) / denom);
        ++res.checked;
    }
    return res;
}

}  // namespace mtom
