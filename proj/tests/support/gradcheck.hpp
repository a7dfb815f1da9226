#pragma once

// Central finite-difference gradient checking (64-bit, h = 1e-5 default).

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "coherent/tensor.hpp"

namespace gradcheck {

struct Slot {
    double* data;
    std::size_t size;
    const double* analytic;  // same length
    std::string name;
};

inline Slot slot(coherent::Tensor& value, const coherent::Tensor& grad, std::string name) {
    return {value.data(), value.size(), grad.data(), std::move(name)};
}

inline Slot slot(std::vector<double>& value, const std::vector<double>& grad, std::string name) {
    return {value.data(), value.size(), grad.data(), std::move(name)};
}

struct Report {
    double max_rel_err = 0.0;
    std::string worst;  // "<slot>[i] analytic=<a> fd=<f>"
};

// Perturbs every scalar in every slot and compares (f(x+h)-f(x-h))/2h against
// the provided analytic gradient. Relative error uses max(1,|a|,|fd|) as the
// denominator so near-zero gradients are compared absolutely.
inline Report run(const std::vector<Slot>& slots, const std::function<double()>& loss_fn,
                  double h = 1e-5) {
    Report report;
    for (const auto& s : slots) {
        for (std::size_t i = 0; i < s.size; ++i) {
            const double saved = s.data[i];
            s.data[i] = saved + h;
            const double lp = loss_fn();
            s.data[i] = saved - h;
            const double lm = loss_fn();
            s.data[i] = saved;
            const double fd = (lp - lm) / (2.0 * h);
            const double a = s.analytic[i];
            const double rel = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = s.name + "[" + std::to_string(i) + "] analytic=" +
                               std::to_string(a) + " fd=" + std::to_string(fd);
            }
        }
    }
    return report;
}

}  // namespace gradcheck
