#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "fairdiff/error.hpp"

namespace fairdiff {

/// Bias-corrected adaptive-moment optimizer state.
struct AdamState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step_count = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;

    AdamState() = default;
    explicit AdamState(double lr, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8)
        : learning_rate(lr), beta1(b1), beta2(b2), epsilon(eps) {}

    /// Applies one update. A coordinate whose gradient is exactly zero only
    /// decays its moments; its parameter is left untouched. Moment buffers are shaped lazily on first use and
    /// must keep matching the parameter views afterwards.
    void step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads) {
        if (params.size() != grads.size()) throw ShapeError("adam: parameter/gradient group count mismatch");
        for (std::size_t g = 0; g < params.size(); ++g) {
            if (params[g].size() != grads[g].size()) throw ShapeError("adam: parameter/gradient size mismatch");
            for (double v : grads[g])
                if (!std::isfinite(v)) throw NumericError("adam: non-finite gradient");
        }
        if (first_moment.empty()) {
            for (const auto& p : params) {
                first_moment.emplace_back(p.size(), 0.0);
                second_moment.emplace_back(p.size(), 0.0);
            }
        } else {
            if (first_moment.size() != params.size()) throw ShapeError("adam: state shape differs from parameters");
            for (std::size_t g = 0; g < params.size(); ++g)
                if (first_moment[g].size() != params[g].size()) throw ShapeError("adam: state shape differs from parameters");
        }

        ++step_count;
        const double t = static_cast<double>(step_count);
        const double c1 = 1.0 - std::pow(beta1, t);
        const double c2 = 1.0 - std::pow(beta2, t);
        for (std::size_t g = 0; g < params.size(); ++g) {
            auto p = params[g];
            auto gr = grads[g];
            auto& m = first_moment[g];
            auto& v = second_moment[g];
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = beta1 * m[i] + (1.0 - beta1) * gr[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * gr[i] * gr[i];
                if (gr[i] == 0.0) continue;
                const double m_hat = m[i] / c1;
                const double v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + epsilon);
            }
        }
    }
};

}  // namespace fairdiff
