#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "confshare/tensor.hpp"

namespace confshare {

/// central2: (f(θ+ε) − f(θ−ε)) / 2ε, error O(ε²).
/// central4: (8(f(θ+ε) − f(θ−ε)) − (f(θ+2ε) − f(θ−2ε))) / 12ε, error O(ε⁴).
enum class FiniteDiffScheme { central2, central4 };

/// Central-difference gradient estimate for every coordinate. Differences are
/// formed in whatever precision f returns. Throws NonFiniteError if any
/// evaluation of f is not finite.
template <class F>
std::vector<double> finite_diff_grad(F&& f, std::span<const double> theta, double eps,
                                     FiniteDiffScheme scheme = FiniteDiffScheme::central2) {
    using R = decltype(f(std::span<const double>{}));
    if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
    std::vector<double> point(theta.begin(), theta.end());
    std::vector<double> grad(point.size(), 0.0);
    for (size_t i = 0; i < point.size(); ++i) {
        const double orig = point[i];
        auto at = [&](double step) -> R {
            point[i] = orig + step;
            const R v = f(std::span<const double>(point));
            if (!std::isfinite(v)) {
                throw NonFiniteError("finite_diff_grad: non-finite evaluation at coordinate " + std::to_string(i));
            }
            return v;
        };
        const R central = at(eps) - at(-eps);
        if (scheme == FiniteDiffScheme::central2) {
            grad[i] = static_cast<double>(central / (R(2) * R(eps)));
        } else {
            const R wide = at(2.0 * eps) - at(-2.0 * eps);
            grad[i] = static_cast<double>((R(8) * central - wide) / (R(12) * R(eps)));
        }
        point[i] = orig;
    }
    return grad;
}

/// |a − b| / max(|a|, |b|, 1e-8).
double relative_error(double a, double b);

}  // namespace confshare
