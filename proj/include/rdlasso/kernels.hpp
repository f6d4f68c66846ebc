#pragma once

#include <array>
#include <cmath>
#include <string>
#include <string_view>

#include "rdlasso/error.hpp"

namespace rdlasso {

enum class KernelFamily { triangular, epanechnikov, uniform };

enum class Side { left, right, both };

/// Candidate readings of the variance constant C_S.
///
/// `boundary` is the variance of a one-sided local linear intercept,
///   [(K^2)_+^(0) (K_+^(2))^2 - 2 K_+^(1) K_+^(2) (K^2)_+^(1) + (K_+^(1))^2 (K^2)_+^(2)]
///     / [K_+^(2)/2 - (K_+^(1))^2]^2,
/// so that Var(tau_hat) ~ C_S (s2_plus + s2_minus) / (n h f_X(0)).
/// The two `printed_*` forms use the full-line (K^2)^(0) in the first term and
/// the same squared determinant; `printed_literal` has cross term
/// -2 (K^2)_+^(1) K_+^(1), `printed_k2` adds the missing K_+^(2) factor to it.
/// Both printed forms disagree with the Monte Carlo variance of the baseline
/// estimator (printed_literal is negative for the triangular kernel), so
/// `boundary` is the value returned by variance_constant().
enum class VarianceForm { boundary, printed_literal, printed_k2 };

/// Compactly supported symmetric kernel on [-1, 1] with cached moments.
class Kernel {
public:
    static constexpr int max_moment = 4;
    static constexpr int max_sq_moment = 2;

    explicit Kernel(KernelFamily family = KernelFamily::triangular) : family_(family) {
        for (int a = 0; a <= max_moment; ++a) right_[a] = closed_form_right(a, false);
        for (int a = 0; a <= max_sq_moment; ++a) right_sq_[a] = closed_form_right(a, true);
        c_bias_ = compute_bias_constant();
        c_var_ = compute_variance_constant(VarianceForm::boundary);
    }

    static Kernel from_name(std::string_view name) {
        if (name == "triangular") return Kernel(KernelFamily::triangular);
        if (name == "epanechnikov") return Kernel(KernelFamily::epanechnikov);
        if (name == "uniform") return Kernel(KernelFamily::uniform);
        throw Error(Errc::unknown_kernel,
                    "unknown kernel '" + std::string(name) +
                        "'; valid kernels are: triangular, epanechnikov, uniform");
    }

    KernelFamily family() const { return family_; }

    std::string_view name() const {
        switch (family_) {
        case KernelFamily::triangular: return "triangular";
        case KernelFamily::epanechnikov: return "epanechnikov";
        case KernelFamily::uniform: return "uniform";
        }
        return "triangular";
    }

    double operator()(double u) const { return eval(u); }

    double eval(double u) const {
        const double a = std::abs(u);
        if (a > 1.0) return 0.0;
        switch (family_) {
        case KernelFamily::triangular: return 1.0 - a;
        case KernelFamily::epanechnikov: return 0.75 * (1.0 - u * u);
        case KernelFamily::uniform: return 0.5;
        }
        return 0.0;
    }

    /// K_h(x) = K(x / h) / h.
    double scaled(double x, double h) const { return eval(x / h) / h; }

    /// Integral of u^a K(u)^s over the requested half line or the full line (s = 1 or 2).
    double moment(int a, Side side = Side::both, bool squared = false) const {
        const int limit = squared ? max_sq_moment : max_moment;
        if (a < 0 || a > limit)
            throw Error(Errc::invalid_argument, "unsupported kernel moment order " + std::to_string(a) +
                                                    (squared ? " for squared kernel" : ""));
        const double right = squared ? right_sq_[a] : right_[a];
        const double left = (a % 2 == 0) ? right : -right;
        switch (side) {
        case Side::right: return right;
        case Side::left: return left;
        case Side::both: return left + right;
        }
        return 0.0;
    }

    /// C_B.
    double bias_constant() const { return c_bias_; }

    /// C_S under the boundary reading.
    double variance_constant() const { return c_var_; }

    double variance_constant(VarianceForm form) const { return compute_variance_constant(form); }

    /// Ratio of this kernel's canonical bandwidth to the Gaussian one; rescales
    /// Gaussian rule-of-thumb bandwidths to this kernel.
    double canonical_bandwidth_ratio() const {
        const double roughness = moment(0, Side::both, true);
        const double mu2 = moment(2);
        const double delta = std::pow(roughness / (mu2 * mu2), 0.2);
        const double delta_gauss = std::pow(1.0 / (2.0 * std::sqrt(M_PI)), 0.2);
        return delta / delta_gauss;
    }

private:
    double closed_form_right(int a, bool squared) const {
        const double a1 = a + 1.0, a2 = a + 2.0, a3 = a + 3.0, a5 = a + 5.0;
        switch (family_) {
        case KernelFamily::triangular:
            // (1 - u) and (1 - u)^2 on [0, 1]
            return squared ? 1.0 / a1 - 2.0 / a2 + 1.0 / a3 : 1.0 / a1 - 1.0 / a2;
        case KernelFamily::epanechnikov:
            return squared ? 0.5625 * (1.0 / a1 - 2.0 / a3 + 1.0 / a5) : 0.75 * (1.0 / a1 - 1.0 / a3);
        case KernelFamily::uniform:
            return squared ? 0.25 / a1 : 0.5 / a1;
        }
        return 0.0;
    }

    double compute_bias_constant() const {
        const double k1 = right_[1], k2 = right_[2], k3 = right_[3];
        return (k3 - 2.0 * k1 * k2) / (k2 - 2.0 * k1 * k1);
    }

    double compute_variance_constant(VarianceForm form) const {
        const double k1 = right_[1], k2 = right_[2];
        const double s0 = right_sq_[0], s1 = right_sq_[1], s2 = right_sq_[2];
        switch (form) {
        case VarianceForm::boundary: {
            const double det = 0.5 * k2 - k1 * k1;
            return (s0 * k2 * k2 - 2.0 * k1 * k2 * s1 + k1 * k1 * s2) / (det * det);
        }
        case VarianceForm::printed_literal: {
            const double det = k1 * k1 - 0.5 * k2;
            return (2.0 * s0 * k2 * k2 + s2 * k1 * k1 - 2.0 * s1 * k1) / (det * det);
        }
        case VarianceForm::printed_k2: {
            const double det = k1 * k1 - 0.5 * k2;
            return (2.0 * s0 * k2 * k2 + s2 * k1 * k1 - 2.0 * s1 * k1 * k2) / (det * det);
        }
        }
        return 0.0;
    }

    KernelFamily family_;
    std::array<double, max_moment + 1> right_{};
    std::array<double, max_sq_moment + 1> right_sq_{};
    double c_bias_ = 0.0;
    double c_var_ = 0.0;
};

}  // namespace rdlasso
