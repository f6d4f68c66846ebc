#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rdlasso/dataset.hpp"
#include "rdlasso/error.hpp"
#include "rdlasso/kernels.hpp"

namespace rdlasso {

/// Kernel-weighted least squares fit of Y on V = (1, T, X/h, T X/h) and Z(J).
struct LocalFit {
    IndexSet subset;
    double h = 0.0;
    Eigen::Vector4d theta = Eigen::Vector4d::Zero();  // intercept, jump, slope, slope change
    Vector gamma;
    Vector residuals;         // all n rows; rows outside the window carry the raw residual
    Vector weights;           // K_h(X_i)
    std::vector<bool> in_window;
    Eigen::Index n_eff = 0;   // #{|X_i| <= h}
    Matrix gram;              // D' W D over the columns (V, Z(J))
    Matrix gram_inverse;

    double tau() const { return theta[1]; }
    Eigen::Index n_params() const { return 4 + static_cast<Eigen::Index>(subset.size()); }
};

namespace detail {

inline void check_subset(const Dataset& data, const IndexSet& subset) {
    for (std::size_t j = 0; j < subset.size(); ++j) {
        if (subset[j] < 0 || subset[j] >= data.p())
            throw Error(Errc::invalid_argument, "covariate index " + std::to_string(subset[j]) + " out of range");
        if (j > 0 && subset[j] <= subset[j - 1])
            throw Error(Errc::invalid_argument, "covariate subset must be sorted and distinct");
    }
}

inline void check_bandwidth(double h) {
    if (!(h > 0.0) || !std::isfinite(h))
        throw Error(Errc::invalid_argument, "bandwidth must be positive and finite");
}

inline Eigen::Vector4d v_row(double x, double h) {
    const double t = Dataset::treated(x) ? 1.0 : 0.0;
    return {1.0, t, x / h, t * x / h};
}

}  // namespace detail

/// Full design matrix D = (V, Z(J)) for all n rows.
inline Matrix local_design(const Dataset& data, const IndexSet& subset, double h) {
    const Eigen::Index s = static_cast<Eigen::Index>(subset.size());
    Matrix d(data.n(), 4 + s);
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        d.row(i).head<4>() = detail::v_row(data.x[i], h).transpose();
        for (Eigen::Index j = 0; j < s; ++j) d(i, 4 + j) = data.z(i, subset[static_cast<std::size_t>(j)]);
    }
    return d;
}

inline Eigen::Index count_in_window(const Vector& x, double h) {
    return (x.array().abs() <= h).count();
}

/// Linear adjustment estimator for a fixed covariate subset.
inline LocalFit fit_adjusted(const Dataset& data, const IndexSet& subset, double h, const Kernel& kernel) {
    detail::check_bandwidth(h);
    detail::check_subset(data, subset);

    LocalFit fit;
    fit.subset = subset;
    fit.h = h;
    const Eigen::Index n = data.n();
    const Eigen::Index k = 4 + static_cast<Eigen::Index>(subset.size());

    fit.weights.resize(n);
    fit.in_window.assign(static_cast<std::size_t>(n), false);
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < n; ++i) {
        fit.weights[i] = kernel.scaled(data.x[i], h);
        fit.in_window[static_cast<std::size_t>(i)] = std::abs(data.x[i]) <= h;
        if (fit.weights[i] > 0.0) rows.push_back(i);
    }
    fit.n_eff = count_in_window(data.x, h);
    if (fit.n_eff < k + 1)
        throw Error(Errc::too_few_observations,
                    std::to_string(fit.n_eff) + " observations within bandwidth " + std::to_string(h) +
                        ", need at least " + std::to_string(k + 1));

    const Matrix design = local_design(data, subset, h);
    Matrix dw(static_cast<Eigen::Index>(rows.size()), k);
    Vector yw(static_cast<Eigen::Index>(rows.size()));
    Matrix dr(static_cast<Eigen::Index>(rows.size()), k);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto i = rows[r];
        const auto ri = static_cast<Eigen::Index>(r);
        dr.row(ri) = design.row(i);
        dw.row(ri) = design.row(i) * fit.weights[i];
        yw[ri] = data.y[i] * fit.weights[i];
    }
    fit.gram = dr.transpose() * dw;
    const Vector rhs = dr.transpose() * yw;

    // Equilibrate before factorizing so the rank tolerance is scale free.
    const Vector scale = fit.gram.diagonal().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
    const Matrix scaled = scale.asDiagonal() * fit.gram * scale.asDiagonal();
    const Eigen::LDLT<Matrix> ldlt(scaled);
    const double pivot_floor = 1e-10 * scaled.diagonal().maxCoeff();
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= pivot_floor ||
        fit.gram.diagonal().minCoeff() <= 0.0)
        throw Error(Errc::rank_deficient,
                    "weighted design is singular at bandwidth " + std::to_string(h) +
                        " (bandwidth too small or covariates collinear)");

    const Vector coef = scale.asDiagonal() * ldlt.solve(scale.asDiagonal() * rhs);
    fit.gram_inverse =
        scale.asDiagonal() * ldlt.solve(Matrix::Identity(k, k)) * scale.asDiagonal();
    fit.theta = coef.head<4>();
    fit.gamma = coef.tail(k - 4);
    fit.residuals = data.y - design * coef;
    return fit;
}

/// Baseline local linear estimator without covariates.
inline LocalFit fit_baseline(const Dataset& data, double h, const Kernel& kernel) {
    return fit_adjusted(data, {}, h, kernel);
}

/// Coefficients on V from the partialled-out (Frisch-Waugh-Lovell) formula:
/// Y and each column of V are first regressed on Z(J) under kernel weights, and
/// the partialled outcome is then regressed on the partialled V. Uses
/// Householder QR throughout and is independent of fit_adjusted's normal
/// equations.
inline Eigen::Vector4d fwl_theta(const Dataset& data, const IndexSet& subset, double h, const Kernel& kernel) {
    detail::check_bandwidth(h);
    detail::check_subset(data, subset);
    const Eigen::Index s = static_cast<Eigen::Index>(subset.size());

    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < data.n(); ++i)
        if (kernel.scaled(data.x[i], h) > 0.0) rows.push_back(i);
    const auto m = static_cast<Eigen::Index>(rows.size());
    if (m < 4 + s + 1) throw Error(Errc::too_few_observations, "too few observations within bandwidth");

    Matrix vw(m, 4), zw(m, s);
    Vector yw(m);
    for (Eigen::Index r = 0; r < m; ++r) {
        const auto i = rows[static_cast<std::size_t>(r)];
        const double sw = std::sqrt(kernel.scaled(data.x[i], h));
        vw.row(r) = detail::v_row(data.x[i], h).transpose() * sw;
        for (Eigen::Index j = 0; j < s; ++j) zw(r, j) = data.z(i, subset[static_cast<std::size_t>(j)]) * sw;
        yw[r] = data.y[i] * sw;
    }

    if (s > 0) {
        Eigen::ColPivHouseholderQR<Matrix> qz(zw);
        qz.setThreshold(1e-10);
        if (qz.rank() < s) throw Error(Errc::rank_deficient, "Z(J)' K Z(J) is singular");
        yw -= zw * qz.solve(yw);
        vw -= zw * qz.solve(vw);
    }
    Eigen::ColPivHouseholderQR<Matrix> qv(vw);
    qv.setThreshold(1e-10);
    if (qv.rank() < 4) throw Error(Errc::rank_deficient, "partialled design on V is singular");
    return qv.solve(yw);
}

}  // namespace rdlasso
