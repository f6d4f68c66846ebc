#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rdlasso/dataset.hpp"
#include "rdlasso/error.hpp"
#include "rdlasso/kernels.hpp"
#include "rdlasso/local_linear.hpp"

namespace rdlasso {

/// Penalty loadings and the local covariate means used for centering.
struct PenaltyWeights {
    Vector w;     // loading per covariate, > 0
    double b = 0.0;
    Vector mu_z;  // (1/n) sum Z_i K_b(X_i)
};

struct SelectionResult {
    Eigen::Vector4d theta_tilde = Eigen::Vector4d::Zero();
    Vector gamma_tilde;
    IndexSet selected;
    double lambda = 0.0;
    double b = 0.0;
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> objective_trace;  // one entry per sweep
};

struct LassoOptions {
    double tol = 1e-9;
    int max_iter = 10000;
};

struct KktReport {
    Vector violations;              // one per covariate
    Eigen::Vector4d theta_score = Eigen::Vector4d::Zero();
    double max_violation() const { return violations.size() ? violations.maxCoeff() : 0.0; }
};

/// (1/n) sum_i Z_i K_b(X_i); the centering used by the localized Lasso.
inline Vector local_means(const Dataset& data, double b, const Kernel& kernel) {
    Vector kb(data.n());
    for (Eigen::Index i = 0; i < data.n(); ++i) kb[i] = kernel.scaled(data.x[i], b);
    return data.z.transpose() * kb / static_cast<double>(data.n());
}

/// Local mean and scale of each covariate at pilot bandwidth b, computed from
///   mu_k  = (1/n) sum_i Z_ik K_b(X_i)
///   w_k^2 = (b/n) sum_i (K_b(X_i) Z_ik - mu_k)^2.
inline PenaltyWeights standardization_weights(const Dataset& data, double b, const Kernel& kernel) {
    detail::check_bandwidth(b);
    const Eigen::Index n = data.n(), p = data.p();
    if (count_in_window(data.x, b) < 2)
        throw Error(Errc::too_few_observations, "fewer than two observations within the pilot bandwidth");

    Vector kb(n);
    for (Eigen::Index i = 0; i < n; ++i) kb[i] = kernel.scaled(data.x[i], b);

    PenaltyWeights out;
    out.b = b;
    const double nn = static_cast<double>(n);
    out.mu_z = data.z.transpose() * kb / nn;
    out.w.resize(p);
    for (Eigen::Index k = 0; k < p; ++k) {
        const double ss = ((data.z.col(k).array() * kb.array()) - out.mu_z[k]).square().sum();
        out.w[k] = std::sqrt(b / nn * ss);
        if (!(out.w[k] >= 1e-12))
            throw Error(Errc::degenerate_covariate,
                        "covariate " + std::to_string(k) + " has zero local scale at bandwidth " + std::to_string(b));
    }
    return out;
}

namespace detail {

inline double soft_threshold(double c, double t) {
    if (c > t) return c - t;
    if (c < -t) return c + t;
    return 0.0;
}

/// Localized, partially penalized Lasso
///   sum_i K_b(X_i) (y_i - V_i'theta - (Z_i - mu)'gamma)^2 + lambda sum_k l_k |gamma_k|
/// restricted to rows with positive kernel weight.
///
/// The centered covariates are orthogonalized against V under the kernel
/// weights, Zc = Zo + V M. With Zo orthogonal to V the exact theta-block solve
/// after each coordinate sweep is theta = theta_base - M gamma and leaves the
/// residual unchanged, so the sweeps only touch gamma. The objective value and
/// the minimizer are those of the original parametrization.
class LassoProblem {
public:
    LassoProblem(const Dataset& data, const Vector& response, double b, const Kernel& kernel, const Vector& mu,
                 bool with_v = true, const std::vector<Eigen::Index>* row_subset = nullptr)
        : with_v_(with_v), p_(data.p()) {
        check_bandwidth(b);
        std::vector<Eigen::Index> candidates;
        if (row_subset) {
            candidates = *row_subset;
        } else {
            candidates.resize(static_cast<std::size_t>(data.n()));
            for (Eigen::Index i = 0; i < data.n(); ++i) candidates[static_cast<std::size_t>(i)] = i;
        }
        for (auto i : candidates)
            if (kernel.scaled(data.x[i], b) > 0.0) rows_.push_back(i);
        const auto m = static_cast<Eigen::Index>(rows_.size());
        const Eigen::Index q = with_v ? 4 : 0;
        if (m < q + 1) throw Error(Errc::too_few_observations, "too few observations within the pilot bandwidth");

        w_.resize(m);
        y_.resize(m);
        v_.resize(m, q);
        zc_.resize(m, p_);
        for (Eigen::Index r = 0; r < m; ++r) {
            const auto i = rows_[static_cast<std::size_t>(r)];
            w_[r] = kernel.scaled(data.x[i], b);
            y_[r] = response[i];
            if (with_v) v_.row(r) = v_row(data.x[i], b).transpose();
            zc_.row(r) = data.z.row(i) - mu.transpose();
        }

        if (with_v) {
            const Matrix vwv = v_.transpose() * w_.asDiagonal() * v_;
            vwv_ldlt_.compute(vwv);
            const Vector vd = vwv_ldlt_.vectorD();
            if (vwv_ldlt_.info() != Eigen::Success || vd.minCoeff() <= 1e-12 * vwv.diagonal().maxCoeff())
                throw Error(Errc::rank_deficient, "local design on V is singular at the pilot bandwidth");
            theta_base_ = vwv_ldlt_.solve(v_.transpose() * (w_.asDiagonal() * y_));
            proj_ = vwv_ldlt_.solve(v_.transpose() * (w_.asDiagonal() * zc_));
            zo_ = zc_ - v_ * proj_;
            r_base_ = y_ - v_ * theta_base_;
        } else {
            theta_base_ = Vector::Zero(0);
            proj_ = Matrix::Zero(0, p_);
            zo_ = zc_;
            r_base_ = y_;
        }
        wzo_ = w_.asDiagonal() * zo_;
        a_ = (zo_.array() * wzo_.array()).colwise().sum().transpose();
        const double amax = a_.size() ? a_.maxCoeff() : 0.0;
        a_floor_ = 1e-14 * std::max(amax, 1e-300);
        scale_ = std::sqrt((w_.array() * r_base_.array().square()).sum());
    }

    Eigen::Index p() const { return p_; }
    Eigen::Index rows() const { return static_cast<Eigen::Index>(rows_.size()); }
    const std::vector<Eigen::Index>& row_index() const { return rows_; }
    const Vector& weights() const { return w_; }
    const Matrix& centered() const { return zc_; }

    /// Smallest lambda for which gamma = 0 satisfies the optimality conditions.
    double lambda_max(const Vector& loadings) const {
        const Vector g = 2.0 * (wzo_.transpose() * r_base_).cwiseAbs();
        double lmax = 0.0;
        for (Eigen::Index k = 0; k < p_; ++k)
            if (loadings[k] > 0.0) lmax = std::max(lmax, g[k] / loadings[k]);
        return lmax;
    }

    Vector theta(const Vector& gamma) const {
        if (!with_v_) return Vector::Zero(0);
        return theta_base_ - proj_ * gamma;
    }

    /// In-window residuals y - V theta - Zc gamma at the block-optimal theta.
    Vector residuals(const Vector& gamma) const { return r_base_ - zo_ * gamma; }

    double objective(const Vector& gamma, const Vector& r, double lambda, const Vector& loadings) const {
        double pen = 0.0;
        for (Eigen::Index k = 0; k < p_; ++k)
            if (gamma[k] != 0.0) pen += loadings[k] * std::abs(gamma[k]);
        return (w_.array() * r.array().square()).sum() + (pen == 0.0 ? 0.0 : lambda * pen);
    }

    SelectionResult solve(double lambda, const Vector& loadings, const LassoOptions& opts,
                          const Vector* warm = nullptr) const {
        if (!(lambda >= 0.0)) throw Error(Errc::invalid_argument, "lambda must be non-negative");
        if (loadings.size() != p_) throw Error(Errc::invalid_argument, "penalty loadings have the wrong length");

        SelectionResult res;
        res.lambda = lambda;
        Vector gamma = warm ? *warm : Vector::Zero(p_);
        if (gamma.size() != p_) gamma = Vector::Zero(p_);
        Vector r = residuals(gamma);
        const double threshold = opts.tol * std::max(scale_, 0.0);

        auto sweep = [&](bool active_only) {
            double max_change = 0.0;
            for (Eigen::Index k = 0; k < p_; ++k) {
                if (active_only && gamma[k] == 0.0) continue;
                double next = 0.0;
                if (a_[k] > a_floor_ && std::isfinite(lambda)) {
                    const double c = wzo_.col(k).dot(r) + a_[k] * gamma[k];
                    next = soft_threshold(c, 0.5 * lambda * loadings[k]) / a_[k];
                    if (std::abs(next) < 1e-12) next = 0.0;
                }
                const double delta = next - gamma[k];
                if (delta != 0.0) {
                    r.noalias() -= zo_.col(k) * delta;
                    gamma[k] = next;
                    max_change = std::max(max_change, std::abs(delta) * std::sqrt(a_[k]));
                }
            }
            res.objective_trace.push_back(objective(gamma, r, lambda, loadings));
            ++res.iterations;
            return max_change;
        };

        bool converged = false;
        while (res.iterations < opts.max_iter && !converged) {
            const double full_change = sweep(false);
            if (full_change <= threshold) {
                converged = true;
                break;
            }
            if (res.iterations < 2) continue;
            // active-set passes, then back to a full verification sweep
            while (res.iterations < opts.max_iter) {
                if (sweep(true) <= threshold) break;
            }
        }

        res.converged = converged;
        res.gamma_tilde = gamma;
        const Vector th = theta(gamma);
        if (with_v_) res.theta_tilde = th.head<4>();
        res.objective = objective(gamma, r, lambda, loadings);
        for (Eigen::Index k = 0; k < p_; ++k)
            if (gamma[k] != 0.0) res.selected.push_back(static_cast<int>(k));
        return res;
    }

private:
    bool with_v_;
    Eigen::Index p_;
    std::vector<Eigen::Index> rows_;
    Vector w_, y_;
    Matrix v_, zc_, zo_, wzo_, proj_;
    Eigen::LDLT<Matrix> vwv_ldlt_;
    Vector theta_base_, r_base_, a_;
    double a_floor_ = 0.0;
    double scale_ = 0.0;
};

}  // namespace detail

/// First-step localized Lasso at pilot bandwidth b.
inline SelectionResult local_lasso(const Dataset& data, double b, double lambda, const Kernel& kernel,
                                   const PenaltyWeights& weights, const LassoOptions& opts = {},
                                   const Vector* warm = nullptr) {
    if (weights.w.size() != data.p() || weights.mu_z.size() != data.p())
        throw Error(Errc::invalid_argument, "penalty weights do not match the covariate dimension");
    for (Eigen::Index k = 0; k < weights.w.size(); ++k)
        if (!(weights.w[k] > 0.0))
            throw Error(Errc::degenerate_covariate, "non-positive penalty loading for covariate " + std::to_string(k));
    const detail::LassoProblem problem(data, data.y, b, kernel, weights.mu_z);
    SelectionResult res = problem.solve(lambda, weights.w, opts, warm);
    res.b = b;
    return res;
}

/// Optimality certificate of a Lasso solution, evaluated in the original
/// (centered, non-orthogonalized) parametrization.
inline KktReport kkt_residuals(const Dataset& data, const SelectionResult& result, const Kernel& kernel,
                               const PenaltyWeights& weights) {
    const Eigen::Index p = data.p();
    Vector score = Vector::Zero(p);
    KktReport rep;
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        const double w = kernel.scaled(data.x[i], result.b);
        if (w == 0.0) continue;
        const Eigen::Vector4d v = detail::v_row(data.x[i], result.b);
        const Vector zc = data.z.row(i).transpose() - weights.mu_z;
        const double r = data.y[i] - v.dot(result.theta_tilde) - zc.dot(result.gamma_tilde);
        score += 2.0 * w * r * zc;
        rep.theta_score += 2.0 * w * r * v;
    }
    rep.violations.resize(p);
    for (Eigen::Index k = 0; k < p; ++k) {
        const double bound = result.lambda * weights.w[k];
        const double g = std::abs(score[k]);
        rep.violations[k] = result.gamma_tilde[k] != 0.0 ? std::abs(g - bound) : std::max(0.0, g - bound);
    }
    return rep;
}

/// Union of the outcome Lasso support and the support of a Lasso of the
/// treatment on the centered covariates alone.
inline IndexSet double_selection(const Dataset& data, double b, double lambda_y, double lambda_t,
                                 const Kernel& kernel, const PenaltyWeights& weights,
                                 const LassoOptions& opts = {}) {
    const SelectionResult outcome = local_lasso(data, b, lambda_y, kernel, weights, opts);
    const Vector t = data.t_obs ? *data.t_obs : data.sharp_treatment();
    const detail::LassoProblem treat(data, t, b, kernel, weights.mu_z, /*with_v=*/false);
    const SelectionResult treatment = treat.solve(lambda_t, weights.w, opts);
    IndexSet out;
    std::set_union(outcome.selected.begin(), outcome.selected.end(), treatment.selected.begin(),
                   treatment.selected.end(), std::back_inserter(out));
    return out;
}

}  // namespace rdlasso
