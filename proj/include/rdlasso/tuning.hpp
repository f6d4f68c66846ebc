#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rdlasso/dataset.hpp"
#include "rdlasso/error.hpp"
#include "rdlasso/kernels.hpp"
#include "rdlasso/local_linear.hpp"
#include "rdlasso/selection.hpp"
#include "rdlasso/stats.hpp"

namespace rdlasso {

enum class LambdaMethod { bch, lv, cv };

/// Normalization of the BCH penalty level against the sum-form objective.
/// `sqrt_nb` is 2c sqrt(n b) q; `sqrt_n_over_b` is 2c sqrt(n / b) q, which is
/// the level at which the kernel-weighted score 2 sum K_b(X_i) Z_ik r_i is
/// compared with lambda times the loading.
enum class BchScale { sqrt_n_over_b, sqrt_nb };

/// Placement of the standardization weights in the LV bootstrap statistic.
enum class LvWeighting { divide, multiply };

struct BchConfig {
    double c = 1.1;
    double gamma = 0.05;
    double nu = 1e-5;
    int max_rounds = 10;
    BchScale scale = BchScale::sqrt_n_over_b;
};

struct LvConfig {
    int grid_size = 0;  // M; 0 means 5 p
    int draws = 100;    // L
    double alpha = 0.05;
    LvWeighting weighting = LvWeighting::divide;
    bool upper_quantile = true;  // q_alpha is the (1 - alpha) quantile of the bootstrap maxima
};

struct CvConfig {
    int folds = 10;
    int grid_size = 100;
};

struct TuningConfig {
    BchConfig bch;
    LvConfig lv;
    CvConfig cv;
    std::uint64_t rng_seed = 0;
    LassoOptions lasso;
    double bandwidth_regularization = 3.0;  // weight on Var(m''_+ - m''_-) in the plug-in bandwidths

    void validate() const {
        if (!(bch.c > 1.0)) throw Error(Errc::invalid_argument, "BCH constant c must exceed 1");
        if (!(bch.gamma > 0.0 && bch.gamma < 1.0)) throw Error(Errc::invalid_argument, "BCH gamma must lie in (0,1)");
        if (!(bch.nu > 0.0) || bch.max_rounds < 1) throw Error(Errc::invalid_argument, "invalid BCH iteration settings");
        if (!(lv.alpha > 0.0 && lv.alpha < 1.0)) throw Error(Errc::invalid_argument, "LV alpha must lie in (0,1)");
        if (lv.grid_size < 0 || lv.draws < 1) throw Error(Errc::invalid_argument, "LV grid size and draws must be >= 1");
        if (cv.folds < 2) throw Error(Errc::invalid_argument, "cross-validation needs at least two folds");
        if (cv.grid_size < 1) throw Error(Errc::invalid_argument, "cross-validation grid must be non-empty");
        if (!(bandwidth_regularization >= 0.0))
            throw Error(Errc::invalid_argument, "bandwidth regularization weight must be >= 0");
    }
};

/// Geometric grid lambda_1 < ... < lambda_M = lambda_max spanning four decades.
inline std::vector<double> lambda_grid(double lambda_max, int count) {
    if (count < 1) throw Error(Errc::invalid_argument, "lambda grid needs at least one point");
    std::vector<double> grid(static_cast<std::size_t>(count));
    if (count == 1 || !(lambda_max > 0.0)) {
        std::fill(grid.begin(), grid.end(), lambda_max);
        return grid;
    }
    const double lo = std::log(lambda_max * 1e-4), hi = std::log(lambda_max);
    for (int m = 0; m < count; ++m)
        grid[static_cast<std::size_t>(m)] = std::exp(lo + (hi - lo) * m / (count - 1));
    grid.back() = lambda_max;
    return grid;
}

// ---------------------------------------------------------------- BCH

struct BchResult {
    double lambda = 0.0;
    Vector loadings;
    int rounds = 0;
    SelectionResult selection;  // Lasso at the final loadings
};

inline double bch_lambda_level(Eigen::Index n, double b, Eigen::Index p, const BchConfig& cfg) {
    if (p < 1) throw Error(Errc::nonfinite_quantile, "BCH penalty needs at least one covariate");
    const double q = stats::normal_quantile(1.0 - cfg.gamma / (2.0 * static_cast<double>(p)));
    const double nn = static_cast<double>(n);
    const double s = cfg.scale == BchScale::sqrt_nb ? std::sqrt(nn * b) : std::sqrt(nn / b);
    return 2.0 * cfg.c * s * q;
}

namespace detail {

/// sqrt((1/(n b)) sum_i K(X_i/b)^2 (Zc_ik r_i)^2) over the window rows of `problem`,
/// with Zc the locally centered covariates.
inline Vector bch_loadings(const Dataset& data, const LassoProblem& problem, const Vector& resid, double b) {
    const Eigen::Index p = data.p();
    const auto& rows = problem.row_index();
    const Vector& w = problem.weights();  // K(X/b)/b
    Vector acc = Vector::Zero(p);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto ri = static_cast<Eigen::Index>(r);
        const double kk = w[ri] * b;
        const double f = kk * kk * resid[ri] * resid[ri];
        acc += f * problem.centered().row(ri).transpose().cwiseAbs2();
    }
    const Vector out = (acc / (static_cast<double>(data.n()) * b)).cwiseSqrt();
    for (Eigen::Index k = 0; k < p; ++k)
        if (!(out[k] > 1e-12))
            throw Error(Errc::degenerate_covariate,
                        "BCH loading for covariate " + std::to_string(k) + " is zero at bandwidth " + std::to_string(b));
    return out;
}

}  // namespace detail

/// Iterated plug-in penalty with data-driven loadings.
inline BchResult lambda_bch(const Dataset& data, double b, const Kernel& kernel, const TuningConfig& cfg) {
    cfg.validate();
    const Eigen::Index n = data.n(), p = data.p();
    BchResult out;
    out.lambda = bch_lambda_level(n, b, p, cfg.bch);

    const Vector mu = local_means(data, b, kernel);
    const detail::LassoProblem problem(data, data.y, b, kernel, mu);
    const double nb = static_cast<double>(n) * b;

    // residuals of the baseline local linear fit are the gamma = 0 residuals
    Vector resid = problem.residuals(Vector::Zero(p));
    Vector loadings = detail::bch_loadings(data, problem, resid, b);
    Vector warm = Vector::Zero(p);
    for (int round = 1; round <= cfg.bch.max_rounds; ++round) {
        out.rounds = round;
        SelectionResult sel = problem.solve(out.lambda, loadings, cfg.lasso, &warm);
        warm = sel.gamma_tilde;
        resid = problem.residuals(sel.gamma_tilde);
        const double dof = nb - static_cast<double>(sel.selected.size()) - 4.0;
        if (!(dof > 0.0))
            throw Error(Errc::too_few_observations, "n b does not exceed the number of selected parameters");
        const Vector next = detail::bch_loadings(data, problem, resid, b) * std::sqrt(nb / dof);
        const double change = (next - loadings).cwiseAbs().maxCoeff();
        loadings = next;
        if (change < cfg.bch.nu) break;
    }
    out.loadings = loadings;
    out.selection = problem.solve(out.lambda, loadings, cfg.lasso, &warm);
    out.selection.b = b;
    return out;
}

// ---------------------------------------------------------------- LV

struct LvResult {
    double lambda = 0.0;
    int index = 0;                // 0-based position in grid
    std::vector<double> grid;
    std::vector<double> quantiles;  // q_alpha on the sum-form scale; NaN where not evaluated
};

/// Bootstrap max-statistic rule for lambda. The statistic
/// max_k |(2/(n b)) sum_i w_k^{+-1} K(X_i/b) Z_ik r_i(lambda) e_i| is multiplied by n
/// to put it on the scale of the sum-form objective before it is compared
/// with the grid value.
inline LvResult lambda_lv(const Dataset& data, double b, const Kernel& kernel, const PenaltyWeights& weights,
                          const TuningConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const Eigen::Index n = data.n(), p = data.p();
    const int grid_size = cfg.lv.grid_size > 0 ? cfg.lv.grid_size : static_cast<int>(5 * p);
    if (grid_size < 2) throw Error(Errc::invalid_argument, "LV grid needs at least two values");

    const detail::LassoProblem problem(data, data.y, b, kernel, weights.mu_z);
    LvResult out;
    out.grid = lambda_grid(problem.lambda_max(weights.w), grid_size);
    out.quantiles.assign(out.grid.size(), std::numeric_limits<double>::quiet_NaN());

    const auto m = problem.rows();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix e(m, cfg.lv.draws);
    for (Eigen::Index l = 0; l < e.cols(); ++l)
        for (Eigen::Index r = 0; r < m; ++r) e(r, l) = normal(rng);

    // K(X_i/b) (Z_ik - mu_k) with the loading factor applied, rows x p
    const Vector factor = cfg.lv.weighting == LvWeighting::divide ? Vector(weights.w.cwiseInverse()) : weights.w;
    const Matrix base = (problem.weights() * b).asDiagonal() * problem.centered() * factor.asDiagonal();
    const double scale = 2.0 / (static_cast<double>(n) * b) * static_cast<double>(n);

    Vector warm = Vector::Zero(p);
    int chosen = 0;
    for (int idx = grid_size - 1; idx >= 0; --idx) {
        const double lam = out.grid[static_cast<std::size_t>(idx)];
        const SelectionResult sel = problem.solve(lam, weights.w, cfg.lasso, &warm);
        warm = sel.gamma_tilde;
        const Vector resid = problem.residuals(sel.gamma_tilde);
        const Matrix stat = (base.transpose() * (resid.asDiagonal() * e)).cwiseAbs();  // p x L
        std::vector<double> maxima(static_cast<std::size_t>(cfg.lv.draws));
        for (Eigen::Index l = 0; l < stat.cols(); ++l)
            maxima[static_cast<std::size_t>(l)] = scale * (p > 0 ? stat.col(l).maxCoeff() : 0.0);
        const double q = stats::quantile(maxima, cfg.lv.upper_quantile ? 1.0 - cfg.lv.alpha : cfg.lv.alpha);
        out.quantiles[static_cast<std::size_t>(idx)] = q;
        if (q > lam) {
            chosen = idx == grid_size - 1 ? idx : idx + 1;
            break;
        }
        chosen = idx;
    }
    out.index = chosen;
    out.lambda = out.grid[static_cast<std::size_t>(chosen)];
    return out;
}

// ---------------------------------------------------------------- CV

struct CvResult {
    double lambda = 0.0;
    int index = 0;
    std::vector<double> grid;
    std::vector<double> cv_loss;  // mean out-of-fold loss per grid value
};

/// Fold labels for the rows with |X_i| <= b, stratified by side of the cutoff;
/// -1 marks rows outside the window.
inline std::vector<int> stratified_folds(const Vector& x, double b, int folds, std::uint64_t seed) {
    std::vector<int> label(static_cast<std::size_t>(x.size()), -1);
    std::mt19937_64 rng(seed);
    for (int side = 0; side < 2; ++side) {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index i = 0; i < x.size(); ++i)
            if (std::abs(x[i]) <= b && (Dataset::treated(x[i]) ? 1 : 0) == side) idx.push_back(i);
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t j = 0; j < idx.size(); ++j) label[static_cast<std::size_t>(idx[j])] = static_cast<int>(j % folds);
    }
    return label;
}

inline CvResult lambda_cv(const Dataset& data, double b, const Kernel& kernel, const PenaltyWeights& weights,
                          const TuningConfig& cfg, const std::vector<int>& fold_of) {
    cfg.validate();
    const Eigen::Index p = data.p();
    const int folds = cfg.cv.folds;
    if (static_cast<Eigen::Index>(fold_of.size()) != data.n())
        throw Error(Errc::invalid_argument, "fold labels do not match the sample size");

    const detail::LassoProblem full(data, data.y, b, kernel, weights.mu_z);
    CvResult out;
    out.grid = lambda_grid(full.lambda_max(weights.w), cfg.cv.grid_size);
    out.cv_loss.assign(out.grid.size(), 0.0);

    for (int f = 0; f < folds; ++f) {
        std::vector<Eigen::Index> train, test;
        for (Eigen::Index i = 0; i < data.n(); ++i) {
            const int lab = fold_of[static_cast<std::size_t>(i)];
            if (lab < 0 || std::abs(data.x[i]) > b) continue;
            (lab == f ? test : train).push_back(i);
        }
        if (test.empty())
            throw Error(Errc::too_few_observations, "cross-validation fold " + std::to_string(f) + " is empty");
        const detail::LassoProblem problem(data, data.y, b, kernel, weights.mu_z, true, &train);

        const auto nt = static_cast<Eigen::Index>(test.size());
        Matrix vt(nt, 4), zt(nt, p);
        Vector yt(nt), wt(nt);
        for (Eigen::Index r = 0; r < nt; ++r) {
            const auto i = test[static_cast<std::size_t>(r)];
            vt.row(r) = detail::v_row(data.x[i], b).transpose();
            zt.row(r) = data.z.row(i) - weights.mu_z.transpose();
            yt[r] = data.y[i];
            wt[r] = kernel.scaled(data.x[i], b);
        }

        // The path stops once the training fit saturates (glmnet's rule: 99.9% of
        // the weighted null deviance explained, or as many covariates as free
        // rows); smaller penalties are then excluded for every fold.
        const double null_dev = (problem.weights().array() * problem.residuals(Vector::Zero(p)).array().square()).sum();
        const auto max_active = static_cast<std::size_t>(std::max<Eigen::Index>(problem.rows() - 5, 1));
        Vector warm = Vector::Zero(p);
        bool saturated = false;
        for (int idx = static_cast<int>(out.grid.size()) - 1; idx >= 0; --idx) {
            auto& loss = out.cv_loss[static_cast<std::size_t>(idx)];
            if (saturated) {
                loss = std::numeric_limits<double>::infinity();
                continue;
            }
            const SelectionResult sel = problem.solve(out.grid[static_cast<std::size_t>(idx)], weights.w, cfg.lasso, &warm);
            warm = sel.gamma_tilde;
            const Vector err = yt - vt * sel.theta_tilde - zt * sel.gamma_tilde;
            loss += (wt.array() * err.array().square()).sum() / folds;
            const Vector fit_resid = problem.residuals(sel.gamma_tilde);
            const double dev = (problem.weights().array() * fit_resid.array().square()).sum();
            saturated = dev <= 1e-3 * null_dev || sel.selected.size() >= max_active;
        }
    }
    // ties resolved towards the larger penalty
    int best = static_cast<int>(out.grid.size()) - 1;
    for (int idx = best; idx >= 0; --idx)
        if (out.cv_loss[static_cast<std::size_t>(idx)] < out.cv_loss[static_cast<std::size_t>(best)]) best = idx;
    out.index = best;
    out.lambda = out.grid[static_cast<std::size_t>(best)];
    return out;
}

inline CvResult lambda_cv(const Dataset& data, double b, const Kernel& kernel, const PenaltyWeights& weights,
                          const TuningConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    return lambda_cv(data, b, kernel, weights, cfg, stratified_folds(data.x, b, cfg.cv.folds, seed));
}

// ---------------------------------------------------------------- bandwidths

struct PilotDiagnostics {
    double bandwidth = 0.0;
    double curvature_left = 0.0;   // second derivative at 0 from the left quartic fit
    double curvature_right = 0.0;
    double curvature_jump_var = 0.0;
    double bias = 0.0;             // (C_B/2)(m''_+ - m''_-)
    double regularization = 0.0;
    double var_left = 0.0;
    double var_right = 0.0;
    double density = 0.0;
};

namespace detail {

struct QuarticFit {
    double curvature = 0.0;
    double curvature_var = 0.0;
    double resid_var = 0.0;
};

inline QuarticFit quartic_fit(const Dataset& data, bool right) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < data.n(); ++i)
        if (Dataset::treated(data.x[i]) == right) rows.push_back(i);
    const auto m = static_cast<Eigen::Index>(rows.size());
    if (m < 10)
        throw Error(Errc::too_few_observations,
                    std::string("fewer than 10 observations ") + (right ? "right" : "left") + " of the cutoff");
    Matrix a(m, 5);
    Vector y(m);
    for (Eigen::Index r = 0; r < m; ++r) {
        const double x = data.x[rows[static_cast<std::size_t>(r)]];
        a.row(r) << 1.0, x, x * x, x * x * x, x * x * x * x;
        y[r] = data.y[rows[static_cast<std::size_t>(r)]];
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(a);
    if (qr.rank() < 5) throw Error(Errc::rank_deficient, "quartic pilot fit is singular");
    const Vector beta = qr.solve(y);
    QuarticFit out;
    out.resid_var = (y - a * beta).squaredNorm() / static_cast<double>(m - 5);
    const Matrix ata_inv = (a.transpose() * a).ldlt().solve(Matrix::Identity(5, 5));
    out.curvature = 2.0 * beta[2];
    out.curvature_var = 4.0 * out.resid_var * ata_inv(2, 2);
    return out;
}

}  // namespace detail

/// MSE-optimal plug-in bandwidth for the baseline estimator,
///   b = [S^2 / (4 B^2 n)]^(1/5),  B = (C_B/2)(m''_+ - m''_-),
///   S^2 = C_S (s2_+ + s2_-) / f_X(0),
/// with curvatures from one-sided global quartic fits and B^2 regularized by
/// reg_weight (C_B/2)^2 Var(m''_+ - m''_-).
inline PilotDiagnostics pilot_bandwidth_diagnostics(const Dataset& data, const Kernel& kernel,
                                                    double reg_weight = 3.0) {
    if (!(reg_weight >= 0.0)) throw Error(Errc::invalid_argument, "bandwidth regularization weight must be >= 0");
    const Eigen::Index n = data.n();
    if (n < 50) throw Error(Errc::too_few_observations, "plug-in bandwidth needs at least 50 observations");
    const auto left = detail::quartic_fit(data, false);
    const auto right = detail::quartic_fit(data, true);

    PilotDiagnostics d;
    d.curvature_left = left.curvature;
    d.curvature_right = right.curvature;
    d.curvature_jump_var = left.curvature_var + right.curvature_var;
    d.var_left = left.resid_var;
    d.var_right = right.resid_var;
    d.density = stats::density_at_cutoff(data.x, kernel);

    const double half_cb = 0.5 * kernel.bias_constant();
    d.bias = half_cb * (right.curvature - left.curvature);
    d.regularization = reg_weight * half_cb * half_cb * d.curvature_jump_var;
    const double s2 = kernel.variance_constant() * (d.var_left + d.var_right) / d.density;
    const double denom = 4.0 * (d.bias * d.bias + d.regularization) * static_cast<double>(n);
    const double span = data.x.cwiseAbs().maxCoeff();
    if (!(denom > 0.0) || !(s2 > 0.0)) {
        d.bandwidth = span;
    } else {
        d.bandwidth = std::min(std::pow(s2 / denom, 0.2), span);
    }
    return d;
}

inline double pilot_bandwidth(const Dataset& data, const Kernel& kernel, double reg_weight = 3.0) {
    return pilot_bandwidth_diagnostics(data, kernel, reg_weight).bandwidth;
}

/// Widens h, if necessary, until at least `needed` observations satisfy |X_i| < h.
inline double ensure_window(const Vector& x, double h, Eigen::Index needed) {
    std::vector<double> ax(static_cast<std::size_t>(x.size()));
    for (Eigen::Index i = 0; i < x.size(); ++i) ax[static_cast<std::size_t>(i)] = std::abs(x[i]);
    if (needed <= 0 || static_cast<std::size_t>(needed) > ax.size()) return h;
    std::nth_element(ax.begin(), ax.begin() + (needed - 1), ax.end());
    const double kth = ax[static_cast<std::size_t>(needed - 1)];
    return kth < h ? h : std::nextafter(kth, std::numeric_limits<double>::infinity()) * (1.0 + 1e-9);
}

/// Plug-in bandwidth for the outcome adjusted by the post-Lasso coefficients
/// at the pilot bandwidth b.
inline double final_bandwidth(const Dataset& data, const IndexSet& selected, double b, const Kernel& kernel,
                              double reg_weight = 3.0) {
    if (selected.empty()) return pilot_bandwidth(data.without_covariates(), kernel, reg_weight);
    const LocalFit at_b = fit_adjusted(data, selected, b, kernel);
    Vector adjusted = data.y;
    for (std::size_t j = 0; j < selected.size(); ++j)
        adjusted -= at_b.gamma[static_cast<Eigen::Index>(j)] * data.z.col(selected[j]);
    return pilot_bandwidth(data.without_covariates().with_outcome(adjusted), kernel, reg_weight);
}

}  // namespace rdlasso
