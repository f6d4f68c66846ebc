#pragma once

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
#include "rdlasso/parallel.hpp"
#include "rdlasso/selection.hpp"
#include "rdlasso/stats.hpp"
#include "rdlasso/tuning.hpp"

namespace rdlasso {

enum class SeMethod { plugin, sandwich };
enum class Design { sharp, fuzzy };

inline std::string_view to_string(LambdaMethod m) {
    switch (m) {
    case LambdaMethod::bch: return "bch";
    case LambdaMethod::lv: return "lv";
    case LambdaMethod::cv: return "cv";
    }
    return "bch";
}

struct EstimatorConfig {
    Kernel kernel{KernelFamily::triangular};
    LambdaMethod lambda_method = LambdaMethod::bch;
    std::optional<double> lambda;            // fixed penalty, bypasses the selector; may be +inf
    std::optional<double> pilot_bandwidth;   // fixed b
    std::optional<double> bandwidth;         // fixed h
    std::optional<IndexSet> fixed_subset;    // skip selection and adjust for these covariates
    double level = 0.95;
    SeMethod se_method = SeMethod::plugin;
    bool double_selection = false;
    TuningConfig tuning;

    void validate() const {
        if (!(level > 0.0 && level < 1.0)) throw Error(Errc::invalid_argument, "confidence level must lie in (0,1)");
        if (lambda && !(*lambda >= 0.0)) throw Error(Errc::invalid_argument, "lambda must be non-negative");
        if (pilot_bandwidth && !(*pilot_bandwidth > 0.0))
            throw Error(Errc::invalid_argument, "pilot bandwidth must be positive");
        if (bandwidth && !(*bandwidth > 0.0)) throw Error(Errc::invalid_argument, "bandwidth must be positive");
        tuning.validate();
    }
};

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
    double level = 0.95;
    bool degenerate = false;
};

struct StandardError {
    double value = 0.0;
    bool degenerate = false;  // zero residual variance; value forced to 0
};

struct RDEstimate {
    double tau_hat = 0.0;
    double se = 0.0;
    Interval ci;
    double h = 0.0;
    double b = 0.0;
    double lambda = std::numeric_limits<double>::quiet_NaN();
    std::string lambda_method = "none";
    IndexSet selected;
    Eigen::Index n_eff = 0;
    Design design = Design::sharp;
    // fuzzy only
    double tau_y = 0.0;
    double tau_t = 0.0;
    Eigen::Matrix2d jump_cov = Eigen::Matrix2d::Zero();
    std::vector<std::string> warnings;
};

/// Conventional normal interval tau_hat +- z se.
inline Interval confidence_interval(double tau_hat, double se, double level) {
    if (!(level > 0.0 && level < 1.0)) throw Error(Errc::invalid_argument, "confidence level must lie in (0,1)");
    if (!(se >= 0.0)) throw Error(Errc::invalid_argument, "standard error must be non-negative");
    const double z = stats::normal_quantile(1.0 - (1.0 - level) / 2.0);
    return {tau_hat - z * se, tau_hat + z * se, level, se == 0.0};
}

/// Heteroskedasticity-robust covariance of the coefficient pairs (a, b) of two
/// fits sharing design and weights: G^-1 (sum w^2 r_a r_b d d') G^-1.
inline Matrix cross_sandwich(const LocalFit& fit, const Dataset& data, const Vector& r_a, const Vector& r_b) {
    const Matrix design = local_design(data, fit.subset, fit.h);
    Matrix meat = Matrix::Zero(design.cols(), design.cols());
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        const double w = fit.weights[i];
        if (w == 0.0) continue;
        meat.noalias() += (w * w * r_a[i] * r_b[i]) * design.row(i).transpose() * design.row(i);
    }
    return fit.gram_inverse * meat * fit.gram_inverse;
}

/// Standard error of the jump coefficient. The plug-in form is
/// sqrt(C_S (s2_+ + s2_-) / (f_X(0) n h)) with kernel-weighted residual
/// variances on each side, inflated by n_s / (n_s - (4 + |J|)/2).
inline StandardError standard_error(const LocalFit& fit, const Dataset& data, const Kernel& kernel,
                                    SeMethod method = SeMethod::plugin) {
    StandardError out;
    if (method == SeMethod::sandwich) {
        const double v = cross_sandwich(fit, data, fit.residuals, fit.residuals)(1, 1);
        out.value = std::sqrt(std::max(v, 0.0));
        out.degenerate = !(v > 0.0);
        return out;
    }
    const double half_params = 0.5 * static_cast<double>(fit.n_params());
    double var_sum = 0.0;
    for (int side = 0; side < 2; ++side) {
        double sw = 0.0, swr = 0.0;
        double count = 0.0;
        for (Eigen::Index i = 0; i < data.n(); ++i) {
            if (fit.weights[i] == 0.0 || (Dataset::treated(data.x[i]) ? 1 : 0) != side) continue;
            sw += fit.weights[i];
            swr += fit.weights[i] * fit.residuals[i] * fit.residuals[i];
            count += 1.0;
        }
        if (!(count > half_params))
            throw Error(Errc::too_few_observations, "too few observations on one side of the cutoff for the variance");
        var_sum += swr / sw * count / (count - half_params);
    }
    if (!(var_sum > 0.0)) {
        out.degenerate = true;
        return out;
    }
    const double f0 = stats::density_at_cutoff(data.x, kernel);
    const double s2 = kernel.variance_constant() * var_sum / f0;
    out.value = std::sqrt(s2 / (static_cast<double>(data.n()) * fit.h));
    return out;
}

namespace detail {

struct Selection {
    IndexSet selected;
    double lambda = std::numeric_limits<double>::quiet_NaN();
    std::string method = "none";
};

/// Step 1 at pilot bandwidth b for the outcome stored in `data.y`.
inline Selection select_covariates(const Dataset& data, double b, const EstimatorConfig& cfg, std::uint64_t seed) {
    Selection out;
    if (cfg.fixed_subset) {
        out.selected = *cfg.fixed_subset;
        out.method = "fixed";
        return out;
    }
    if (data.p() == 0) return out;

    const Kernel& kernel = cfg.kernel;
    const PenaltyWeights weights = standardization_weights(data, b, kernel);
    SelectionResult sel;
    if (cfg.lambda) {
        out.lambda = *cfg.lambda;
        out.method = "fixed";
        sel = local_lasso(data, b, out.lambda, kernel, weights, cfg.tuning.lasso);
    } else {
        out.method = std::string(to_string(cfg.lambda_method));
        switch (cfg.lambda_method) {
        case LambdaMethod::bch: {
            BchResult r = lambda_bch(data, b, kernel, cfg.tuning);
            out.lambda = r.lambda;
            sel = std::move(r.selection);
            break;
        }
        case LambdaMethod::lv:
            out.lambda = lambda_lv(data, b, kernel, weights, cfg.tuning, seed).lambda;
            sel = local_lasso(data, b, out.lambda, kernel, weights, cfg.tuning.lasso);
            break;
        case LambdaMethod::cv:
            out.lambda = lambda_cv(data, b, kernel, weights, cfg.tuning, seed).lambda;
            sel = local_lasso(data, b, out.lambda, kernel, weights, cfg.tuning.lasso);
            break;
        }
    }
    out.selected = sel.selected;
    if (cfg.double_selection) {
        // treatment Lasso on the centered covariates, penalized with the standardization weights
        const Vector t = data.t_obs ? *data.t_obs : data.sharp_treatment();
        const detail::LassoProblem treat(data, t, b, kernel, weights.mu_z, /*with_v=*/false);
        const SelectionResult ts = treat.solve(out.lambda, weights.w, cfg.tuning.lasso);
        IndexSet merged;
        std::set_union(out.selected.begin(), out.selected.end(), ts.selected.begin(), ts.selected.end(),
                       std::back_inserter(merged));
        out.selected = std::move(merged);
    }
    return out;
}

inline double resolve_pilot(const Dataset& data, const EstimatorConfig& cfg) {
    const double reg = cfg.tuning.bandwidth_regularization;
    const double b = cfg.pilot_bandwidth ? *cfg.pilot_bandwidth : pilot_bandwidth(data.without_covariates(), cfg.kernel, reg);
    return ensure_window(data.x, b, 4 + 2);
}

inline double resolve_final(const Dataset& data, const IndexSet& selected, double b, const EstimatorConfig& cfg) {
    const double reg = cfg.tuning.bandwidth_regularization;
    const double h = cfg.bandwidth ? *cfg.bandwidth : final_bandwidth(data, selected, b, cfg.kernel, reg);
    return ensure_window(data.x, h, 4 + static_cast<Eigen::Index>(selected.size()) + 2);
}

}  // namespace detail

struct TuneReport {
    double b = 0.0;
    double lambda = std::numeric_limits<double>::quiet_NaN();
    std::string lambda_method = "none";
    IndexSet selected;
    double h = 0.0;
};

/// The tuning choices of estimate_sharp (b, lambda, selected set, h) without the final fit.
inline TuneReport tune(const Dataset& data, const EstimatorConfig& cfg) {
    cfg.validate();
    data.validate();
    TuneReport out;
    out.b = detail::resolve_pilot(data, cfg);
    const auto sel = detail::select_covariates(data, out.b, cfg, cfg.tuning.rng_seed);
    out.selected = sel.selected;
    out.lambda = sel.lambda;
    out.lambda_method = sel.method;
    out.h = detail::resolve_final(data, out.selected, out.b, cfg);
    return out;
}

/// Two-step estimator: localized Lasso selection at b, then the linear
/// adjustment estimator on the selected covariates at h.
inline RDEstimate estimate_sharp(const Dataset& data, const EstimatorConfig& cfg) {
    cfg.validate();
    data.validate();
    RDEstimate est;
    est.b = detail::resolve_pilot(data, cfg);
    if (count_in_window(data.x, est.b) == 0)
        throw Error(Errc::empty_effective_sample, "no observations within the pilot bandwidth");

    const auto sel = detail::select_covariates(data, est.b, cfg, cfg.tuning.rng_seed);
    est.selected = sel.selected;
    est.lambda = sel.lambda;
    est.lambda_method = sel.method;

    est.h = detail::resolve_final(data, est.selected, est.b, cfg);
    const LocalFit fit = fit_adjusted(data, est.selected, est.h, cfg.kernel);
    est.tau_hat = fit.tau();
    est.tau_y = est.tau_hat;
    est.n_eff = fit.n_eff;
    const StandardError se = standard_error(fit, data, cfg.kernel, cfg.se_method);
    est.se = se.value;
    if (se.degenerate) est.warnings.emplace_back("residual variance is zero; standard error set to 0");
    est.ci = confidence_interval(est.tau_hat, est.se, cfg.level);
    if (est.ci.degenerate) est.warnings.emplace_back("degenerate confidence interval");
    return est;
}

/// Ratio of the outcome and treatment jumps, both estimated by the two-step
/// procedure with shared b, h and covariate set; delta-method standard error.
inline RDEstimate estimate_fuzzy(const Dataset& data, const EstimatorConfig& cfg) {
    cfg.validate();
    data.validate();
    if (!data.t_obs) throw Error(Errc::invalid_argument, "fuzzy estimation needs an observed treatment column");
    const Vector& t = *data.t_obs;
    const bool deterministic = (t.array() == data.sharp_treatment().array()).all();

    RDEstimate est;
    est.design = Design::fuzzy;
    est.b = detail::resolve_pilot(data, cfg);

    const auto sel_y = detail::select_covariates(data, est.b, cfg, cfg.tuning.rng_seed);
    IndexSet joint = sel_y.selected;
    if (!deterministic && !cfg.fixed_subset) {
        const Dataset tdata = data.with_outcome(t);
        const auto sel_t = detail::select_covariates(tdata, est.b, cfg, cfg.tuning.rng_seed);
        IndexSet merged;
        std::set_union(joint.begin(), joint.end(), sel_t.selected.begin(), sel_t.selected.end(),
                       std::back_inserter(merged));
        joint = std::move(merged);
    }
    est.selected = joint;
    est.lambda = sel_y.lambda;
    est.lambda_method = sel_y.method;
    est.h = detail::resolve_final(data, joint, est.b, cfg);

    const LocalFit fy = fit_adjusted(data, joint, est.h, cfg.kernel);
    Vector rt = Vector::Zero(data.n());
    double tau_t = 1.0;
    if (!deterministic) {
        const LocalFit ft = fit_adjusted(data.with_outcome(t), joint, est.h, cfg.kernel);
        tau_t = ft.tau();
        rt = ft.residuals;
    }
    est.tau_y = fy.tau();
    est.tau_t = tau_t;
    est.n_eff = fy.n_eff;
    if (std::abs(tau_t) < 0.05)
        throw Error(Errc::weak_jump, "estimated treatment jump " + std::to_string(tau_t) + " is below 0.05 in magnitude");

    const double vy = cross_sandwich(fy, data, fy.residuals, fy.residuals)(1, 1);
    const double vt = deterministic ? 0.0 : cross_sandwich(fy, data, rt, rt)(1, 1);
    const double cyt = deterministic ? 0.0 : cross_sandwich(fy, data, fy.residuals, rt)(1, 1);
    est.jump_cov << vy, cyt, cyt, vt;

    est.tau_hat = deterministic ? est.tau_y : est.tau_y / tau_t;
    const double t2 = tau_t * tau_t;
    const double var = vy / t2 + est.tau_y * est.tau_y * vt / (t2 * t2) - 2.0 * est.tau_y * cyt / (t2 * tau_t);
    est.se = std::sqrt(std::max(var, 0.0));
    if (!(var > 0.0)) est.warnings.emplace_back("delta-method variance is not positive; standard error set to 0");
    est.ci = confidence_interval(est.tau_hat, est.se, cfg.level);
    return est;
}

// ---------------------------------------------------------------- balance

struct BalanceRow {
    int index = 0;
    double jump = 0.0;
    double se = 0.0;
    double p_value = 1.0;
    double bandwidth = 0.0;
    bool bh_rejected = false;
};

struct BalanceReport {
    std::vector<BalanceRow> rows;
    double fdr_level = 0.05;
    bool global_reject = false;
};

struct BalanceOptions {
    double q = 0.05;
    std::optional<IndexSet> only;  // restrict to these covariates (e.g. the selected set)
    bool shared_bandwidth = false; // use the outcome pilot bandwidth for every covariate
    unsigned threads = 1;
};

/// Sharp RD regressions with each covariate as the outcome, Benjamini-Hochberg
/// across the resulting p-values.
inline BalanceReport balance_tests(const Dataset& data, const EstimatorConfig& cfg, const BalanceOptions& opts) {
    cfg.validate();
    if (data.p() < 1) throw Error(Errc::invalid_argument, "balance tests need at least one covariate");
    if (!(opts.q > 0.0 && opts.q < 1.0)) throw Error(Errc::invalid_argument, "FDR level must lie in (0,1)");

    IndexSet cols;
    if (opts.only) {
        cols = *opts.only;
    } else {
        for (Eigen::Index k = 0; k < data.p(); ++k) cols.push_back(static_cast<int>(k));
    }
    double shared = 0.0;
    if (opts.shared_bandwidth) shared = detail::resolve_pilot(data, cfg);

    BalanceReport rep;
    rep.fdr_level = opts.q;
    rep.rows.resize(cols.size());
    const Dataset base = data.without_covariates();
    parallel_for(cols.size(), opts.threads, [&](std::size_t j) {
        const int k = cols[j];
        const Dataset dk = base.with_outcome(data.z.col(k));
        double h = shared;
        if (!opts.shared_bandwidth)
            h = cfg.pilot_bandwidth ? *cfg.pilot_bandwidth
                                    : pilot_bandwidth(dk, cfg.kernel, cfg.tuning.bandwidth_regularization);
        h = ensure_window(data.x, h, 6);
        const LocalFit fit = fit_baseline(dk, h, cfg.kernel);
        const StandardError se = standard_error(fit, dk, cfg.kernel, cfg.se_method);
        BalanceRow row;
        row.index = k;
        row.jump = fit.tau();
        row.se = se.value;
        row.bandwidth = h;
        if (se.value > 0.0)
            row.p_value = 2.0 * stats::normal_sf(std::abs(row.jump) / se.value);
        else
            row.p_value = row.jump == 0.0 ? 1.0 : 0.0;
        rep.rows[j] = row;
    });

    std::vector<double> pv;
    for (const auto& r : rep.rows) pv.push_back(r.p_value);
    const auto rej = stats::benjamini_hochberg(pv, opts.q);
    for (std::size_t j = 0; j < rej.size(); ++j) {
        rep.rows[j].bh_rejected = rej[j];
        rep.global_reject = rep.global_reject || rej[j];
    }
    return rep;
}

}  // namespace rdlasso
