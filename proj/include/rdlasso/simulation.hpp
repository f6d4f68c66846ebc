#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rdlasso/dataset.hpp"
#include "rdlasso/error.hpp"
#include "rdlasso/inference.hpp"
#include "rdlasso/parallel.hpp"
#include "rdlasso/stats.hpp"

namespace rdlasso::sim {

enum class Variant { sparse, nonsparse };

inline constexpr double true_jump = 0.38 - 0.36;
inline constexpr double nonsparse_alpha0 = 0.3883765;

struct DgpConfig {
    Eigen::Index n = 1000;
    Eigen::Index p = 200;
    Variant variant = Variant::sparse;
    double sigma_eps = 0.1295;
    double sigma_z = 0.1353;
    std::uint64_t seed = 0;
};

struct Draw {
    Dataset data;
    Vector optimal_covariate;  // Z' alpha
    double tau = true_jump;
};

/// Quintic RD design with jointly normal (eps, Z) and covariate effects
/// 0.22 Z'alpha below and 0.28 Z'alpha above the cutoff.
class Dgp {
public:
    explicit Dgp(DgpConfig cfg) : cfg_(cfg) {
        const Eigen::Index p = cfg.p;
        if (cfg.n < 1 || p < 0) throw Error(Errc::invalid_argument, "DGP needs n >= 1 and p >= 0");
        if (cfg.variant == Variant::nonsparse && p < 50)
            throw Error(Errc::invalid_argument, "the non-sparse design needs p >= 50");
        const double se2 = cfg.sigma_eps * cfg.sigma_eps;
        v_.resize(p);
        alpha_.resize(p);
        for (Eigen::Index k = 0; k < p; ++k) {
            const double kk = static_cast<double>(k + 1);
            v_[k] = 0.8 * std::sqrt(6.0) * se2 / (M_PI * kk);
            if (cfg.variant == Variant::sparse)
                alpha_[k] = 2.0 / (kk * kk);
            else
                alpha_[k] = k < 50 ? nonsparse_alpha0 : 0.0;
        }
        Matrix sigma = Matrix::Zero(p + 1, p + 1);
        sigma(0, 0) = se2;
        sigma.block(1, 0, p, 1) = v_;
        sigma.block(0, 1, 1, p) = v_.transpose();
        sigma.diagonal().tail(p).setConstant(cfg.sigma_z * cfg.sigma_z);
        Eigen::LLT<Matrix> llt(sigma);
        if (llt.info() != Eigen::Success)
            throw Error(Errc::not_positive_definite, "covariance of (eps, Z) is not positive definite");
        chol_ = llt.matrixL();
    }

    const DgpConfig& config() const { return cfg_; }
    const Vector& alpha() const { return alpha_; }
    const Vector& v() const { return v_; }

    static double mean_control(double x) {
        return 0.36 + x * (0.96 + x * (5.47 + x * (15.28 + x * (15.87 + x * 5.14))));
    }
    static double mean_treated(double x) {
        return 0.38 + x * (0.62 + x * (-2.84 + x * (8.42 + x * (-10.24 + x * 4.31))));
    }

    Draw generate(std::uint64_t rep_seed) const {
        const Eigen::Index n = cfg_.n, p = cfg_.p;
        std::mt19937_64 rng(rep_seed);
        std::gamma_distribution<double> g2(2.0, 1.0), g4(4.0, 1.0);
        std::normal_distribution<double> normal(0.0, 1.0);

        Vector x(n), y(n), opt(n);
        Matrix z(n, p);
        Vector xi(p + 1);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double a = g2(rng), b = g4(rng);
            x[i] = 2.0 * a / (a + b) - 1.0;
            for (Eigen::Index j = 0; j <= p; ++j) xi[j] = normal(rng);
            const Vector draw = chol_.triangularView<Eigen::Lower>() * xi;
            const double eps = draw[0];
            z.row(i) = draw.tail(p).transpose();
            opt[i] = draw.tail(p).dot(alpha_);
            if (Dataset::treated(x[i]))
                y[i] = eps + mean_treated(x[i]) + 0.28 * opt[i];
            else
                y[i] = eps + mean_control(x[i]) + 0.22 * opt[i];
        }
        Draw d;
        d.data = Dataset(std::move(y), std::move(x), std::move(z));
        d.optimal_covariate = std::move(opt);
        return d;
    }

private:
    DgpConfig cfg_;
    Vector v_, alpha_;
    Matrix chol_;
};

// ---------------------------------------------------------------- Monte Carlo

enum class EstimatorKind { lasso, fixed_first, optimal_covariate };

struct EstimatorSpec {
    std::string label;
    EstimatorKind kind = EstimatorKind::lasso;
    LambdaMethod lambda_method = LambdaMethod::bch;
    int first_k = 0;  // fixed_first: covariates 1..k
};

/// The estimator rows of the reference simulation table.
inline std::vector<EstimatorSpec> table_estimators() {
    return {
        {"Lasso (CV)", EstimatorKind::lasso, LambdaMethod::cv, 0},
        {"Lasso (BCH)", EstimatorKind::lasso, LambdaMethod::bch, 0},
        {"Lasso (LV)", EstimatorKind::lasso, LambdaMethod::lv, 0},
        {"Fixed: No Covariates", EstimatorKind::fixed_first, LambdaMethod::bch, 0},
        {"Fixed: Covariate 1", EstimatorKind::fixed_first, LambdaMethod::bch, 1},
        {"Fixed: Covariates 1-10", EstimatorKind::fixed_first, LambdaMethod::bch, 10},
        {"Fixed: Covariates 1-30", EstimatorKind::fixed_first, LambdaMethod::bch, 30},
        {"Fixed: Covariates 1-50", EstimatorKind::fixed_first, LambdaMethod::bch, 50},
        {"Fixed: Optimal Covariate", EstimatorKind::optimal_covariate, LambdaMethod::bch, 0},
    };
}

struct McRow {
    std::string label;
    double n_cov_avg = 0.0;
    double bias = 0.0;
    double sd = 0.0;
    double avg_se = 0.0;
    double ci_length_avg = 0.0;
    double coverage_pct = 0.0;
    int successes = 0;
    int failures = 0;
};

struct McSummary {
    std::vector<McRow> rows;
    int reps = 0;
    std::uint64_t seed = 0;

    const McRow& row(const std::string& label) const {
        for (const auto& r : rows)
            if (r.label == label) return r;
        throw Error(Errc::invalid_argument, "no Monte Carlo row labelled '" + label + "'");
    }
};

/// One replication's outcome for one estimator.
struct McOutcome {
    bool ok = false;
    double tau_hat = 0.0;
    double se = 0.0;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    double n_cov = 0.0;
};

inline McOutcome run_estimator(const Draw& draw, const EstimatorSpec& spec, const EstimatorConfig& base,
                               std::uint64_t seed) {
    McOutcome out;
    try {
        EstimatorConfig cfg = base;
        cfg.tuning.rng_seed = seed;
        RDEstimate est;
        switch (spec.kind) {
        case EstimatorKind::lasso:
            cfg.lambda_method = spec.lambda_method;
            est = estimate_sharp(draw.data, cfg);
            out.n_cov = static_cast<double>(est.selected.size());
            break;
        case EstimatorKind::fixed_first: {
            IndexSet first;
            for (int k = 0; k < spec.first_k && k < draw.data.p(); ++k) first.push_back(k);
            cfg.fixed_subset = first;
            est = estimate_sharp(draw.data, cfg);
            out.n_cov = static_cast<double>(first.size());
            break;
        }
        case EstimatorKind::optimal_covariate: {
            Dataset d = draw.data.without_covariates();
            d.z = draw.optimal_covariate;
            cfg.fixed_subset = IndexSet{0};
            est = estimate_sharp(d, cfg);
            out.n_cov = 1.0;
            break;
        }
        }
        out.ok = true;
        out.tau_hat = est.tau_hat;
        out.se = est.se;
        out.ci_lower = est.ci.lower;
        out.ci_upper = est.ci.upper;
    } catch (const Error&) {
        out.ok = false;
    }
    return out;
}

/// Table-style Monte Carlo study. Replication r draws its data set with seed
/// mix(master_seed, r), so results do not depend on `threads`.
inline McSummary run_monte_carlo(const DgpConfig& cfg, int reps, const std::vector<EstimatorSpec>& estimators,
                                 const EstimatorConfig& base, std::uint64_t master_seed, unsigned threads = 1) {
    if (reps < 1) throw Error(Errc::invalid_argument, "Monte Carlo needs at least one replication");
    const Dgp dgp(cfg);
    const std::size_t ne = estimators.size();
    std::vector<std::vector<McOutcome>> results(static_cast<std::size_t>(reps), std::vector<McOutcome>(ne));

    parallel_for(static_cast<std::size_t>(reps), threads, [&](std::size_t r) {
        const std::uint64_t rep_seed = stats::mix_seed(master_seed, r);
        const Draw draw = dgp.generate(rep_seed);
        for (std::size_t e = 0; e < ne; ++e)
            results[r][e] = run_estimator(draw, estimators[e], base, stats::mix_seed(rep_seed, e + 1));
    });

    McSummary sum;
    sum.reps = reps;
    sum.seed = master_seed;
    for (std::size_t e = 0; e < ne; ++e) {
        McRow row;
        row.label = estimators[e].label;
        std::vector<double> taus;
        double se_acc = 0.0, len_acc = 0.0, cov_acc = 0.0, ncov_acc = 0.0;
        for (int r = 0; r < reps; ++r) {
            const McOutcome& o = results[static_cast<std::size_t>(r)][e];
            if (!o.ok) {
                ++row.failures;
                continue;
            }
            taus.push_back(o.tau_hat);
            se_acc += o.se;
            len_acc += o.ci_upper - o.ci_lower;
            cov_acc += (o.ci_lower <= true_jump && true_jump <= o.ci_upper) ? 1.0 : 0.0;
            ncov_acc += o.n_cov;
        }
        row.successes = static_cast<int>(taus.size());
        if (!taus.empty()) {
            const double k = static_cast<double>(taus.size());
            const Vector t = Eigen::Map<const Vector>(taus.data(), static_cast<Eigen::Index>(taus.size()));
            row.bias = t.mean() - true_jump;
            row.sd = taus.size() > 1 ? std::sqrt(stats::sample_variance(t)) : 0.0;
            row.avg_se = se_acc / k;
            row.ci_length_avg = len_acc / k;
            row.coverage_pct = 100.0 * cov_acc / k;
            row.n_cov_avg = ncov_acc / k;
        }
        sum.rows.push_back(row);
    }
    return sum;
}

}  // namespace rdlasso::sim
