// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "oracles.hpp"
#include "rdlasso/inference.hpp"
#include "rdlasso/simulation.hpp"

using namespace rdlasso;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Verdict {
    bool pass = true;
    std::ostringstream detail;

    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " !" << what;
        }
    }
};

unsigned threads() {
    const unsigned t = std::thread::hardware_concurrency();
    return t == 0 ? 1 : t;
}

int failures = 0;

void report(int id, const std::string& title, const Verdict& v, double seconds) {
    std::printf("[%s] criterion %d: %s |%s (%.0fs)\n", v.pass ? "PASS" : "FAIL", id, title.c_str(),
                v.detail.str().c_str(), seconds);
    std::fflush(stdout);
    if (!v.pass) ++failures;
}

template <class F>
void run(int id, const std::string& title, F&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
        body(v);
    } catch (const std::exception& e) {
        v.pass = false;
        v.detail << " exception: " << e.what();
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report(id, title, v, s);
}

std::string fmt(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    return buf;
}

void print_table(const sim::McSummary& s) {
    std::printf("    %-26s %7s %9s %8s %8s %8s %7s %5s\n", "estimator", "#cov", "bias", "sd", "avg_se", "ci_len",
                "cov%", "fail");
    for (const auto& r : s.rows)
        std::printf("    %-26s %7.2f %9.5f %8.5f %8.5f %8.5f %7.1f %5d\n", r.label.c_str(), r.n_cov_avg, r.bias, r.sd,
                    r.avg_se, r.ci_length_avg, r.coverage_pct, r.failures);
    std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
    auto want = [&](int id) { return wanted.empty() || wanted.count(id) > 0; };

    // ------------------------------------------------------------ 1-3: sparse design table
    if (want(1) || want(2) || want(3)) {
        const auto t0 = std::chrono::steady_clock::now();
        const sim::McSummary s =
            sim::run_monte_carlo(sim::DgpConfig{}, 500, sim::table_estimators(), EstimatorConfig{}, 20240601, threads());
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("sparse design, n=1000, p=200, 500 replications, seed 20240601 (%.0fs)\n", secs);
        print_table(s);
        const auto& bch = s.row("Lasso (BCH)");
        const auto& lv = s.row("Lasso (LV)");
        const auto& cv = s.row("Lasso (CV)");
        const auto& none = s.row("Fixed: No Covariates");
        const auto& f50 = s.row("Fixed: Covariates 1-50");

        if (want(1))
            run(1, "sparse table reproduction", [&](Verdict& v) {
                const double ratio = bch.sd / none.sd;
                const double calib = std::abs(none.avg_se / none.sd - 1.0);
                v.detail << " BCH cov=" << fmt(bch.coverage_pct) << " [92.5,98.5]"
                         << ", BCH #cov=" << fmt(bch.n_cov_avg) << " [0.5,4]"
                         << ", LV cov=" << fmt(lv.coverage_pct) << " [92.5,98.5]"
                         << ", none SD=" << fmt(none.sd) << " [0.065,0.085]"
                         << ", SD ratio=" << fmt(ratio) << " [0.60,0.80]"
                         << ", none avgSE/SD-1=" << fmt(calib) << " (<=0.15)";
                v.check(bch.coverage_pct >= 92.5 && bch.coverage_pct <= 98.5, "BCH coverage");
                v.check(bch.n_cov_avg >= 0.5 && bch.n_cov_avg <= 4.0, "BCH selected");
                v.check(lv.coverage_pct >= 92.5 && lv.coverage_pct <= 98.5, "LV coverage");
                v.check(none.sd >= 0.065 && none.sd <= 0.085, "no-covariates SD");
                v.check(ratio >= 0.60 && ratio <= 0.80, "SD ratio");
                v.check(calib <= 0.15, "baseline SE calibration");
                v.check(bch.failures == 0 && lv.failures == 0 && none.failures == 0, "replication failures");
            });
        if (want(2))
            run(2, "CV selects more and covers less than BCH", [&](Verdict& v) {
                v.detail << " CV #cov=" << fmt(cv.n_cov_avg) << " vs BCH " << fmt(bch.n_cov_avg)
                         << ", CV cov=" << fmt(cv.coverage_pct) << " vs BCH " << fmt(bch.coverage_pct);
                v.check(cv.n_cov_avg >= 2.0 * bch.n_cov_avg, "CV #cov >= 2x BCH");
                v.check(cv.coverage_pct <= bch.coverage_pct - 2.0, "CV coverage >= 2 points below BCH");
            });
        if (want(3))
            run(3, "fixed 50-covariate overfitting", [&](Verdict& v) {
                const double under = 1.0 - f50.avg_se / f50.sd;
                v.detail << " avgSE=" << fmt(f50.avg_se) << ", SD=" << fmt(f50.sd) << ", underestimate=" << fmt(under)
                         << " (>=0.30), cov=" << fmt(f50.coverage_pct) << " (<85)";
                v.check(under >= 0.30, "SE underestimate");
                v.check(f50.coverage_pct < 85.0, "coverage");
            });
    }

    // ------------------------------------------------------------ 4: non-sparse design
    if (want(4))
        run(4, "non-sparse design, BCH", [&](Verdict& v) {
            sim::DgpConfig cfg;
            cfg.variant = sim::Variant::nonsparse;
            const std::vector<sim::EstimatorSpec> est{
                {"Lasso (BCH)", sim::EstimatorKind::lasso, LambdaMethod::bch, 0},
                {"Fixed: No Covariates", sim::EstimatorKind::fixed_first, LambdaMethod::bch, 0},
            };
            const sim::McSummary s = sim::run_monte_carlo(cfg, 500, est, EstimatorConfig{}, 20240602, threads());
            print_table(s);
            const auto& bch = s.row("Lasso (BCH)");
            v.detail << " cov=" << fmt(bch.coverage_pct) << " (>=92), #cov=" << fmt(bch.n_cov_avg) << " (<=3)";
            v.check(bch.coverage_pct >= 92.0, "coverage");
            v.check(bch.n_cov_avg <= 3.0, "selected");
        });

    // ------------------------------------------------------------ 5: solver vs proximal gradient
    if (want(5))
        run(5, "coordinate descent vs proximal-gradient oracle", [&](Verdict& v) {
            std::mt19937_64 rng(5005);
            std::uniform_real_distribution<double> frac(0.02, 0.8), bw(0.3, 1.0);
            double worst_obj = 0.0, worst_kkt = 0.0;
            for (int rep = 0; rep < 100; ++rep) {
                const Dataset d = oracle::random_data(rng, 200, 20);
                const Kernel k;
                const double b = bw(rng);
                const PenaltyWeights w = standardization_weights(d, b, k);
                const double lambda = frac(rng) * detail::LassoProblem(d, d.y, b, k, w.mu_z).lambda_max(w.w);
                const SelectionResult r = local_lasso(d, b, lambda, k, w);
                const oracle::LassoSolution ref = oracle::fista(oracle::lasso_instance(d, b, k, w.w), lambda);
                worst_obj = std::max(worst_obj, std::abs(r.objective - ref.objective) / ref.objective);
                const KktReport kkt = kkt_residuals(d, r, k, w);
                const double scale = lambda * w.w.maxCoeff();
                worst_kkt = std::max({worst_kkt, kkt.max_violation() / scale,
                                      kkt.theta_score.cwiseAbs().maxCoeff() / scale});
            }
            v.detail << " max rel objective gap=" << fmt(worst_obj, 3) << " (<=1e-8), max KKT/(lambda max w)="
                     << fmt(worst_kkt, 3) << " (<=1e-6)";
            v.check(worst_obj <= 1e-8, "objective");
            v.check(worst_kkt <= 1e-6, "KKT");
        });

    // ------------------------------------------------------------ 6: FWL
    if (want(6))
        run(6, "FWL identity", [&](Verdict& v) {
            std::mt19937_64 rng(6006);
            std::uniform_int_distribution<int> pick_p(1, 12);
            std::uniform_real_distribution<double> pick_h(0.25, 1.0);
            double worst = 0.0;
            for (int rep = 0; rep < 100; ++rep) {
                const Eigen::Index p = pick_p(rng);
                const Dataset d = oracle::random_data(rng, 150, p);
                IndexSet j;
                for (Eigen::Index c = 0; c < p; ++c)
                    if (rng() % 2) j.push_back(static_cast<int>(c));
                const double h = pick_h(rng);
                const Kernel k(rep % 3 == 0 ? KernelFamily::uniform : KernelFamily::triangular);
                const Eigen::Vector4d a = fit_adjusted(d, j, h, k).theta, b = fwl_theta(d, j, h, k);
                worst = std::max(worst, (a - b).norm() / std::max(1.0, b.norm()));
            }
            v.detail << " max relative difference=" << fmt(worst, 3) << " (<=1e-10)";
            v.check(worst <= 1e-10, "FWL");
        });

    // ------------------------------------------------------------ 7: degeneracies
    if (want(7))
        run(7, "exact degeneracies", [&](Verdict& v) {
            double gap_inf = 0.0, gap_p0 = 0.0;
            bool tau_t_exact = true, empty = true;
            const sim::Dgp dgp(sim::DgpConfig{});
            for (int rep = 0; rep < 10; ++rep) {
                const sim::Draw draw = dgp.generate(stats::mix_seed(7007, rep));
                const Dataset& d = draw.data;
                EstimatorConfig cfg;
                cfg.lambda = kInf;
                const RDEstimate e = estimate_sharp(d, cfg);
                empty = empty && e.selected.empty();
                const double h = ensure_window(d.x, pilot_bandwidth(d.without_covariates(), cfg.kernel), 6);
                const LocalFit base = fit_baseline(d, h, cfg.kernel);
                gap_inf = std::max({gap_inf, std::abs(e.tau_hat - base.tau()),
                                    std::abs(e.se - standard_error(base, d, cfg.kernel).value)});

                const Dataset d0 = d.without_covariates();
                const RDEstimate e0 = estimate_sharp(d0, EstimatorConfig{});
                gap_p0 = std::max(gap_p0, std::abs(e0.tau_hat - fit_baseline(d0, e0.h, cfg.kernel).tau()));

                Dataset df = d;
                df.t_obs = d.sharp_treatment();
                const RDEstimate ef = estimate_fuzzy(df, EstimatorConfig{});
                tau_t_exact = tau_t_exact && ef.tau_t == 1.0;
            }
            v.detail << " lambda=inf gap=" << fmt(gap_inf, 3) << " (<=1e-12), selected empty=" << empty
                     << ", p=0 gap=" << fmt(gap_p0, 3) << ", sharp-as-fuzzy tau_T==1: " << tau_t_exact;
            v.check(gap_inf <= 1e-12 && empty, "lambda=inf");
            v.check(gap_p0 <= 1e-12, "p=0");
            v.check(tau_t_exact, "tau_T");
        });

    // ------------------------------------------------------------ 8: kernel constants
    if (want(8))
        run(8, "kernel constants", [&](Verdict& v) {
            double worst = 0.0;
            for (const auto f : {KernelFamily::triangular, KernelFamily::epanechnikov, KernelFamily::uniform}) {
                const Kernel k(f);
                for (const auto side : {Side::left, Side::right, Side::both}) {
                    for (int a = 0; a <= 4; ++a)
                        worst = std::max(worst, std::abs(k.moment(a, side, false) - oracle::quad_moment(k, a, side, false)));
                    for (int a = 0; a <= 2; ++a)
                        worst = std::max(worst, std::abs(k.moment(a, side, true) - oracle::quad_moment(k, a, side, true)));
                }
            }
            const double cb_tri = Kernel(KernelFamily::triangular).bias_constant();
            const double cb_uni = Kernel(KernelFamily::uniform).bias_constant();

            // Monte Carlo variance of the jump estimate against C_S (s2_+ + s2_-) / (f n h)
            const Kernel k;
            const Eigen::Index n = 20000;
            const double h = 0.2, sigma = 0.5;
            const int reps = 10000;
            std::mt19937_64 rng(8008);
            std::uniform_real_distribution<double> u(-1.0, 1.0);
            std::normal_distribution<double> nd;
            Vector taus(reps);
            Vector x(n), y(n);
            for (int r = 0; r < reps; ++r) {
                for (Eigen::Index i = 0; i < n; ++i) {
                    x[i] = u(rng);
                    y[i] = 0.3 * x[i] + sigma * nd(rng);
                }
                taus[r] = fit_baseline(Dataset(y, x, Matrix(n, 0)), h, k).tau();
            }
            const double mc_var = stats::sample_variance(taus);
            const double theory = k.variance_constant() * 2.0 * sigma * sigma / (0.5 * static_cast<double>(n) * h);
            const double rel = std::abs(mc_var / theory - 1.0);
            v.detail << " max moment error=" << fmt(worst, 3) << " (<=1e-10), C_B tri=" << fmt(cb_tri, 15)
                     << " uni=" << fmt(cb_uni, 15) << ", C_S=" << fmt(k.variance_constant())
                     << " MC var/theory-1=" << fmt(rel, 3) << " (<=0.05)";
            v.check(worst <= 1e-10, "moments");
            v.check(std::abs(cb_tri - 0.8) <= 1e-14 && std::abs(cb_uni - 1.0) <= 1e-14, "C_B");
            v.check(rel <= 0.05, "C_S");
        });

    // ------------------------------------------------------------ 9: invariances
    if (want(9))
        run(9, "shift and scale invariance of selection", [&](Verdict& v) {
            std::mt19937_64 rng(9009);
            std::normal_distribution<double> nd;
            std::uniform_real_distribution<double> cu(0.2, 5.0);
            double worst_shift = 0.0, worst_scale = 0.0;
            bool same_sets = true;
            int nonempty = 0;
            for (int rep = 0; rep < 50; ++rep) {
                const Dataset d = oracle::random_data(rng, 250, 12);
                const Kernel k;
                const double b = 0.5;
                const PenaltyWeights w = standardization_weights(d, b, k);
                const double lambda = 0.15 * detail::LassoProblem(d, d.y, b, k, w.mu_z).lambda_max(w.w);
                const SelectionResult a = local_lasso(d, b, lambda, k, w);
                nonempty += a.selected.empty() ? 0 : 1;

                Matrix m(4, d.p());
                for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
                Dataset s = d;
                for (Eigen::Index i = 0; i < d.n(); ++i) s.z.row(i) += detail::v_row(d.x[i], b).transpose() * m;
                PenaltyWeights ws = w;
                ws.mu_z = local_means(s, b, k);
                const SelectionResult c = local_lasso(s, b, lambda, k, ws);
                same_sets = same_sets && a.selected == c.selected;
                worst_shift = std::max(worst_shift, (a.gamma_tilde - c.gamma_tilde).cwiseAbs().maxCoeff());

                Dataset r = d;
                Vector cs(d.p());
                for (Eigen::Index j = 0; j < d.p(); ++j) {
                    cs[j] = cu(rng);
                    r.z.col(j) *= cs[j];
                }
                const SelectionResult e = local_lasso(r, b, lambda, k, standardization_weights(r, b, k));
                same_sets = same_sets && a.selected == e.selected;
                worst_scale = std::max(worst_scale, (a.gamma_tilde - e.gamma_tilde.cwiseProduct(cs)).cwiseAbs().maxCoeff());
            }
            v.detail << " sets identical=" << same_sets << " (" << nonempty << "/50 non-empty), max shift gap="
                     << fmt(worst_shift, 3) << ", max rescale gap=" << fmt(worst_scale, 3) << " (<=1e-6)";
            v.check(same_sets, "selected sets");
            v.check(worst_shift <= 1e-6 && worst_scale <= 1e-6, "gamma stability");
        });

    // ------------------------------------------------------------ 10: balance tests
    if (want(10))
        run(10, "balance tests: size and power", [&](Verdict& v) {
            const sim::Dgp dgp(sim::DgpConfig{});
            const int reps = 200;
            int null_rejects = 0, power_hits = 0;
            const int power_reps = 50;
            BalanceOptions opts;
            opts.threads = threads();
            for (int r = 0; r < reps; ++r) {
                const sim::Draw draw = dgp.generate(stats::mix_seed(10010, r));
                const BalanceReport rep = balance_tests(draw.data, EstimatorConfig{}, opts);
                null_rejects += rep.global_reject ? 1 : 0;
                if (r < power_reps) {
                    // jump of 10 standard errors in covariate 17
                    const int k = 17;
                    Dataset d = draw.data;
                    const double shift = 10.0 * rep.rows[static_cast<std::size_t>(k)].se;
                    for (Eigen::Index i = 0; i < d.n(); ++i)
                        if (Dataset::treated(d.x[i])) d.z(i, k) += shift;
                    BalanceOptions one = opts;
                    const BalanceReport alt = balance_tests(d, EstimatorConfig{}, one);
                    power_hits += alt.rows[static_cast<std::size_t>(k)].bh_rejected && alt.global_reject ? 1 : 0;
                }
            }
            const double size = static_cast<double>(null_rejects) / reps;
            const double power = static_cast<double>(power_hits) / power_reps;
            v.detail << " global rejection under null=" << fmt(size) << " (<=0.10), power at 10 SE=" << fmt(power)
                     << " (>=0.98)";
            v.check(size <= 0.10, "size");
            v.check(power >= 0.98, "power");
        });

    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
