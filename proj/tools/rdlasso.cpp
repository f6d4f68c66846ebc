#include <algorithm>
#include <cstdint>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rdlasso/cli_io.hpp"

using namespace rdlasso;

namespace {

struct Options {
    std::string input, outcome, running, treatment, covariate_prefix;
    std::vector<std::string> covariates;
    double cutoff = 0.0;
    std::string kernel = "triangular";
    std::string lambda_method = "bch";
    std::string format = "text";
    std::string se = "plugin";
    std::optional<double> lambda, pilot_bandwidth, bandwidth;
    double level = 0.95;
    double bandwidth_regularization = 3.0;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    bool double_selection = false;
    // balance
    double fdr = 0.05;
    bool selected_only = false;
    bool shared_bandwidth = false;
    // simulate
    int reps = 500;
    long n = 1000;
    long p = 200;
    std::string variant = "sparse";
    std::vector<std::string> estimators;
};

LambdaMethod lambda_method_from_name(const std::string& s) {
    if (s == "bch") return LambdaMethod::bch;
    if (s == "lv") return LambdaMethod::lv;
    if (s == "cv") return LambdaMethod::cv;
    throw Error(Errc::invalid_argument, "unknown lambda method '" + s + "' (valid: bch, lv, cv)");
}

SeMethod se_from_name(const std::string& s) {
    if (s == "plugin") return SeMethod::plugin;
    if (s == "sandwich") return SeMethod::sandwich;
    throw Error(Errc::invalid_argument, "unknown standard error method '" + s + "' (valid: plugin, sandwich)");
}

EstimatorConfig estimator_config(const Options& o) {
    EstimatorConfig cfg;
    cfg.kernel = Kernel::from_name(o.kernel);
    cfg.lambda_method = lambda_method_from_name(o.lambda_method);
    cfg.lambda = o.lambda;
    cfg.pilot_bandwidth = o.pilot_bandwidth;
    cfg.bandwidth = o.bandwidth;
    cfg.level = o.level;
    cfg.se_method = se_from_name(o.se);
    cfg.double_selection = o.double_selection;
    cfg.tuning.rng_seed = o.seed;
    cfg.tuning.bandwidth_regularization = o.bandwidth_regularization;
    cfg.validate();
    return cfg;
}

io::RunConfig run_config(const Options& o, bool need_treatment) {
    io::RunConfig rc;
    rc.input = o.input;
    rc.columns.outcome = o.outcome;
    rc.columns.running = o.running;
    if (!o.treatment.empty()) rc.columns.treatment = o.treatment;
    if (need_treatment && o.treatment.empty())
        throw Error(Errc::invalid_argument, "fuzzy estimation needs --treatment");
    rc.columns.covariates = o.covariates;
    if (!o.covariate_prefix.empty()) rc.columns.covariate_prefix = o.covariate_prefix;
    rc.cutoff = o.cutoff;
    rc.estimator = estimator_config(o);
    rc.seed = o.seed;
    rc.format = io::format_from_name(o.format);
    rc.threads = o.threads;
    if (rc.input.empty()) throw Error(Errc::invalid_argument, "no input file given (--input)");
    rc.validate();
    return rc;
}

io::LoadResult load(const io::RunConfig& rc) {
    io::LoadResult lr = io::load_csv(rc.input, rc);
    if (lr.dropped > 0)
        std::cerr << "dropped " << lr.dropped << " rows with missing values; n = " << lr.data.n() << '\n';
    return lr;
}

int run_estimate(const Options& o, bool fuzzy) {
    const io::RunConfig rc = run_config(o, fuzzy);
    const io::LoadResult lr = load(rc);
    const RDEstimate est = fuzzy ? estimate_fuzzy(lr.data, rc.estimator) : estimate_sharp(lr.data, rc.estimator);
    io::write_estimate(std::cout, est, rc.format, rc.seed, lr.data.covariate_names);
    return 0;
}

int run_tune(const Options& o) {
    const io::RunConfig rc = run_config(o, false);
    const io::LoadResult lr = load(rc);
    io::write_tune(std::cout, tune(lr.data, rc.estimator), rc.format, rc.seed, lr.data.covariate_names);
    return 0;
}

int run_balance(const Options& o) {
    const io::RunConfig rc = run_config(o, false);
    const io::LoadResult lr = load(rc);
    BalanceOptions bo;
    bo.q = o.fdr;
    bo.shared_bandwidth = o.shared_bandwidth;
    bo.threads = o.threads;
    if (o.selected_only) bo.only = tune(lr.data, rc.estimator).selected;
    if (bo.only && bo.only->empty()) {
        std::cerr << "no covariates were selected; nothing to test\n";
        return 0;
    }
    io::write_balance(std::cout, balance_tests(lr.data, rc.estimator, bo), rc.format, rc.seed,
                      lr.data.covariate_names);
    return 0;
}

int run_simulate(const Options& o) {
    sim::DgpConfig dc;
    dc.n = o.n;
    dc.p = o.p;
    if (o.variant == "sparse")
        dc.variant = sim::Variant::sparse;
    else if (o.variant == "nonsparse")
        dc.variant = sim::Variant::nonsparse;
    else
        throw Error(Errc::invalid_argument, "unknown variant '" + o.variant + "' (valid: sparse, nonsparse)");
    const EstimatorConfig base = estimator_config(o);
    const auto fmt = io::format_from_name(o.format);
    std::vector<sim::EstimatorSpec> specs;
    for (const auto& e : sim::table_estimators()) {
        if (!o.estimators.empty() && std::find(o.estimators.begin(), o.estimators.end(), e.label) == o.estimators.end())
            continue;
        if (e.kind == sim::EstimatorKind::fixed_first && e.first_k > dc.p) continue;
        specs.push_back(e);
    }
    if (specs.empty()) throw Error(Errc::invalid_argument, "no estimator matches --estimator");
    io::write_mc(std::cout, sim::run_monte_carlo(dc, o.reps, specs, base, o.seed, o.threads), fmt);
    return 0;
}

void add_data_options(CLI::App* app, Options& o) {
    app->add_option("--input,-i", o.input, "CSV file with a header row");
    app->add_option("--outcome,-y", o.outcome, "outcome column");
    app->add_option("--running,-x", o.running, "running variable column");
    app->add_option("--treatment,-t", o.treatment, "observed treatment column (fuzzy designs)");
    app->add_option("--covariates", o.covariates, "covariate columns")->delimiter(',');
    app->add_option("--covariate-prefix", o.covariate_prefix, "use every column whose name starts with this prefix");
    app->add_option("--cutoff", o.cutoff, "cutoff, subtracted from the running variable");
}

void add_estimator_options(CLI::App* app, Options& o) {
    app->add_option("--kernel", o.kernel, "triangular, epanechnikov or uniform")->capture_default_str();
    app->add_option("--lambda-method", o.lambda_method, "bch, lv or cv")->capture_default_str();
    app->add_option("--lambda", o.lambda, "fixed penalty level (inf disables selection)");
    app->add_option("--pilot-bandwidth", o.pilot_bandwidth, "fixed selection bandwidth b");
    app->add_option("--bandwidth", o.bandwidth, "fixed estimation bandwidth h");
    app->add_option("--bandwidth-regularization", o.bandwidth_regularization,
                    "weight on the curvature variance in the plug-in bandwidths")
        ->capture_default_str();
    app->add_option("--level", o.level, "confidence level")->capture_default_str();
    app->add_option("--se", o.se, "plugin or sandwich")->capture_default_str();
    app->add_flag("--double-selection", o.double_selection, "add covariates selected by a treatment Lasso");
}

}  // namespace

int main(int argc, char** argv) {
    Options o;
    CLI::App app{"Localized Lasso covariate selection for regression discontinuity designs"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML/INI file with option defaults; command-line flags take precedence");
    app.add_option("--seed", o.seed, "random seed")->capture_default_str();
    app.add_option("--format", o.format, "text, csv or json")->capture_default_str();
    app.add_option("--threads", o.threads, "worker threads")->capture_default_str();

    auto* est = app.add_subcommand("estimate", "sharp RD estimate with covariate selection");
    auto* fuz = app.add_subcommand("fuzzy", "fuzzy RD estimate (ratio of jumps)");
    auto* bal = app.add_subcommand("balance", "covariate balance tests with Benjamini-Hochberg");
    auto* tun = app.add_subcommand("tune", "report b, lambda, the selected set and h");
    auto* sim = app.add_subcommand("simulate", "Monte Carlo study on the simulation design");
    for (auto* sc : {est, fuz, bal, tun, sim}) sc->fallthrough();
    for (auto* sc : {est, fuz, bal, tun}) {
        add_data_options(sc, o);
        add_estimator_options(sc, o);
    }
    add_estimator_options(sim, o);
    bal->add_option("--fdr", o.fdr, "Benjamini-Hochberg level")->capture_default_str();
    bal->add_flag("--selected-only", o.selected_only, "test only the covariates selected for the outcome");
    bal->add_flag("--shared-bandwidth", o.shared_bandwidth, "use the outcome pilot bandwidth for every covariate");
    sim->add_option("--reps", o.reps, "replications")->capture_default_str();
    sim->add_option("--n", o.n, "sample size")->capture_default_str();
    sim->add_option("--p", o.p, "number of covariates")->capture_default_str();
    sim->add_option("--variant", o.variant, "sparse or nonsparse")->capture_default_str();
    sim->add_option("--estimator", o.estimators, "restrict to these table rows (repeatable)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*est) return run_estimate(o, false);
        if (*fuz) return run_estimate(o, true);
        if (*bal) return run_balance(o);
        if (*tun) return run_tune(o);
        if (*sim) return run_simulate(o);
    } catch (const Error& e) {
        std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
        return is_config_error(e.code()) ? 1 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
