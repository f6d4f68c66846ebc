#include <gtest/gtest.h>

#include <functional>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "rdlasso/cli_io.hpp"

using namespace rdlasso;
using namespace rdlasso::io;

namespace {

RunConfig columns(std::string y, std::string x) {
    RunConfig cfg;
    cfg.columns.outcome = std::move(y);
    cfg.columns.running = std::move(x);
    return cfg;
}

Errc code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return Errc::nonpositive_variance;  // sentinel: nothing thrown
}

}  // namespace

TEST(Csv, ParsesQuotesAndLineEndings) {
    std::istringstream in("a,\"b,c\",d\r\n1,\"he said \"\"hi\"\"\",3\r\n\r\n4,\"two\nlines\",6\n");
    const CsvTable t = parse_csv(in);
    EXPECT_EQ(t.header, (std::vector<std::string>{"a", "b,c", "d"}));
    ASSERT_EQ(t.rows.size(), 2u);
    EXPECT_EQ(t.rows[0][1], "he said \"hi\"");
    EXPECT_EQ(t.rows[1][1], "two\nlines");
    EXPECT_EQ(t.line_of_row[0], 2u);
    EXPECT_EQ(t.line_of_row[1], 4u);
}

TEST(Csv, Errors) {
    std::istringstream bad("a,b\n1,\"open\n");
    EXPECT_EQ(code_of([&] { parse_csv(bad); }), Errc::invalid_argument);
    std::istringstream empty("");
    EXPECT_EQ(code_of([&] { parse_csv(empty); }), Errc::empty_after_filtering);
}

TEST(Csv, MissingRowsDropped) {
    std::istringstream in("y,x,z1\n1.0,0.5,2\n2.0,,3\n3.0,-0.5,NA\n4.0,-0.2,1\n");
    RunConfig cfg = columns("y", "x");
    cfg.columns.covariates = {"z1"};
    const LoadResult r = load_csv(in, cfg);
    EXPECT_EQ(r.data.n(), 2);
    EXPECT_EQ(r.dropped, 2u);
    EXPECT_EQ(r.data.p(), 1);
    EXPECT_EQ(r.data.covariate_names, std::vector<std::string>{"z1"});
    EXPECT_EQ(r.data.y[1], 4.0);
}

TEST(Csv, BlankCellInUnusedColumnIsKept) {
    std::istringstream in("y,x,note\n1,0.1,\n2,-0.1,a\n3,0.2,\n");
    const LoadResult r = load_csv(in, columns("y", "x"));
    EXPECT_EQ(r.data.n(), 3);
    EXPECT_EQ(r.dropped, 0u);
    EXPECT_EQ(r.data.p(), 0);
}

TEST(Csv, CutoffShift) {
    std::istringstream in("score,age\n1,35\n2,36\n3,38.5\n");
    RunConfig cfg = columns("score", "age");
    cfg.cutoff = 36.0;
    const LoadResult r = load_csv(in, cfg);
    EXPECT_EQ(r.data.x[0], -1.0);
    EXPECT_EQ(r.data.x[1], 0.0);
    EXPECT_EQ(r.data.x[2], 2.5);
    EXPECT_TRUE(Dataset::treated(r.data.x[1]));
}

TEST(Csv, PrefixSelectsCovariates) {
    std::istringstream in("z_y,x,z_a,w,z_b,d\n1,0.1,2,3,4,1\n");
    RunConfig cfg = columns("z_y", "x");
    cfg.columns.covariate_prefix = "z_";
    cfg.columns.treatment = "d";
    const LoadResult r = load_csv(in, cfg);
    EXPECT_EQ(r.data.covariate_names, (std::vector<std::string>{"z_a", "z_b"}));
    ASSERT_TRUE(r.data.t_obs.has_value());
    EXPECT_EQ((*r.data.t_obs)[0], 1.0);
}

TEST(Csv, MissingColumnListsHeader) {
    std::istringstream in("y,x\n1,2\n");
    try {
        load_csv(in, columns("y", "running"));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::missing_column);
        EXPECT_NE(std::string(e.what()).find("y, x"), std::string::npos);
        EXPECT_TRUE(is_config_error(e.code()));
    }
}

TEST(Csv, NonNumericCellReportsLocation) {
    std::istringstream in("y,x\n1,2\n3,abc\n");
    try {
        load_csv(in, columns("y", "x"));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::non_numeric_cell);
        const std::string msg = e.what();
        EXPECT_NE(msg.find("'abc'"), std::string::npos);
        EXPECT_NE(msg.find("line 3"), std::string::npos);
        EXPECT_NE(msg.find("column 'x'"), std::string::npos);
    }
}

TEST(Csv, AllRowsMissing) {
    std::istringstream in("y,x\nNA,1\n2,\n");
    EXPECT_EQ(code_of([&] { load_csv(in, columns("y", "x")); }), Errc::empty_after_filtering);
}

TEST(Csv, NumberParsing) {
    EXPECT_EQ(io::detail::parse_number("+1.5"), 1.5);
    EXPECT_EQ(io::detail::parse_number("-2e3"), -2000.0);
    EXPECT_FALSE(io::detail::parse_number("1.5x").has_value());
    EXPECT_FALSE(io::detail::parse_number("inf").has_value());
    EXPECT_TRUE(io::detail::is_missing("NaN"));
    EXPECT_TRUE(io::detail::is_missing("."));
    EXPECT_FALSE(io::detail::is_missing("0"));
}

TEST(Writers, NumberFormatting) {
    EXPECT_EQ(format_number(std::numeric_limits<double>::quiet_NaN(), 6), "NaN");
    EXPECT_EQ(format_number(-std::numeric_limits<double>::infinity(), 6), "-Inf");
    EXPECT_EQ(format_number(0.1234567, 6), "0.123457");
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1e3, 1e3);
    for (int i = 0; i < 1000; ++i) {
        const double v = u(rng);
        EXPECT_EQ(std::stod(format_number(v, 17)), v);
    }
    EXPECT_EQ(csv_escape("a,b"), "\"a,b\"");
    EXPECT_EQ(csv_escape("q\"x"), "\"q\"\"x\"");
    EXPECT_EQ(csv_escape("plain"), "plain");
}

TEST(Writers, EstimateJsonFields) {
    std::mt19937_64 rng(2);
    Dataset d = oracle::random_data(rng, 600, 6);
    d.covariate_names = {"a", "b", "c", "d", "e", "f"};
    const RDEstimate est = estimate_sharp(d, EstimatorConfig{});
    std::ostringstream os;
    write_estimate(os, est, OutputFormat::json, 77, d.covariate_names);
    const auto j = nlohmann::json::parse(os.str());
    for (const char* key : {"design", "tau_hat", "se", "ci_lower", "ci_upper", "h", "b", "lambda", "lambda_method",
                            "n_selected", "selected_indices", "selected_names", "n_eff", "warnings", "seed"})
        EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_EQ(j["seed"].get<std::uint64_t>(), 77u);
    EXPECT_EQ(j["tau_hat"].get<double>(), est.tau_hat);
    EXPECT_EQ(j["n_selected"].get<std::size_t>(), est.selected.size());
    for (std::size_t k = 0; k < est.selected.size(); ++k) {
        EXPECT_EQ(j["selected_indices"][k].get<int>(), est.selected[k] + 1);
        EXPECT_EQ(j["selected_names"][k].get<std::string>(), d.covariate_names[static_cast<std::size_t>(est.selected[k])]);
    }
    EXPECT_FALSE(j.contains("tau_t"));
}

TEST(Writers, EstimateCsvRoundTrips) {
    std::mt19937_64 rng(3);
    const Dataset d = oracle::random_data(rng, 500, 4);
    const RDEstimate est = estimate_sharp(d, EstimatorConfig{});
    std::ostringstream os;
    write_estimate(os, est, OutputFormat::csv, 5);
    std::istringstream in(os.str());
    const CsvTable t = parse_csv(in);
    ASSERT_EQ(t.rows.size(), 1u);
    EXPECT_EQ(t.header[1], "tau_hat");
    EXPECT_EQ(std::stod(t.rows[0][1]), est.tau_hat);
    EXPECT_EQ(std::stod(t.rows[0][2]), est.se);
    EXPECT_EQ(t.rows[0].back(), "5");
}

TEST(Writers, TextAndMc) {
    RDEstimate est;
    est.tau_hat = 0.0123456789;
    est.lambda = std::numeric_limits<double>::quiet_NaN();
    std::ostringstream os;
    write_estimate(os, est, OutputFormat::text, 9);
    EXPECT_NE(os.str().find("0.0123457"), std::string::npos);
    EXPECT_NE(os.str().find("seed         9"), std::string::npos);

    sim::McSummary sum;
    sum.reps = 3;
    sum.seed = 4;
    sim::McRow row;
    row.label = "Lasso (BCH)";
    row.bias = 0.001;
    sum.rows.push_back(row);
    std::ostringstream mc;
    write_mc(mc, sum, OutputFormat::text);
    EXPECT_NE(mc.str().find("Lasso (BCH)"), std::string::npos);
    EXPECT_NE(mc.str().find("3 replications, seed 4"), std::string::npos);
    std::ostringstream mj;
    write_mc(mj, sum, OutputFormat::json);
    EXPECT_EQ(nlohmann::json::parse(mj.str())["rows"][0]["estimator"], "Lasso (BCH)");
}

TEST(Config, Validation) {
    EXPECT_EQ(format_from_name("json"), OutputFormat::json);
    EXPECT_EQ(code_of([] { format_from_name("xml"); }), Errc::invalid_argument);
    RunConfig cfg;
    EXPECT_EQ(code_of([&] { cfg.validate(); }), Errc::invalid_argument);
    cfg = columns("y", "x");
    EXPECT_NO_THROW(cfg.validate());
    cfg.cutoff = std::numeric_limits<double>::infinity();
    EXPECT_THROW(cfg.validate(), Error);
}
