#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "rdlasso/dataset.hpp"
#include "rdlasso/error.hpp"
#include "rdlasso/inference.hpp"
#include "rdlasso/simulation.hpp"

namespace rdlasso::io {

enum class OutputFormat { text, csv, json };

inline OutputFormat format_from_name(const std::string& name) {
    if (name == "text") return OutputFormat::text;
    if (name == "csv") return OutputFormat::csv;
    if (name == "json") return OutputFormat::json;
    throw Error(Errc::invalid_argument, "unknown output format '" + name + "' (valid: text, csv, json)");
}

struct ColumnMap {
    std::string outcome;
    std::string running;
    std::optional<std::string> treatment;
    std::vector<std::string> covariates;   // explicit list, used when non-empty
    std::optional<std::string> covariate_prefix;
};

struct RunConfig {
    std::string input;
    ColumnMap columns;
    double cutoff = 0.0;
    EstimatorConfig estimator;
    std::uint64_t seed = 0;
    OutputFormat format = OutputFormat::text;
    unsigned threads = 1;

    void validate() const {
        if (!std::isfinite(cutoff)) throw Error(Errc::invalid_argument, "cutoff must be finite");
        if (columns.outcome.empty()) throw Error(Errc::invalid_argument, "no outcome column given (--outcome)");
        if (columns.running.empty()) throw Error(Errc::invalid_argument, "no running variable column given (--running)");
        estimator.validate();
    }
};

// ---------------------------------------------------------------- CSV

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_of_row;  // 1-based physical line where each record starts
};

/// RFC 4180 records: comma separated, optional double quotes, "" inside a
/// quoted field is a literal quote, and quoted fields may span lines.
inline CsvTable parse_csv(std::istream& in) {
    CsvTable table;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false, field_started = false, any = false;
    std::size_t line = 1, record_line = 1;
    auto end_field = [&] {
        record.push_back(field);
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        const bool blank = record.size() == 1 && record[0].empty();
        if (!blank) {
            if (table.header.empty() && table.rows.empty() && !any) {
                table.header = record;
                any = true;
            } else {
                table.rows.push_back(record);
                table.line_of_row.push_back(record_line);
            }
        }
        record.clear();
    };
    char c;
    while (in.get(c)) {
        if (quoted) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get(c);
                    field.push_back('"');
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        if (c == '"' && !field_started) {
            quoted = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\r') {
            if (in.peek() == '\n') continue;
            end_record();
            record_line = ++line;
        } else if (c == '\n') {
            end_record();
            record_line = ++line;
        } else {
            field.push_back(c);
            field_started = true;
        }
    }
    if (quoted) throw Error(Errc::invalid_argument, "unterminated quoted field starting on line " + std::to_string(record_line));
    if (field_started || !record.empty()) end_record();
    if (table.header.empty()) throw Error(Errc::empty_after_filtering, "CSV input has no header row");
    return table;
}

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline bool is_missing(const std::string& cell) {
    return cell.empty() || cell == "NA" || cell == "na" || cell == "N/A" || cell == "NaN" || cell == "nan" ||
           cell == ".";
}

inline std::optional<double> parse_number(const std::string& cell) {
    const char* first = cell.data();
    const char* last = first + cell.size();
    if (first != last && *first == '+') ++first;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
    return v;
}

inline std::size_t column_index(const std::vector<std::string>& header, const std::string& name) {
    for (std::size_t j = 0; j < header.size(); ++j)
        if (header[j] == name) return j;
    std::string known;
    for (std::size_t j = 0; j < header.size(); ++j) known += (j ? ", " : "") + header[j];
    throw Error(Errc::missing_column, "column '" + name + "' not found; header has: " + known);
}

}  // namespace detail

struct LoadResult {
    Dataset data;
    std::size_t dropped = 0;  // rows removed for a missing value in a mapped column
};

/// Builds a Dataset from a parsed table. Rows with a missing value in any
/// mapped column are dropped; the running variable is shifted by the cutoff.
inline LoadResult load_table(const CsvTable& table, const RunConfig& cfg) {
    const auto& cols = cfg.columns;
    std::vector<std::size_t> idx;
    std::vector<std::string> names;
    idx.push_back(detail::column_index(table.header, cols.outcome));
    idx.push_back(detail::column_index(table.header, cols.running));
    if (cols.treatment) idx.push_back(detail::column_index(table.header, *cols.treatment));
    const std::size_t first_cov = idx.size();
    if (!cols.covariates.empty()) {
        for (const auto& name : cols.covariates) {
            idx.push_back(detail::column_index(table.header, name));
            names.push_back(name);
        }
    } else if (cols.covariate_prefix) {
        for (std::size_t j = 0; j < table.header.size(); ++j) {
            const auto& h = table.header[j];
            if (h.rfind(*cols.covariate_prefix, 0) == 0 && h != cols.outcome && h != cols.running &&
                (!cols.treatment || h != *cols.treatment)) {
                idx.push_back(j);
                names.push_back(h);
            }
        }
    }

    std::vector<std::vector<double>> kept;
    LoadResult out;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        std::vector<double> values(idx.size());
        bool missing = false;
        for (std::size_t c = 0; c < idx.size(); ++c) {
            const std::string cell = idx[c] < row.size() ? detail::trim(row[idx[c]]) : std::string();
            if (detail::is_missing(cell)) {
                missing = true;
                continue;
            }
            const auto v = detail::parse_number(cell);
            if (!v)
                throw Error(Errc::non_numeric_cell, "non-numeric value '" + cell + "' in column '" +
                                                        table.header[idx[c]] + "' at line " +
                                                        std::to_string(table.line_of_row[r]) + " (data row " +
                                                        std::to_string(r + 1) + ")");
            values[c] = *v;
        }
        if (missing) {
            ++out.dropped;
            continue;
        }
        kept.push_back(std::move(values));
    }
    if (kept.empty())
        throw Error(Errc::empty_after_filtering, "no complete rows remain after dropping " +
                                                     std::to_string(out.dropped) + " rows with missing values");

    const auto n = static_cast<Eigen::Index>(kept.size());
    const auto p = static_cast<Eigen::Index>(idx.size() - first_cov);
    Vector y(n), x(n), t(n);
    Matrix z(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& v = kept[static_cast<std::size_t>(i)];
        y[i] = v[0];
        x[i] = v[1] - cfg.cutoff;
        if (cols.treatment) t[i] = v[2];
        for (Eigen::Index k = 0; k < p; ++k) z(i, k) = v[first_cov + static_cast<std::size_t>(k)];
    }
    out.data = Dataset(std::move(y), std::move(x), std::move(z));
    if (cols.treatment) out.data.t_obs = std::move(t);
    out.data.covariate_names = std::move(names);
    return out;
}

inline LoadResult load_csv(std::istream& in, const RunConfig& cfg) { return load_table(parse_csv(in), cfg); }

inline LoadResult load_csv(const std::string& path, const RunConfig& cfg) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::invalid_argument, "cannot open input file '" + path + "'");
    return load_csv(in, cfg);
}

// ---------------------------------------------------------------- writers

/// %.{digits}g rendering; 17 digits round-trips any double.
inline std::string format_number(double v, int digits) {
    if (std::isnan(v)) return "NaN";
    if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
    std::ostringstream os;
    os << std::setprecision(digits) << v;
    return os.str();
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

namespace detail {

inline nlohmann::json number(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

inline std::vector<int> one_based(const IndexSet& s) {
    std::vector<int> out;
    for (int k : s) out.push_back(k + 1);
    return out;
}

inline std::string join_indices(const IndexSet& s, char sep) {
    std::string out;
    for (std::size_t j = 0; j < s.size(); ++j) out += (j ? std::string(1, sep) : "") + std::to_string(s[j] + 1);
    return out;
}

inline std::vector<std::string> selected_names(const IndexSet& s, const std::vector<std::string>& names) {
    std::vector<std::string> out;
    for (int k : s)
        out.push_back(static_cast<std::size_t>(k) < names.size() ? names[static_cast<std::size_t>(k)]
                                                                  : "Z" + std::to_string(k + 1));
    return out;
}

}  // namespace detail

inline void write_estimate(std::ostream& os, const RDEstimate& est, OutputFormat fmt, std::uint64_t seed,
                           const std::vector<std::string>& names = {}) {
    const auto sel_names = detail::selected_names(est.selected, names);
    const bool fuzzy = est.design == Design::fuzzy;
    switch (fmt) {
    case OutputFormat::json: {
        nlohmann::json j;
        j["design"] = fuzzy ? "fuzzy" : "sharp";
        j["tau_hat"] = detail::number(est.tau_hat);
        j["se"] = detail::number(est.se);
        j["ci_lower"] = detail::number(est.ci.lower);
        j["ci_upper"] = detail::number(est.ci.upper);
        j["h"] = detail::number(est.h);
        j["b"] = detail::number(est.b);
        j["lambda"] = detail::number(est.lambda);
        j["lambda_method"] = est.lambda_method;
        j["n_selected"] = est.selected.size();
        j["selected_indices"] = detail::one_based(est.selected);
        j["selected_names"] = sel_names;
        j["n_eff"] = est.n_eff;
        if (fuzzy) {
            j["tau_y"] = detail::number(est.tau_y);
            j["tau_t"] = detail::number(est.tau_t);
        }
        j["warnings"] = est.warnings;
        j["seed"] = seed;
        os << j.dump(2) << '\n';
        break;
    }
    case OutputFormat::csv: {
        os << "design,tau_hat,se,ci_lower,ci_upper,h,b,lambda,lambda_method,n_selected,selected_indices,n_eff";
        if (fuzzy) os << ",tau_y,tau_t";
        os << ",seed\n";
        os << (fuzzy ? "fuzzy" : "sharp") << ',' << format_number(est.tau_hat, 17) << ','
           << format_number(est.se, 17) << ',' << format_number(est.ci.lower, 17) << ','
           << format_number(est.ci.upper, 17) << ',' << format_number(est.h, 17) << ','
           << format_number(est.b, 17) << ',' << format_number(est.lambda, 17) << ',' << est.lambda_method << ','
           << est.selected.size() << ',' << csv_escape(detail::join_indices(est.selected, ' ')) << ','
           << est.n_eff;
        if (fuzzy) os << ',' << format_number(est.tau_y, 17) << ',' << format_number(est.tau_t, 17);
        os << ',' << seed << '\n';
        break;
    }
    case OutputFormat::text: {
        os << (fuzzy ? "Fuzzy" : "Sharp") << " RD estimate\n";
        os << "  tau_hat      " << format_number(est.tau_hat, 6) << '\n';
        os << "  se           " << format_number(est.se, 6) << '\n';
        os << "  ci           [" << format_number(est.ci.lower, 6) << ", " << format_number(est.ci.upper, 6)
           << "]\n";
        if (fuzzy) {
            os << "  outcome jump " << format_number(est.tau_y, 6) << '\n';
            os << "  treat. jump  " << format_number(est.tau_t, 6) << '\n';
        }
        os << "  h            " << format_number(est.h, 6) << '\n';
        os << "  b            " << format_number(est.b, 6) << '\n';
        os << "  lambda       " << format_number(est.lambda, 6) << " (" << est.lambda_method << ")\n";
        os << "  n_eff        " << est.n_eff << '\n';
        os << "  selected     " << est.selected.size();
        if (!sel_names.empty()) {
            os << ':';
            for (const auto& s : sel_names) os << ' ' << s;
        }
        os << '\n';
        for (const auto& w : est.warnings) os << "  warning: " << w << '\n';
        os << "  seed         " << seed << '\n';
        break;
    }
    }
}

inline void write_tune(std::ostream& os, const TuneReport& t, OutputFormat fmt, std::uint64_t seed,
                       const std::vector<std::string>& names = {}) {
    switch (fmt) {
    case OutputFormat::json: {
        nlohmann::json j;
        j["b"] = detail::number(t.b);
        j["lambda"] = detail::number(t.lambda);
        j["lambda_method"] = t.lambda_method;
        j["h"] = detail::number(t.h);
        j["n_selected"] = t.selected.size();
        j["selected_indices"] = detail::one_based(t.selected);
        j["selected_names"] = detail::selected_names(t.selected, names);
        j["seed"] = seed;
        os << j.dump(2) << '\n';
        break;
    }
    case OutputFormat::csv:
        os << "b,lambda,lambda_method,h,n_selected,selected_indices,seed\n"
           << format_number(t.b, 17) << ',' << format_number(t.lambda, 17) << ',' << t.lambda_method << ','
           << format_number(t.h, 17) << ',' << t.selected.size() << ','
           << csv_escape(detail::join_indices(t.selected, ' ')) << ',' << seed << '\n';
        break;
    case OutputFormat::text:
        os << "Tuning\n"
           << "  b        " << format_number(t.b, 6) << '\n'
           << "  lambda   " << format_number(t.lambda, 6) << " (" << t.lambda_method << ")\n"
           << "  h        " << format_number(t.h, 6) << '\n'
           << "  selected " << t.selected.size();
        for (const auto& s : detail::selected_names(t.selected, names)) os << ' ' << s;
        os << "\n  seed     " << seed << '\n';
        break;
    }
}

inline void write_balance(std::ostream& os, const BalanceReport& rep, OutputFormat fmt, std::uint64_t seed,
                          const std::vector<std::string>& names = {}) {
    auto name_of = [&](int k) {
        return static_cast<std::size_t>(k) < names.size() ? names[static_cast<std::size_t>(k)]
                                                           : "Z" + std::to_string(k + 1);
    };
    switch (fmt) {
    case OutputFormat::json: {
        nlohmann::json j;
        j["fdr_level"] = rep.fdr_level;
        j["global_reject"] = rep.global_reject;
        j["seed"] = seed;
        j["rows"] = nlohmann::json::array();
        for (const auto& r : rep.rows)
            j["rows"].push_back({{"index", r.index + 1},
                                 {"name", name_of(r.index)},
                                 {"jump", detail::number(r.jump)},
                                 {"se", detail::number(r.se)},
                                 {"p_value", detail::number(r.p_value)},
                                 {"bandwidth", detail::number(r.bandwidth)},
                                 {"bh_rejected", r.bh_rejected}});
        os << j.dump(2) << '\n';
        break;
    }
    case OutputFormat::csv:
        os << "index,name,jump,se,p_value,bandwidth,bh_rejected\n";
        for (const auto& r : rep.rows)
            os << r.index + 1 << ',' << csv_escape(name_of(r.index)) << ',' << format_number(r.jump, 17) << ','
               << format_number(r.se, 17) << ',' << format_number(r.p_value, 17) << ','
               << format_number(r.bandwidth, 17) << ',' << (r.bh_rejected ? 1 : 0) << '\n';
        break;
    case OutputFormat::text:
        os << std::left << std::setw(8) << "index" << std::setw(16) << "name" << std::setw(14) << "jump"
           << std::setw(14) << "se" << std::setw(14) << "p_value" << std::setw(14) << "bandwidth" << "BH\n";
        for (const auto& r : rep.rows)
            os << std::left << std::setw(8) << r.index + 1 << std::setw(16) << name_of(r.index) << std::setw(14)
               << format_number(r.jump, 6) << std::setw(14) << format_number(r.se, 6) << std::setw(14)
               << format_number(r.p_value, 6) << std::setw(14) << format_number(r.bandwidth, 6)
               << (r.bh_rejected ? "reject" : "-") << '\n';
        os << "global null " << (rep.global_reject ? "rejected" : "not rejected") << " at FDR level "
           << format_number(rep.fdr_level, 6) << "; seed " << seed << '\n';
        break;
    }
}

inline void write_mc(std::ostream& os, const sim::McSummary& sum, OutputFormat fmt) {
    switch (fmt) {
    case OutputFormat::json: {
        nlohmann::json j;
        j["reps"] = sum.reps;
        j["seed"] = sum.seed;
        j["rows"] = nlohmann::json::array();
        for (const auto& r : sum.rows)
            j["rows"].push_back({{"estimator", r.label},
                                 {"n_cov_avg", detail::number(r.n_cov_avg)},
                                 {"bias", detail::number(r.bias)},
                                 {"sd", detail::number(r.sd)},
                                 {"avg_se", detail::number(r.avg_se)},
                                 {"ci_length_avg", detail::number(r.ci_length_avg)},
                                 {"coverage_pct", detail::number(r.coverage_pct)},
                                 {"failures", r.failures}});
        os << j.dump(2) << '\n';
        break;
    }
    case OutputFormat::csv:
        os << "estimator,n_cov_avg,bias,sd,avg_se,ci_length_avg,coverage_pct,failures,reps,seed\n";
        for (const auto& r : sum.rows)
            os << csv_escape(r.label) << ',' << format_number(r.n_cov_avg, 17) << ',' << format_number(r.bias, 17)
               << ',' << format_number(r.sd, 17) << ',' << format_number(r.avg_se, 17) << ','
               << format_number(r.ci_length_avg, 17) << ',' << format_number(r.coverage_pct, 17) << ','
               << r.failures << ',' << sum.reps << ',' << sum.seed << '\n';
        break;
    case OutputFormat::text:
        os << std::left << std::setw(28) << "Estimator" << std::right << std::setw(12) << "# Cov." << std::setw(12)
           << "Bias" << std::setw(12) << "SD" << std::setw(12) << "Avg. SE" << std::setw(12) << "CI length"
           << std::setw(12) << "Cov. %" << std::setw(8) << "Fail" << '\n';
        for (const auto& r : sum.rows)
            os << std::left << std::setw(28) << r.label << std::right << std::setw(12)
               << format_number(r.n_cov_avg, 6) << std::setw(12) << format_number(r.bias, 6) << std::setw(12)
               << format_number(r.sd, 6) << std::setw(12) << format_number(r.avg_se, 6) << std::setw(12)
               << format_number(r.ci_length_avg, 6) << std::setw(12) << format_number(r.coverage_pct, 6)
               << std::setw(8) << r.failures << '\n';
        os << sum.reps << " replications, seed " << sum.seed << '\n';
        break;
    }
}

}  // namespace rdlasso::io
