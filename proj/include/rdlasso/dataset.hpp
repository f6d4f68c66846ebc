#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rdlasso/error.hpp"

namespace rdlasso {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IndexSet = std::vector<int>;  // sorted, 0-based covariate indices

/// Sample (Y_i, X_i, Z_i) with the running variable already centered at the cutoff.
struct Dataset {
    Vector y;
    Vector x;
    Matrix z;                    // n x p
    std::optional<Vector> t_obs; // observed treatment, fuzzy designs only
    std::vector<std::string> covariate_names;

    Dataset() = default;
    Dataset(Vector y_, Vector x_, Matrix z_, std::optional<Vector> t = std::nullopt)
        : y(std::move(y_)), x(std::move(x_)), z(std::move(z_)), t_obs(std::move(t)) {
        validate();
    }

    Eigen::Index n() const { return y.size(); }
    Eigen::Index p() const { return z.cols(); }

    /// Sharp assignment: X = 0 counts as treated.
    static bool treated(double x) { return x >= 0.0; }

    Vector sharp_treatment() const {
        return x.unaryExpr([](double v) { return treated(v) ? 1.0 : 0.0; });
    }

    /// Same running variable and covariates, different outcome.
    Dataset with_outcome(Vector new_y) const {
        Dataset d = *this;
        d.y = std::move(new_y);
        d.validate();
        return d;
    }

    /// Same outcome and running variable, no covariates.
    Dataset without_covariates() const {
        Dataset d;
        d.y = y;
        d.x = x;
        d.z = Matrix(y.size(), 0);
        d.t_obs = t_obs;
        return d;
    }

    /// Keeps only the listed covariate columns, in the given order.
    Dataset with_covariates(const IndexSet& cols) const {
        Dataset d = without_covariates();
        d.z.resize(n(), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t j = 0; j < cols.size(); ++j) {
            d.z.col(static_cast<Eigen::Index>(j)) = z.col(cols[j]);
            if (!covariate_names.empty())
                d.covariate_names.push_back(covariate_names[static_cast<std::size_t>(cols[j])]);
        }
        return d;
    }

    void validate() const {
        if (y.size() < 1)
            throw Error(Errc::invalid_argument, "dataset must contain at least one observation");
        if (x.size() != y.size() || z.rows() != y.size())
            throw Error(Errc::invalid_argument, "outcome, running variable and covariates differ in length");
        if (t_obs && t_obs->size() != y.size())
            throw Error(Errc::invalid_argument, "treatment vector length differs from outcome");
        if (!y.allFinite() || !x.allFinite() || !z.allFinite() || (t_obs && !t_obs->allFinite()))
            throw Error(Errc::invalid_argument, "dataset contains NaN or Inf");
    }
};

}  // namespace rdlasso
