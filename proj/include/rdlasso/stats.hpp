#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "rdlasso/dataset.hpp"
#include "rdlasso/error.hpp"
#include "rdlasso/kernels.hpp"

namespace rdlasso::stats {

inline double normal_cdf(double z) {
    return boost::math::cdf(boost::math::normal_distribution<double>(), z);
}

/// Upper-tail probability 1 - Phi(z), accurate for large z.
inline double normal_sf(double z) {
    return boost::math::cdf(boost::math::complement(boost::math::normal_distribution<double>(), z));
}

inline double normal_quantile(double prob) {
    if (!(prob > 0.0 && prob < 1.0))
        throw Error(Errc::nonfinite_quantile, "normal quantile requested at " + std::to_string(prob));
    return boost::math::quantile(boost::math::normal_distribution<double>(), prob);
}

inline double mean(const Vector& v) { return v.mean(); }

inline double sample_variance(const Vector& v) {
    if (v.size() < 2) return 0.0;
    const double m = v.mean();
    return (v.array() - m).square().sum() / static_cast<double>(v.size() - 1);
}

/// Linear-interpolation sample quantile (type 7).
inline double quantile(std::vector<double> values, double prob) {
    if (values.empty()) throw Error(Errc::invalid_argument, "quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const double pos = prob * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

/// Gaussian rule-of-thumb bandwidth for the given sample, 1.06 min(sd, IQR/1.349) n^(-1/5).
inline double silverman_bandwidth(const Vector& x) {
    const double sd = std::sqrt(sample_variance(x));
    std::vector<double> v(x.data(), x.data() + x.size());
    const double iqr = quantile(v, 0.75) - quantile(v, 0.25);
    double spread = sd;
    if (iqr > 0.0) spread = std::min(sd, iqr / 1.349);
    return 1.06 * spread * std::pow(static_cast<double>(x.size()), -0.2);
}

/// Kernel density estimate of the running variable at the cutoff, using the
/// rule-of-thumb bandwidth rescaled to the kernel's canonical bandwidth.
inline double density_at_cutoff(const Vector& x, const Kernel& kernel) {
    const double bw = silverman_bandwidth(x) * kernel.canonical_bandwidth_ratio();
    if (!(bw > 0.0) || !std::isfinite(bw))
        throw Error(Errc::degenerate_density, "running variable has no spread");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) acc += kernel.scaled(x[i], bw);
    const double f = acc / static_cast<double>(x.size());
    if (!(f > 1e-12))
        throw Error(Errc::degenerate_density, "estimated density of the running variable at the cutoff is zero");
    return f;
}

/// Benjamini-Hochberg step-up rule; returns a rejection flag per p-value.
inline std::vector<bool> benjamini_hochberg(const std::vector<double>& p_values, double q) {
    const std::size_t m = p_values.size();
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
    std::size_t cutoff = 0;  // number of rejections
    for (std::size_t rank = m; rank >= 1; --rank) {
        if (p_values[order[rank - 1]] <= q * static_cast<double>(rank) / static_cast<double>(m)) {
            cutoff = rank;
            break;
        }
    }
    std::vector<bool> reject(m, false);
    for (std::size_t r = 0; r < cutoff; ++r) reject[order[r]] = true;
    return reject;
}

/// SplitMix64 finalizer; used to derive independent stream seeds from (seed, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace rdlasso::stats
