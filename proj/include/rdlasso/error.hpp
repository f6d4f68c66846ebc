#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rdlasso {

enum class Errc {
    invalid_argument,
    unknown_kernel,
    rank_deficient,
    too_few_observations,
    degenerate_covariate,
    nonfinite_quantile,
    degenerate_density,
    nonpositive_variance,
    weak_jump,
    not_positive_definite,
    empty_effective_sample,
    missing_column,
    non_numeric_cell,
    empty_after_filtering,
};

constexpr std::string_view to_string(Errc code) {
    switch (code) {
    case Errc::invalid_argument: return "InvalidArgument";
    case Errc::unknown_kernel: return "UnknownKernel";
    case Errc::rank_deficient: return "RankDeficient";
    case Errc::too_few_observations: return "TooFewObservations";
    case Errc::degenerate_covariate: return "DegenerateCovariate";
    case Errc::nonfinite_quantile: return "NonfiniteQuantile";
    case Errc::degenerate_density: return "DegenerateDensity";
    case Errc::nonpositive_variance: return "NonpositiveVariance";
    case Errc::weak_jump: return "WeakJump";
    case Errc::not_positive_definite: return "NotPositiveDefinite";
    case Errc::empty_effective_sample: return "EmptyEffectiveSample";
    case Errc::missing_column: return "MissingColumn";
    case Errc::non_numeric_cell: return "NonNumericCell";
    case Errc::empty_after_filtering: return "EmptyAfterFiltering";
    }
    return "Unknown";
}

/// True for errors caused by user input or configuration rather than by the numerics.
constexpr bool is_config_error(Errc code) {
    switch (code) {
    case Errc::invalid_argument:
    case Errc::unknown_kernel:
    case Errc::missing_column:
    case Errc::non_numeric_cell:
    case Errc::empty_after_filtering:
        return true;
    default:
        return false;
    }
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace rdlasso
