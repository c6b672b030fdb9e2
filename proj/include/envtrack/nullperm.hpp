#pragma once

// Spectrum-matched surrogate envelopes and per-subject significance levels of the
// multivariate TMIF.

#include "envtrack/core.hpp"
#include "envtrack/gcmi.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace envtrack::nullperm {

/// Phase-randomized copy of x: every FFT magnitude is kept, phases are drawn uniformly
/// with conjugate symmetry (DC and Nyquist bins stay real). Requires len >= 4.
std::vector<double> spectrum_matched_noise(std::span<const double> x, std::uint64_t seed);

enum class Statistic { max_over_lags };

struct NullDistribution {
    BandSpec band;
    Statistic statistic = Statistic::max_over_lags;
    std::vector<double> values;  // one statistic per permutation, permutation order
    double significance_level = 0.0;
    double percentile_used = 95.0;
};

/// Order statistic at sorted index ceil(q/100 * n) - 1 (0-based).
double percentile(std::vector<double> values, double q);

struct NullOptions {
    int n_perm = 1000;
    double percentile = 95.0;
    std::uint64_t seed = 0;
    gcmi::TmifOptions tmif;
};

/// Per permutation, the multivariate TMIF against a fresh surrogate of env; the statistic is
/// the maximum over lags. Permutation i uses seed mix_seed(seed, i), so results do not
/// depend on the worker count. Requires n_perm >= 20.
NullDistribution significance_level(const Recording& eeg, std::span<const double> env,
                                    const LagGrid& grid, const ChannelSelection& selection,
                                    const BandSpec& band, const NullOptions& opts = {});

}  // namespace envtrack::nullperm
