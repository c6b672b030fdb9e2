#pragma once

// Gaussian-copula mutual information and temporal mutual information functions (TMIFs).
//
// The estimator is the closed-form Gaussian MI in bits,
//     I(X;Y) = 1/(2 ln 2) * ln( |S_X| |S_Y| / |S_XY| ),
// applied to copula-normalized data: each variable is ranked (ties get their average
// rank), rank r of n is mapped to r/(n+1), and the standard-normal quantile is taken.

#include "envtrack/core.hpp"

#include <span>
#include <vector>

namespace envtrack::gcmi {

/// Standard-normal quantile of rank / (n + 1).
double rank_to_normal(double rank, std::size_t n);

/// Copula transform of one variable. Requires len >= 3 and at least two distinct values.
std::vector<double> copula_transform(std::span<const double> x);
/// Column-wise copula transform.
Eigen::MatrixXd copula_transform(const Eigen::MatrixXd& x);

struct MiOptions {
    /// Analytic small-sample bias correction of the entropy terms (off by default).
    bool bias_correct = false;
    /// Adds ridge_lambda * I to the joint covariance.
    bool ridge = false;
    double ridge_lambda = 1e-9;
};

/// Gaussian MI (bits) between the columns of x (n x p) and y (n x q), which are expected
/// to be copula-transformed already. Requires n > p + q + 2. Throws SingularCovariance when
/// a Cholesky pivot falls below 1e-12 of its diagonal entry.
double gaussian_mi(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const MiOptions& opts = {});

/// copula_transform on every column, then gaussian_mi.
double gcmi(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const MiOptions& opts = {});

struct TmifOptions {
    MiOptions mi;
    int jobs = 1;
};

/// MI between env(t) and each EEG channel at t + lag, for every lag of the grid.
/// Positive lags mean the EEG follows the stimulus. Only overlapping samples enter each
/// estimate and the copula transform is applied per overlapping segment.
/// Requires the overlap at the largest |lag| to hold at least 10 samples per grid lag.
Tmif tmif_single_channel(const Recording& eeg, std::span<const double> env, const LagGrid& grid,
                         const TmifOptions& opts = {});

/// MI between env and the joint vector of the selected channels at each lag.
Tmif tmif_multivariate(const Recording& eeg, std::span<const double> env, const LagGrid& grid,
                       const ChannelSelection& selection, const TmifOptions& opts = {});

/// Mean TMIF value over lags whose time lies in [t0_ms, t1_ms] (inclusive), for one row.
double mean_mi(const Tmif& tmif, double t0_ms = 0.0, double t1_ms = 400.0, Eigen::Index row = 0);

}  // namespace envtrack::gcmi
