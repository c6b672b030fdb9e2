#pragma once

// Building blocks shared by the TMIF and the permutation null: copula transforms of
// contiguous segments computed from one global sort, and a Gaussian MI routine that
// keeps the EEG-side factorization fixed while the stimulus side varies.

#include "envtrack/core.hpp"
#include "envtrack/gcmi.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace envtrack::gcmi::detail {

/// Normal quantiles for integer ranks 1..m of an m-sample segment. Tables are shared
/// through a process-wide cache (bounded in size) since every subject of a cohort
/// usually needs the same segment lengths.
class NormalTable {
public:
    explicit NormalTable(std::size_t m);
    std::size_t size() const { return m_; }
    /// Integer ranks are looked up; tied (half-integer) ranks are evaluated directly.
    double at(double rank) const;
    double at_integer(std::size_t rank) const { return (*values_)[rank]; }

private:
    std::size_t m_;
    std::shared_ptr<const std::vector<double>> values_;
};

/// A column together with its stable ascending sort order.
class RankedColumn {
public:
    explicit RankedColumn(std::span<const double> x);
    std::size_t size() const { return x_.size(); }

    /// Copula values of x[begin, begin + table.size()) written to out[0..m).
    /// Throws InvalidInput if the segment holds a single distinct value.
    void copula_segment(std::size_t begin, const NormalTable& table, double* out) const;

private:
    std::vector<double> x_;
    std::vector<std::uint32_t> order_;
    bool has_ties_ = false;
};

/// Centered copula block of the EEG side at one lag, with its covariance factorization.
struct PreparedX {
    Eigen::MatrixXd z;    // m x p, centered
    Eigen::MatrixXd chol; // lower Cholesky factor of the (ridged) covariance
};

PreparedX prepare_x(const std::vector<const RankedColumn*>& cols, std::size_t begin,
                    const NormalTable& table, const MiOptions& opts);

/// MI (bits) between the prepared X block and one copula-transformed column y (length m).
double mi_with_column(const PreparedX& x, std::span<const double> y, const MiOptions& opts);

/// Segment bounds for one lag: pairs (env[e + i], eeg[g + i]) for i in [0, m).
struct Overlap {
    std::size_t env_begin;
    std::size_t eeg_begin;
    std::size_t length;
};
Overlap overlap_for(int lag, std::size_t n);

/// Throws unless the shortest overlap holds at least 10 samples per grid lag.
void check_overlap(const LagGrid& grid, std::size_t n);

/// Entropy bias term for a d-dimensional Gaussian over n samples (sum of digamma halves).
double bias_psi_sum(std::size_t n, std::size_t d);

/// Cholesky factor with the relative-pivot singularity test; returns false when singular.
bool cholesky(const Eigen::MatrixXd& a, Eigen::MatrixXd& lower, double& logdet);

}  // namespace envtrack::gcmi::detail
