#pragma once

// Domain types shared by every analysis stage.

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace envtrack {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated.
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// A covariance matrix was (numerically) singular.
class SingularCovariance : public Error {
public:
    using Error::Error;
};

/// On-disk data did not match its declared layout.
class FormatError : public Error {
public:
    using Error::Error;
};

enum class SignalKind { eeg, audio, tmif };

std::string_view to_string(SignalKind kind);
SignalKind parse_signal_kind(std::string_view text);

enum class Group { control, aphasia };

std::string_view to_string(Group group);
Group parse_group(std::string_view text);

/// +1 for the positive (aphasia) class, -1 for controls.
inline int class_label(Group group) { return group == Group::aphasia ? +1 : -1; }

enum class Band { delta, theta, alpha, beta, gamma, broad };

std::string_view to_string(Band band);
Band parse_band(std::string_view text);

/// The five narrow bands used as classifier features.
inline constexpr std::array<Band, 5> kNarrowBands{Band::delta, Band::theta, Band::alpha,
                                                  Band::beta, Band::gamma};
/// Broadband followed by the five narrow bands.
inline constexpr std::array<Band, 6> kAllBands{Band::broad, Band::delta, Band::theta,
                                               Band::alpha, Band::beta,  Band::gamma};

struct BandSpec {
    Band name = Band::broad;
    double lo_hz = 0.0;
    double hi_hz = 0.0;

    /// Canonical edges: delta 0.5-4, theta 4-8, alpha 8-12, beta 12-30, gamma 30-49, broad 0.5-49 Hz.
    static BandSpec canonical(Band band);
    static BandSpec make(Band band, double lo_hz, double hi_hz);

    bool operator==(const BandSpec&) const = default;
};

/// Multichannel time series stored time x channels (sample-major rows, one column per channel).
///
/// Construction checks the structural invariants (positive rate, one name per column, mono
/// audio). Sample values are not checked here so that corrupted input can still be loaded
/// and reported by validate_recording().
class Recording {
public:
    Recording(Eigen::MatrixXd samples, double fs, std::vector<std::string> channel_names,
              SignalKind kind);

    const Eigen::MatrixXd& samples() const { return samples_; }
    double fs() const { return fs_; }
    const std::vector<std::string>& channel_names() const { return channel_names_; }
    SignalKind kind() const { return kind_; }

    Eigen::Index n_samples() const { return samples_.rows(); }
    Eigen::Index n_channels() const { return samples_.cols(); }
    double duration_s() const { return static_cast<double>(n_samples()) / fs_; }

    /// Column index of a channel; throws InvalidInput if absent.
    Eigen::Index channel_index(std::string_view name) const;
    std::span<const double> channel(Eigen::Index c) const {
        return {samples_.col(c).data(), static_cast<std::size_t>(samples_.rows())};
    }

    /// First n samples.
    Recording head(Eigen::Index n) const;
    /// Samples [begin, begin + n).
    Recording slice(Eigen::Index begin, Eigen::Index n) const;

private:
    Eigen::MatrixXd samples_;
    double fs_;
    std::vector<std::string> channel_names_;
    SignalKind kind_;
};

struct ValidationIssue {
    enum class Kind { non_finite, flat_channel, fs_mismatch };
    Kind kind;
    std::string channel;  // empty for recording-level issues
    std::string detail;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;
    bool ok() const { return issues.empty(); }
    bool has(ValidationIssue::Kind kind) const;
};

/// Reports non-finite samples, flat (std == 0) channels and a sampling-rate mismatch.
/// Report-only: never throws for content problems.
ValidationReport validate_recording(const Recording& rec,
                                    std::optional<double> expected_fs = std::nullopt);

/// Throws InvalidInput if the recording contains non-finite samples.
void require_finite(const Recording& rec);

/// Contiguous integer lag grid covering [t_min_ms, t_max_ms], rounded outward.
class LagGrid {
public:
    static LagGrid make(double fs, double t_min_ms, double t_max_ms);
    /// -200..500 ms at 128 Hz: lags -26..64.
    static LagGrid default_grid() { return make(128.0, -200.0, 500.0); }
    static LagGrid from_lags(double fs, int first_lag, int last_lag);

    double fs() const { return fs_; }
    int first_lag() const { return first_; }
    int last_lag() const { return last_; }
    std::size_t size() const { return static_cast<std::size_t>(last_ - first_ + 1); }
    int lag(std::size_t i) const { return first_ + static_cast<int>(i); }
    double time_ms(std::size_t i) const { return lag(i) * 1000.0 / fs_; }
    int max_abs_lag() const;

    /// Index range [begin, end) of lags with time in [t0_ms, t1_ms] (inclusive window).
    /// Throws InvalidInput if the window is not inside the grid.
    std::pair<std::size_t, std::size_t> window(double t0_ms, double t1_ms) const;

    bool operator==(const LagGrid& other) const {
        return fs_ == other.fs_ && first_ == other.first_ && last_ == other.last_;
    }

private:
    LagGrid(double fs, int first, int last) : fs_(fs), first_(first), last_(last) {}
    double fs_;
    int first_;
    int last_;
};

/// Mutual information (bits) as a function of lag. One row per channel for the
/// single-channel variant; a single row named "multivariate" otherwise.
struct Tmif {
    LagGrid grid = LagGrid::default_grid();
    std::vector<std::string> rows;
    Eigen::MatrixXd values;  // rows x lags

    bool is_multivariate() const { return rows.size() == 1 && rows.front() == "multivariate"; }
    /// The single curve of a multivariate TMIF.
    Eigen::VectorXd curve() const;
};

struct Subject {
    std::string id;
    Group group = Group::control;
    double age = 0.0;
    std::map<Band, Tmif> tmifs;  // multivariate TMIF per band
};

/// Ordered list of channel names used by the multivariate TMIF.
using ChannelSelection = std::vector<std::string>;

/// Mixes a base seed with an index into an independent 64-bit seed (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace envtrack
