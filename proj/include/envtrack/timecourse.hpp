#pragma once

// Recording-length analyses: TMIFs on cropped recordings, stability curves, knee points,
// split-half reliability and band correlations of mean MI.

#include "envtrack/classifier.hpp"
#include "envtrack/core.hpp"
#include "envtrack/gcmi.hpp"

#include <array>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace envtrack::timecourse {

/// 1, 3, 5, ..., 25 minutes.
std::vector<double> default_durations();
/// Throws unless strictly increasing and positive.
void check_durations(std::span<const double> minutes);

/// Number of samples in the first `minutes` of a recording at fs (floor).
Eigen::Index crop_samples(double minutes, double fs);

/// Multivariate TMIF on the first floor(minutes * 60 * fs) samples of band EEG and envelope.
Tmif crop_and_tmif(const Recording& eeg, std::span<const double> env, double minutes,
                   const LagGrid& grid, const ChannelSelection& selection,
                   const gcmi::TmifOptions& opts = {});

/// Multivariate TMIFs of one subject on the full recording, each duration and both halves.
struct SubjectTimecourse {
    std::string id;
    Group group = Group::control;
    double age = 0.0;
    std::vector<double> durations;
    std::map<Band, Tmif> full;
    std::map<Band, std::vector<Tmif>> by_duration;   // aligned with durations
    std::map<Band, std::array<Tmif, 2>> halves;      // first and second half

    /// The subject with the TMIFs of duration index d (full recording when d is absent).
    Subject at(std::optional<std::size_t> d = std::nullopt) const;
};

/// Halves use the recording cropped to an even number of samples.
SubjectTimecourse compute_timecourse(const std::map<Band, Recording>& eeg_bands,
                                     const std::map<Band, std::vector<double>>& envelopes,
                                     std::span<const double> durations, const LagGrid& grid,
                                     const ChannelSelection& selection,
                                     const gcmi::TmifOptions& opts = {});

/// Pearson correlation. Throws InvalidInput when either input has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

enum class StabilityKind { within_subject, between_subject };

struct StabilityPoint {
    double value = 0.0;   // mean r (within) or r (between); NaN when undefined
    double std_error = 0.0; // across subjects (within only), else NaN
    int n = 0;            // subjects contributing
};

struct StabilityCurve {
    StabilityKind kind = StabilityKind::within_subject;
    std::vector<double> durations;
    std::map<Band, std::vector<StabilityPoint>> bands;
    std::vector<double> average;        // across-band mean per duration
    std::optional<double> knee;         // on the average curve
};

/// Per subject, band and duration: Pearson r between the duration TMIF and the full TMIF
/// over lags in [t0_ms, t1_ms] (default: the whole grid). Undefined r is left out.
StabilityCurve within_subject_stability(const std::vector<SubjectTimecourse>& cohort,
                                        std::span<const Band> bands,
                                        std::optional<std::pair<double, double>> window_ms = std::nullopt);

/// Per band and duration: Pearson r across subjects between mean MI (0-400 ms) at that
/// duration and on the full recording. Requires at least 3 subjects.
StabilityCurve between_subject_stability(const std::vector<SubjectTimecourse>& cohort,
                                         std::span<const Band> bands);

/// Kneedle, concave increasing, S = 1, first knee on the sampled grid.
/// Requires at least 3 points with strictly increasing xs.
std::optional<double> knee_point(std::span<const double> xs, std::span<const double> ys, double S = 1.0);

struct DurationCurve {
    std::vector<double> durations;
    std::vector<classifier::EvaluationReport> reports;
    std::optional<double> knee;   // on accuracy
};

DurationCurve classification_vs_duration(const std::vector<SubjectTimecourse>& cohort,
                                         const classifier::EvalOptions& opts = {});

struct Reliability {
    Band band = Band::delta;
    Group group = Group::control;
    int n = 0;
    double r = 0.0;
    double ci_lo = 0.0;   // 95% via Fisher z; NaN for n <= 3
    double ci_hi = 0.0;
    double p = 1.0;       // two-tailed, Bonferroni-corrected over the bands, capped at 1
};

/// Split-half reliability of mean MI (0-400 ms) per band and group.
std::vector<Reliability> split_half_reliability(const std::vector<SubjectTimecourse>& cohort,
                                                std::span<const Band> bands);

struct FisherZ {
    double z = 0.0;
    double p = 1.0;   // two-tailed, uncorrected
};

/// Compares two independent correlations. Requires |r| < 1 and n > 3.
FisherZ fisher_z_compare(double r1, int n1, double r2, int n2);

/// Pearson r across subjects of `group` between the mean MI (0-400 ms) of every band pair.
Eigen::MatrixXd band_correlation_matrix(const std::vector<Subject>& cohort, Group group,
                                        std::span<const Band> bands = kAllBands);

}  // namespace envtrack::timecourse
