#include "envtrack/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace envtrack {

std::string_view to_string(SignalKind kind) {
    switch (kind) {
    case SignalKind::eeg: return "eeg";
    case SignalKind::audio: return "audio";
    case SignalKind::tmif: return "tmif";
    }
    return "eeg";
}

SignalKind parse_signal_kind(std::string_view text) {
    if (text == "eeg") return SignalKind::eeg;
    if (text == "audio") return SignalKind::audio;
    if (text == "tmif") return SignalKind::tmif;
    throw FormatError("unknown signal kind '" + std::string(text) + "'");
}

std::string_view to_string(Group group) {
    return group == Group::aphasia ? "aphasia" : "control";
}

Group parse_group(std::string_view text) {
    if (text == "control") return Group::control;
    if (text == "aphasia") return Group::aphasia;
    throw InvalidInput("unknown group '" + std::string(text) + "'");
}

std::string_view to_string(Band band) {
    switch (band) {
    case Band::delta: return "delta";
    case Band::theta: return "theta";
    case Band::alpha: return "alpha";
    case Band::beta: return "beta";
    case Band::gamma: return "gamma";
    case Band::broad: return "broad";
    }
    return "broad";
}

Band parse_band(std::string_view text) {
    for (Band b : kAllBands)
        if (to_string(b) == text) return b;
    throw InvalidInput("unknown band '" + std::string(text) + "'");
}

BandSpec BandSpec::canonical(Band band) {
    switch (band) {
    case Band::delta: return {band, 0.5, 4.0};
    case Band::theta: return {band, 4.0, 8.0};
    case Band::alpha: return {band, 8.0, 12.0};
    case Band::beta: return {band, 12.0, 30.0};
    case Band::gamma: return {band, 30.0, 49.0};
    case Band::broad: return {band, 0.5, 49.0};
    }
    return {band, 0.5, 49.0};
}

BandSpec BandSpec::make(Band band, double lo_hz, double hi_hz) {
    if (!(lo_hz > 0.0) || !(hi_hz > lo_hz))
        throw InvalidInput("band edges must satisfy 0 < lo < hi");
    return {band, lo_hz, hi_hz};
}

Recording::Recording(Eigen::MatrixXd samples, double fs, std::vector<std::string> channel_names,
                     SignalKind kind)
    : samples_(std::move(samples)), fs_(fs), channel_names_(std::move(channel_names)),
      kind_(kind) {
    if (!(fs_ > 0.0) || !std::isfinite(fs_))
        throw InvalidInput("sampling rate must be positive");
    if (static_cast<Eigen::Index>(channel_names_.size()) != samples_.cols())
        throw InvalidInput("channel name count does not match column count");
    if (kind_ == SignalKind::audio && samples_.cols() != 1)
        throw InvalidInput("audio recordings must have exactly one channel");
}

Eigen::Index Recording::channel_index(std::string_view name) const {
    auto it = std::find(channel_names_.begin(), channel_names_.end(), name);
    if (it == channel_names_.end())
        throw InvalidInput("channel '" + std::string(name) + "' not present in recording");
    return it - channel_names_.begin();
}

Recording Recording::head(Eigen::Index n) const { return slice(0, n); }

Recording Recording::slice(Eigen::Index begin, Eigen::Index n) const {
    if (begin < 0 || n < 0 || begin + n > n_samples())
        throw InvalidInput("slice beyond recording");
    return Recording(samples_.middleRows(begin, n), fs_, channel_names_, kind_);
}

bool ValidationReport::has(ValidationIssue::Kind kind) const {
    return std::any_of(issues.begin(), issues.end(),
                       [kind](const ValidationIssue& i) { return i.kind == kind; });
}

ValidationReport validate_recording(const Recording& rec, std::optional<double> expected_fs) {
    ValidationReport report;
    const auto& x = rec.samples();
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const auto& name = rec.channel_names()[static_cast<std::size_t>(c)];
        Eigen::Index bad = 0;
        for (Eigen::Index t = 0; t < x.rows(); ++t)
            if (!std::isfinite(x(t, c))) ++bad;
        if (bad > 0) {
            report.issues.push_back({ValidationIssue::Kind::non_finite, name,
                                     std::to_string(bad) + " non-finite sample(s)"});
            continue;
        }
        if (x.rows() > 0) {
            const double mean = x.col(c).mean();
            const double ss = (x.col(c).array() - mean).square().sum();
            if (ss == 0.0)
                report.issues.push_back({ValidationIssue::Kind::flat_channel, name, "std == 0"});
        }
    }
    if (expected_fs && *expected_fs != rec.fs()) {
        std::ostringstream os;
        os << "fs " << rec.fs() << " Hz, expected " << *expected_fs << " Hz";
        report.issues.push_back({ValidationIssue::Kind::fs_mismatch, "", os.str()});
    }
    return report;
}

void require_finite(const Recording& rec) {
    if (!rec.samples().allFinite()) throw InvalidInput("recording contains non-finite samples");
}

LagGrid LagGrid::make(double fs, double t_min_ms, double t_max_ms) {
    if (!(fs > 0.0)) throw InvalidInput("lag grid sampling rate must be positive");
    if (!(t_max_ms > t_min_ms)) throw InvalidInput("lag grid requires t_min < t_max");
    // Outward rounding with a guard against representation noise on exact multiples.
    const int first = static_cast<int>(std::floor(t_min_ms * fs / 1000.0 + 1e-9));
    const int last = static_cast<int>(std::ceil(t_max_ms * fs / 1000.0 - 1e-9));
    return LagGrid(fs, first, last);
}

LagGrid LagGrid::from_lags(double fs, int first_lag, int last_lag) {
    if (!(fs > 0.0)) throw InvalidInput("lag grid sampling rate must be positive");
    if (last_lag < first_lag) throw InvalidInput("lag grid requires first <= last");
    return LagGrid(fs, first_lag, last_lag);
}

int LagGrid::max_abs_lag() const { return std::max(std::abs(first_), std::abs(last_)); }

std::pair<std::size_t, std::size_t> LagGrid::window(double t0_ms, double t1_ms) const {
    const double eps = 1e-9;
    if (t1_ms < t0_ms) throw InvalidInput("window end precedes start");
    if (t0_ms < time_ms(0) - eps || t1_ms > time_ms(size() - 1) + eps)
        throw InvalidInput("window lies outside the lag grid");
    std::size_t begin = size();
    std::size_t end = 0;
    for (std::size_t i = 0; i < size(); ++i) {
        const double t = time_ms(i);
        if (t >= t0_ms - eps && t <= t1_ms + eps) {
            begin = std::min(begin, i);
            end = i + 1;
        }
    }
    if (begin >= end) throw InvalidInput("window contains no lag samples");
    return {begin, end};
}

Eigen::VectorXd Tmif::curve() const {
    if (values.rows() != 1) throw InvalidInput("TMIF has more than one row");
    return values.row(0).transpose();
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace envtrack
