#include "envtrack/timecourse.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace envtrack::timecourse {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<double> curve_window(const Tmif& t, std::size_t begin, std::size_t end) {
    const Eigen::VectorXd c = t.curve();
    return {c.data() + begin, c.data() + end};
}
}  // namespace

std::vector<double> default_durations() {
    std::vector<double> d;
    for (int m = 1; m <= 25; m += 2) d.push_back(m);
    return d;
}

void check_durations(std::span<const double> minutes) {
    for (std::size_t i = 0; i < minutes.size(); ++i) {
        if (!(minutes[i] > 0.0)) throw InvalidInput("durations must be positive");
        if (i > 0 && !(minutes[i] > minutes[i - 1])) throw InvalidInput("durations must be strictly increasing");
    }
}

Eigen::Index crop_samples(double minutes, double fs) {
    if (!(minutes > 0.0)) throw InvalidInput("crop length must be positive");
    // 1e-9 keeps e.g. 0.1 min * 60 * 128 from flooring one sample short.
    return static_cast<Eigen::Index>(std::floor(minutes * 60.0 * fs + 1e-9));
}

Tmif crop_and_tmif(const Recording& eeg, std::span<const double> env, double minutes,
                   const LagGrid& grid, const ChannelSelection& selection,
                   const gcmi::TmifOptions& opts) {
    const Eigen::Index n = crop_samples(minutes, eeg.fs());
    if (n > eeg.n_samples() || static_cast<std::size_t>(n) > env.size())
        throw InvalidInput("crop of " + std::to_string(minutes) + " min exceeds the recording");
    return gcmi::tmif_multivariate(eeg.head(n), env.first(static_cast<std::size_t>(n)), grid, selection, opts);
}

Subject SubjectTimecourse::at(std::optional<std::size_t> d) const {
    Subject s{id, group, age, {}};
    for (const auto& [band, tmif] : full) {
        if (!d) {
            s.tmifs.emplace(band, tmif);
            continue;
        }
        const auto& list = by_duration.at(band);
        if (*d >= list.size()) throw InvalidInput("duration index out of range");
        s.tmifs.emplace(band, list[*d]);
    }
    return s;
}

SubjectTimecourse compute_timecourse(const std::map<Band, Recording>& eeg_bands,
                                     const std::map<Band, std::vector<double>>& envelopes,
                                     std::span<const double> durations, const LagGrid& grid,
                                     const ChannelSelection& selection, const gcmi::TmifOptions& opts) {
    check_durations(durations);
    SubjectTimecourse tc;
    tc.durations.assign(durations.begin(), durations.end());
    for (const auto& [band, eeg] : eeg_bands) {
        auto it = envelopes.find(band);
        if (it == envelopes.end()) throw InvalidInput("no envelope for band " + std::string(to_string(band)));
        const std::vector<double>& env = it->second;
        if (static_cast<std::size_t>(eeg.n_samples()) != env.size())
            throw InvalidInput("EEG and envelope lengths differ");
        tc.full.emplace(band, gcmi::tmif_multivariate(eeg, env, grid, selection, opts));
        auto& list = tc.by_duration[band];
        for (double m : durations) list.push_back(crop_and_tmif(eeg, env, m, grid, selection, opts));
        const Eigen::Index half = eeg.n_samples() / 2;
        const std::span<const double> e(env);
        tc.halves[band] = {
            gcmi::tmif_multivariate(eeg.slice(0, half), e.subspan(0, static_cast<std::size_t>(half)), grid,
                                    selection, opts),
            gcmi::tmif_multivariate(eeg.slice(half, half),
                                    e.subspan(static_cast<std::size_t>(half), static_cast<std::size_t>(half)),
                                    grid, selection, opts)};
    }
    return tc;
}

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw InvalidInput("pearson needs two equally long series");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw InvalidInput("correlation with a zero-variance series");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

void finish_curve(StabilityCurve& c) {
    c.average.assign(c.durations.size(), kNaN);
    for (std::size_t d = 0; d < c.durations.size(); ++d) {
        double sum = 0.0;
        int k = 0;
        for (const auto& [band, pts] : c.bands)
            if (!std::isnan(pts[d].value)) {
                sum += pts[d].value;
                ++k;
            }
        if (k > 0) c.average[d] = sum / k;
    }
    const bool complete = std::none_of(c.average.begin(), c.average.end(), [](double v) { return std::isnan(v); });
    if (complete && c.durations.size() >= 3) c.knee = knee_point(c.durations, c.average);
}

const std::vector<double>& shared_durations(const std::vector<SubjectTimecourse>& cohort) {
    if (cohort.empty()) throw InvalidInput("empty cohort");
    for (const auto& s : cohort)
        if (s.durations != cohort.front().durations)
            throw InvalidInput("subjects were cropped at different durations");
    return cohort.front().durations;
}

}  // namespace

StabilityCurve within_subject_stability(const std::vector<SubjectTimecourse>& cohort,
                                        std::span<const Band> bands,
                                        std::optional<std::pair<double, double>> window_ms) {
    StabilityCurve c;
    c.kind = StabilityKind::within_subject;
    c.durations = shared_durations(cohort);
    for (Band b : bands) {
        auto& pts = c.bands[b];
        for (std::size_t d = 0; d < c.durations.size(); ++d) {
            std::vector<double> rs;
            for (const auto& s : cohort) {
                const Tmif& full = s.full.at(b);
                const auto [begin, end] = window_ms ? full.grid.window(window_ms->first, window_ms->second)
                                                    : std::pair<std::size_t, std::size_t>{0, full.grid.size()};
                try {
                    rs.push_back(pearson(curve_window(s.by_duration.at(b).at(d), begin, end),
                                         curve_window(full, begin, end)));
                } catch (const InvalidInput&) {
                    // zero-variance TMIF: r undefined, left out
                }
            }
            StabilityPoint p{kNaN, kNaN, static_cast<int>(rs.size())};
            if (!rs.empty()) {
                const double n = static_cast<double>(rs.size());
                p.value = std::accumulate(rs.begin(), rs.end(), 0.0) / n;
                if (rs.size() > 1) {
                    double ss = 0.0;
                    for (double r : rs) ss += (r - p.value) * (r - p.value);
                    p.std_error = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
                }
            }
            pts.push_back(p);
        }
    }
    finish_curve(c);
    return c;
}

StabilityCurve between_subject_stability(const std::vector<SubjectTimecourse>& cohort,
                                         std::span<const Band> bands) {
    if (cohort.size() < 3) throw InvalidInput("between-subject stability needs at least 3 subjects");
    StabilityCurve c;
    c.kind = StabilityKind::between_subject;
    c.durations = shared_durations(cohort);
    for (Band b : bands) {
        std::vector<double> full;
        for (const auto& s : cohort) full.push_back(gcmi::mean_mi(s.full.at(b)));
        auto& pts = c.bands[b];
        for (std::size_t d = 0; d < c.durations.size(); ++d) {
            std::vector<double> part;
            for (const auto& s : cohort) part.push_back(gcmi::mean_mi(s.by_duration.at(b).at(d)));
            StabilityPoint p{kNaN, kNaN, static_cast<int>(cohort.size())};
            try {
                p.value = pearson(part, full);
            } catch (const InvalidInput&) {
                p.n = 0;
            }
            pts.push_back(p);
        }
    }
    finish_curve(c);
    return c;
}

std::optional<double> knee_point(std::span<const double> xs, std::span<const double> ys, double S) {
    const std::size_t n = xs.size();
    if (n < 3 || ys.size() != n) throw InvalidInput("knee detection needs at least 3 points");
    for (std::size_t i = 1; i < n; ++i)
        if (!(xs[i] > xs[i - 1])) throw InvalidInput("knee detection needs strictly increasing x");
    const auto [ymin, ymax] = std::minmax_element(ys.begin(), ys.end());
    if (*ymax == *ymin) return std::nullopt;

    std::vector<double> xn(n), diff(n);
    for (std::size_t i = 0; i < n; ++i) {
        xn[i] = (xs[i] - xs.front()) / (xs.back() - xs.front());
        diff[i] = (ys[i] - *ymin) / (*ymax - *ymin) - xn[i];
    }
    // Local extrema with the neighbourhood clipped at the ends.
    auto neighbour = [&](std::size_t i, int step) {
        if (step < 0) return i == 0 ? diff[0] : diff[i - 1];
        return i + 1 == n ? diff[n - 1] : diff[i + 1];
    };
    std::vector<std::size_t> maxima;
    std::vector<char> is_max(n, 0), is_min(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        is_max[i] = diff[i] >= neighbour(i, -1) && diff[i] >= neighbour(i, +1);
        is_min[i] = diff[i] <= neighbour(i, -1) && diff[i] <= neighbour(i, +1);
        if (is_max[i]) maxima.push_back(i);
    }
    if (maxima.empty()) return std::nullopt;
    const double step = std::abs((xn.back() - xn.front()) / static_cast<double>(n - 1));

    std::size_t next_max = 0, threshold_index = 0;
    double threshold = 0.0;
    bool active = true;
    for (std::size_t i = maxima.front(); i + 1 < n; ++i) {
        if (is_max[i]) {
            threshold = diff[maxima[next_max++]] - S * step;
            threshold_index = i;
            active = true;
        }
        if (is_min[i]) {
            threshold = 0.0;
            active = false;
        }
        if (active && diff[i + 1] < threshold) return xs[threshold_index];
    }
    return std::nullopt;
}

DurationCurve classification_vs_duration(const std::vector<SubjectTimecourse>& cohort,
                                         const classifier::EvalOptions& opts) {
    DurationCurve out;
    out.durations = shared_durations(cohort);
    std::vector<double> acc;
    for (std::size_t d = 0; d < out.durations.size(); ++d) {
        std::vector<Subject> subjects;
        for (const auto& s : cohort) subjects.push_back(s.at(d));
        out.reports.push_back(classifier::nested_loso_evaluate(subjects, opts));
        acc.push_back(out.reports.back().metrics.accuracy);
    }
    if (acc.size() >= 3) out.knee = knee_point(out.durations, acc);
    return out;
}

std::vector<Reliability> split_half_reliability(const std::vector<SubjectTimecourse>& cohort,
                                                std::span<const Band> bands) {
    static const boost::math::normal standard;
    const double z975 = boost::math::quantile(standard, 0.975);
    std::vector<Reliability> out;
    for (Band b : bands)
        for (Group g : {Group::aphasia, Group::control}) {
            std::vector<double> first, second;
            for (const auto& s : cohort)
                if (s.group == g) {
                    const auto& h = s.halves.at(b);
                    first.push_back(gcmi::mean_mi(h[0]));
                    second.push_back(gcmi::mean_mi(h[1]));
                }
            if (first.size() < 3)
                throw InvalidInput("split-half reliability needs at least 3 subjects per group");
            Reliability rel{b, g, static_cast<int>(first.size()), pearson(first, second), kNaN, kNaN, 1.0};
            const double n = rel.n;
            if (std::abs(rel.r) == 1.0) {
                rel.ci_lo = rel.ci_hi = rel.r;
                rel.p = std::numeric_limits<double>::min();
            } else {
                if (rel.n > 3) {
                    const double z = std::atanh(rel.r), se = 1.0 / std::sqrt(n - 3.0);
                    rel.ci_lo = std::tanh(z - z975 * se);
                    rel.ci_hi = std::tanh(z + z975 * se);
                }
                const double t = rel.r * std::sqrt((n - 2.0) / (1.0 - rel.r * rel.r));
                const boost::math::students_t dist(n - 2.0);
                rel.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
            }
            rel.p = std::clamp(rel.p * static_cast<double>(bands.size()), std::numeric_limits<double>::min(), 1.0);
            out.push_back(rel);
        }
    return out;
}

FisherZ fisher_z_compare(double r1, int n1, double r2, int n2) {
    if (!(std::abs(r1) < 1.0) || !(std::abs(r2) < 1.0)) throw InvalidInput("Fisher z needs |r| < 1");
    if (n1 <= 3 || n2 <= 3) throw InvalidInput("Fisher z needs n > 3");
    static const boost::math::normal standard;
    FisherZ out;
    out.z = (std::atanh(r1) - std::atanh(r2)) / std::sqrt(1.0 / (n1 - 3.0) + 1.0 / (n2 - 3.0));
    out.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(standard, std::abs(out.z))));
    return out;
}

Eigen::MatrixXd band_correlation_matrix(const std::vector<Subject>& cohort, Group group,
                                        std::span<const Band> bands) {
    std::vector<std::vector<double>> v(bands.size());
    for (const auto& s : cohort)
        if (s.group == group)
            for (std::size_t b = 0; b < bands.size(); ++b) {
                auto it = s.tmifs.find(bands[b]);
                if (it == s.tmifs.end())
                    throw InvalidInput("subject '" + s.id + "' lacks a " + std::string(to_string(bands[b])) + " TMIF");
                v[b].push_back(gcmi::mean_mi(it->second));
            }
    if (v.empty() || v.front().size() < 3) throw InvalidInput("band correlations need at least 3 subjects");
    const auto k = static_cast<Eigen::Index>(bands.size());
    Eigen::MatrixXd r = Eigen::MatrixXd::Identity(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = i + 1; j < k; ++j)
            r(i, j) = r(j, i) = pearson(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    return r;
}

}  // namespace envtrack::timecourse
