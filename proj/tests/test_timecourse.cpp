#include "envtrack/timecourse.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace envtrack;
using namespace envtrack::timecourse;

namespace {

Tmif flat_tmif(double v) {
    Tmif t;
    t.rows = {"multivariate"};
    t.values = Eigen::MatrixXd::Constant(1, static_cast<Eigen::Index>(t.grid.size()), v);
    return t;
}

// Envelope-driven two-channel EEG: the coupling sets how much of the delayed envelope
// each channel carries.
std::pair<Recording, std::vector<double>> coupled(double coupling, double minutes, std::uint64_t seed) {
    const double fs = 128.0;
    const auto n = static_cast<Eigen::Index>(minutes * 60 * fs);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    std::vector<double> env(static_cast<std::size_t>(n));
    double s = 0.0;
    for (auto& v : env) v = s = 0.9 * s + g(rng);
    Eigen::MatrixXd x(n, 2);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index c = 0; c < 2; ++c)
            x(i, c) = (i >= 12 ? coupling * env[static_cast<std::size_t>(i - 12)] : 0.0) + g(rng);
    return {Recording(x, fs, {"Cz", "Fz"}, SignalKind::eeg), env};
}

SubjectTimecourse coupled_timecourse(double coupling, std::uint64_t seed, Group g = Group::control) {
    auto [eeg, env] = coupled(coupling, 2.0, seed);
    const std::vector<double> durations{0.5, 1.0, 2.0};
    auto tc = compute_timecourse({{Band::delta, eeg}}, {{Band::delta, env}}, durations, LagGrid::default_grid(),
                                 {"Cz", "Fz"});
    tc.id = "s" + std::to_string(seed);
    tc.group = g;
    return tc;
}

}  // namespace

TEST_CASE("durations and cropping") {
    const auto d = default_durations();
    CHECK(d.size() == 13);
    CHECK(d.front() == 1.0);
    CHECK(d.back() == 25.0);
    CHECK_NOTHROW(check_durations(d));
    CHECK_THROWS_AS(check_durations(std::vector<double>{1, 1}), InvalidInput);
    CHECK_THROWS_AS(check_durations(std::vector<double>{0, 1}), InvalidInput);
    CHECK(crop_samples(1.0, 128.0) == 7680);
    CHECK(crop_samples(0.1, 128.0) == 768);
    CHECK_THROWS_AS(crop_samples(0.0, 128.0), InvalidInput);
}

TEST_CASE("pearson") {
    const auto x = testutil::gaussian_vec(50, 1);
    auto y = testutil::gaussian_vec(50, 2);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += 0.5 * x[i];
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < 50; ++i) {
        mx += x[i] / 50;
        my += y[i] / 50;
    }
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < 50; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    CHECK(pearson(x, y) == doctest::Approx(sxy / std::sqrt(sxx * syy)).epsilon(1e-12));
    CHECK(pearson(x, x) == 1.0);
    CHECK_THROWS_AS(pearson(x, std::vector<double>(50, 1.0)), InvalidInput);
    CHECK_THROWS_AS(pearson(x, y.data() ? std::span<const double>(y).first(10) : std::span<const double>()),
                    InvalidInput);
}

TEST_CASE("knee detection follows the reference Kneedle") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int knees = 0;
    for (int trial = 0; trial < 400; ++trial) {
        const int n = 3 + static_cast<int>(u(rng) * 20);
        std::vector<double> x(static_cast<std::size_t>(n)), y(x.size());
        double xv = 0.0;
        const double tau = 0.2 + 5.0 * u(rng), noise = trial % 2 ? 0.05 : 0.0;
        for (int i = 0; i < n; ++i) {
            xv += 0.2 + u(rng);
            x[i] = xv;
            y[i] = 1.0 - std::exp(-xv / tau) + noise * (u(rng) - 0.5);
        }
        const auto want = oracle::kneedle(x, y);
        const auto got = knee_point(x, y);
        REQUIRE(got.has_value() == want.has_value());
        if (got) {
            CHECK(*got == *want);
            ++knees;
        }
    }
    CHECK(knees > 100);
    CHECK_FALSE(knee_point(std::vector<double>{1, 2, 3}, std::vector<double>{2, 2, 2}).has_value());
    CHECK_FALSE(knee_point(std::vector<double>{1, 2, 3, 4, 5}, std::vector<double>{1, 2, 3, 4, 5}).has_value());
    CHECK_THROWS_AS(knee_point(std::vector<double>{1, 2}, std::vector<double>{1, 2}), InvalidInput);
    CHECK_THROWS_AS(knee_point(std::vector<double>{1, 3, 2}, std::vector<double>{1, 2, 3}), InvalidInput);
}

TEST_CASE("Fisher z comparison") {
    const auto f = fisher_z_compare(0.8, 30, 0.3, 30);
    CHECK(f.z == doctest::Approx(2.899).epsilon(0.001 / 2.899));
    CHECK(f.p == doctest::Approx(std::erfc(std::abs(f.z) / std::sqrt(2.0))).epsilon(1e-9));
    CHECK(fisher_z_compare(0.3, 30, 0.8, 30).z == doctest::Approx(-f.z));
    CHECK(fisher_z_compare(0.5, 20, 0.5, 40).p == doctest::Approx(1.0));
    CHECK_THROWS_AS(fisher_z_compare(1.0, 30, 0.3, 30), InvalidInput);
    CHECK_THROWS_AS(fisher_z_compare(0.5, 3, 0.3, 30), InvalidInput);
}

TEST_CASE("split-half reliability") {
    const std::vector<double> a{0.1, 0.3, 0.2, 0.5, 0.4, 0.35, 0.6, 0.45};
    const std::vector<double> b{0.12, 0.25, 0.3, 0.4, 0.5, 0.3, 0.55, 0.5};
    std::vector<SubjectTimecourse> cohort;
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (Group g : {Group::control, Group::aphasia}) {
            SubjectTimecourse s;
            s.group = g;
            for (Band band : {Band::delta, Band::theta, Band::alpha}) {
                const double noise = g == Group::aphasia ? 0.01 * static_cast<double>((i * 7) % 5) : 0.0;
                s.halves[band] = {flat_tmif(a[i]), flat_tmif(b[i] + noise)};
            }
            cohort.push_back(s);
        }
    }
    const std::vector<Band> bands{Band::delta, Band::theta, Band::alpha};
    const auto rel = split_half_reliability(cohort, bands);
    REQUIRE(rel.size() == 6);
    for (const auto& r : rel) {
        CHECK(r.n == 8);
        if (r.group != Group::control) continue;
        // reference values from scipy.stats.pearsonr
        CHECK(r.r == doctest::Approx(0.8839285714285714).epsilon(1e-12));
        CHECK(r.p == doctest::Approx(0.010731065174694503).epsilon(1e-8));
        const double se = 1.0 / std::sqrt(5.0);
        CHECK(r.ci_lo == doctest::Approx(std::tanh(std::atanh(r.r) - 1.959963984540054 * se)).epsilon(1e-9));
        CHECK(r.ci_hi == doctest::Approx(std::tanh(std::atanh(r.r) + 1.959963984540054 * se)).epsilon(1e-9));
    }
    cohort.resize(4);
    CHECK_THROWS_AS(split_half_reliability(cohort, bands), InvalidInput);
}

TEST_CASE("band correlation matrix") {
    std::vector<Subject> cohort;
    for (int i = 0; i < 10; ++i) {
        Subject s{"s" + std::to_string(i), i % 2 ? Group::aphasia : Group::control, 60, {}};
        for (Band b : kAllBands) s.tmifs[b] = flat_tmif(std::sin(1.3 * i + static_cast<double>(b)) + 2.0);
        cohort.push_back(s);
    }
    const auto m = band_correlation_matrix(cohort, Group::control);
    REQUIRE(m.rows() == static_cast<Eigen::Index>(kAllBands.size()));
    CHECK((m - m.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(m.diagonal().isOnes());
    std::vector<double> d, t;
    for (const auto& s : cohort)
        if (s.group == Group::control) {
            d.push_back(gcmi::mean_mi(s.tmifs.at(Band::delta)));
            t.push_back(gcmi::mean_mi(s.tmifs.at(Band::theta)));
        }
    CHECK(m(1, 2) == doctest::Approx(pearson(d, t)).epsilon(1e-12));
    cohort[0].tmifs.erase(Band::gamma);
    CHECK_THROWS_AS(band_correlation_matrix(cohort, Group::control), InvalidInput);
    CHECK_THROWS_AS(band_correlation_matrix(std::vector<Subject>(cohort.begin() + 1, cohort.begin() + 4),
                                            Group::control),
                    InvalidInput);
}

TEST_CASE("timecourse of a coupled recording") {
    const auto tc = coupled_timecourse(0.6, 1);
    const auto& full = tc.full.at(Band::delta);
    REQUIRE(tc.by_duration.at(Band::delta).size() == 3);
    // the 2-minute crop is the whole recording
    CHECK(tc.by_duration.at(Band::delta)[2].values == full.values);
    Eigen::Index peak = 0;
    full.values.row(0).maxCoeff(&peak);
    CHECK(full.grid.lag(static_cast<std::size_t>(peak)) == 12);
    for (const auto& h : tc.halves.at(Band::delta)) {
        h.values.row(0).maxCoeff(&peak);
        CHECK(h.grid.lag(static_cast<std::size_t>(peak)) == 12);
    }
    CHECK(tc.at(0).tmifs.at(Band::delta).values == tc.by_duration.at(Band::delta)[0].values);
    CHECK(tc.at().tmifs.at(Band::delta).values == full.values);
    CHECK_THROWS_AS(tc.at(3), InvalidInput);

    auto [eeg, env] = coupled(0.6, 1.0, 2);
    env.pop_back();
    CHECK_THROWS_AS(compute_timecourse({{Band::delta, eeg}}, {{Band::delta, env}}, std::vector<double>{0.5},
                                       LagGrid::default_grid(), {"Cz"}),
                    InvalidInput);
    CHECK_THROWS_AS(crop_and_tmif(eeg, env, 2.0, LagGrid::default_grid(), {"Cz"}), InvalidInput);
    CHECK_THROWS_AS(crop_and_tmif(eeg, env, 0.0, LagGrid::default_grid(), {"Cz"}), InvalidInput);
}

TEST_CASE("stability curves") {
    std::vector<SubjectTimecourse> cohort;
    for (int i = 0; i < 4; ++i) cohort.push_back(coupled_timecourse(0.2 + 0.2 * i, 10 + i));
    const std::vector<Band> bands{Band::delta};

    const auto within = within_subject_stability(cohort, bands);
    const auto& w = within.bands.at(Band::delta);
    REQUIRE(w.size() == 3);
    CHECK(w[2].value == doctest::Approx(1.0));
    CHECK(w[2].n == 4);
    CHECK(w[0].value > 0.8);
    CHECK(w[0].value <= w[1].value);
    CHECK(w[1].value <= w[2].value);
    CHECK(within.average == std::vector<double>{w[0].value, w[1].value, w[2].value});

    const auto between = between_subject_stability(cohort, bands);
    const auto& b = between.bands.at(Band::delta);
    CHECK(b[2].value == doctest::Approx(1.0));
    CHECK(b[0].value > 0.9);  // coupling strengths are far apart
    CHECK(std::isnan(b[0].std_error));

    CHECK_THROWS_AS(between_subject_stability({cohort[0], cohort[1]}, bands), InvalidInput);
    auto mixed = cohort;
    mixed[1].durations = {0.5, 1.0, 1.5};
    CHECK_THROWS_AS(within_subject_stability(mixed, bands), InvalidInput);
}

TEST_CASE("knee of a saturating exponential against kneed") {
    std::vector<double> x, y;
    for (int i = 0; i <= 20; ++i) {
        x.push_back(0.5 * i);
        y.push_back(1.0 - std::exp(-x.back() / 2.0));
    }
    const auto k = knee_point(x, y);
    REQUIRE(k.has_value());
    CHECK(std::abs(*k - 3.0) <= 0.5);  // kneed 0.8.6 (S = 1, concave, increasing) gives 3.0
}

TEST_CASE("knees ignore affine rescaling of y") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> x, y, z;
        for (int i = 0; i < 12; ++i) {
            x.push_back(1.0 + 2.0 * i);
            y.push_back(std::log(x.back()) + 0.1 * u(rng));
            z.push_back(3.5 * y.back() - 12.0);
        }
        CHECK(knee_point(x, y) == knee_point(x, z));
    }
}

TEST_CASE("split-half edge cases") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g;
    const std::vector<Band> bands{Band::theta};
    auto cohort_of = [&](bool duplicate) {
        std::vector<SubjectTimecourse> c;
        for (int i = 0; i < 24; ++i) {
            SubjectTimecourse s;
            s.group = i % 2 ? Group::aphasia : Group::control;
            const double a = g(rng);
            s.halves[Band::theta] = {flat_tmif(a), flat_tmif(duplicate ? a : g(rng))};
            c.push_back(s);
        }
        return c;
    };
    for (const auto& r : split_half_reliability(cohort_of(true), bands)) {
        CHECK(r.r == doctest::Approx(1.0));
        CHECK(r.p > 0.0);
    }
    // independent halves: p is uniform, so about 5% fall below 0.05
    int small = 0, runs = 0;
    double mean_p = 0.0;
    for (int rep = 0; rep < 400; ++rep)
        for (const auto& r : split_half_reliability(cohort_of(false), bands)) {
            CHECK(r.r >= -1.0);
            CHECK(r.r <= 1.0);
            CHECK(r.p > 0.0);
            CHECK(r.p <= 1.0);
            small += r.p < 0.05;
            mean_p += r.p;
            ++runs;
        }
    CHECK(mean_p / runs == doctest::Approx(0.5).epsilon(0.1));
    CHECK(std::abs(static_cast<double>(small) / runs - 0.05) < 0.02);
}

TEST_CASE("band correlations of duplicated and independent features") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> g;
    double mean_abs = 0.0;
    const int seeds = 50;
    for (int s = 0; s < seeds; ++s) {
        std::vector<Subject> cohort;
        for (int i = 0; i < 27; ++i) {
            Subject sub{"s", Group::aphasia, 60, {}};
            for (Band b : kAllBands) sub.tmifs[b] = flat_tmif(g(rng));
            sub.tmifs[Band::beta] = sub.tmifs[Band::alpha];
            cohort.push_back(sub);
        }
        const auto m = band_correlation_matrix(cohort, Group::aphasia);
        CHECK(m(3, 4) == doctest::Approx(1.0));  // alpha and beta
        double sum = 0.0;
        int k = 0;
        for (Eigen::Index i = 0; i < 6; ++i)
            for (Eigen::Index j = i + 1; j < 6; ++j)
                if (!(i == 3 && j == 4)) {
                    sum += std::abs(m(i, j));
                    ++k;
                }
        mean_abs += sum / k / seeds;
    }
    CHECK(mean_abs < 0.25);
}

namespace {

SubjectTimecourse noise_timecourse(Group g, std::size_t n_durations, std::mt19937_64& rng) {
    std::normal_distribution<double> n01;
    SubjectTimecourse s;
    s.group = g;
    s.age = 70.0 + 5.0 * n01(rng);
    s.id = "x" + std::to_string(rng() % 1000000);
    for (std::size_t d = 0; d < n_durations; ++d) s.durations.push_back(static_cast<double>(2 * d + 1));
    for (Band b : kNarrowBands) {
        auto noisy = [&] {
            Tmif t = flat_tmif(0.0);
            for (Eigen::Index l = 0; l < t.values.cols(); ++l) t.values(0, l) = n01(rng);
            return t;
        };
        s.full[b] = noisy();
        for (std::size_t d = 0; d < n_durations; ++d) s.by_duration[b].push_back(noisy());
    }
    return s;
}

}  // namespace

TEST_CASE("classification against recording length") {
    std::mt19937_64 rng(6);
    classifier::EvalOptions o;
    o.c_grid = {1.0};
    o.prune_grid_ms = {200.0, 400.0};
    o.inner_folds = 4;

    std::vector<SubjectTimecourse> single;
    for (int i = 0; i < 12; ++i) single.push_back(noise_timecourse(i < 6 ? Group::control : Group::aphasia, 1, rng));
    const auto one = classification_vs_duration(single, o);
    CHECK(one.reports.size() == 1);
    CHECK_FALSE(one.knee.has_value());

    // no effect: every duration sits at chance
    std::vector<SubjectTimecourse> null;
    for (int i = 0; i < 49; ++i) null.push_back(noise_timecourse(i < 22 ? Group::control : Group::aphasia, 3, rng));
    const auto curve = classification_vs_duration(null, o);
    REQUIRE(curve.reports.size() == 3);
    double mean = 0.0;
    for (const auto& r : curve.reports) mean += r.metrics.accuracy / 3.0;
    CHECK(std::abs(mean - 0.5) <= 1.96 * std::sqrt(0.25 / 49));
}
