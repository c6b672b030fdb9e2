#include "envtrack/nullperm.hpp"

#include "envtrack/parallel.hpp"
#include "fft.hpp"
#include "lagged_mi.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <random>

namespace envtrack::nullperm {

std::vector<double> spectrum_matched_noise(std::span<const double> x, std::uint64_t seed) {
    const std::size_t n = x.size();
    if (n < 4) throw InvalidInput("surrogate needs at least 4 samples");
    auto bins = detail::rfft(x);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    const std::size_t last = (n % 2 == 0) ? n / 2 - 1 : n / 2;  // Nyquist bin stays real
    for (std::size_t k = 1; k <= last; ++k) bins[k] = std::polar(std::abs(bins[k]), phase(rng));
    return detail::irfft(bins, n);
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw InvalidInput("percentile of an empty set");
    if (!(q > 0.0) || q > 100.0) throw InvalidInput("percentile must lie in (0, 100]");
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    // 1e-9 guards q/100 * n landing a hair above an integer.
    auto idx = static_cast<std::size_t>(std::ceil(q / 100.0 * n - 1e-9));
    idx = std::clamp<std::size_t>(idx, 1, values.size()) - 1;
    return values[idx];
}

NullDistribution significance_level(const Recording& eeg, std::span<const double> env,
                                    const LagGrid& grid, const ChannelSelection& selection,
                                    const BandSpec& band, const NullOptions& opts) {
    if (opts.n_perm < 20) throw InvalidInput("significance level needs at least 20 permutations");
    if (eeg.kind() != SignalKind::eeg) throw InvalidInput("null distribution needs an EEG recording");
    if (eeg.fs() != grid.fs()) throw InvalidInput("EEG rate differs from the lag grid rate");
    if (static_cast<std::size_t>(eeg.n_samples()) != env.size())
        throw InvalidInput("EEG and envelope lengths differ");
    if (selection.empty()) throw InvalidInput("channel selection is empty");
    const std::size_t n = env.size();
    gcmi::detail::check_overlap(grid, n);

    std::vector<gcmi::detail::RankedColumn> cols;
    for (const auto& name : selection) cols.emplace_back(eeg.channel(eeg.channel_index(name)));
    std::vector<const gcmi::detail::RankedColumn*> ptrs;
    for (const auto& c : cols) ptrs.push_back(&c);

    const auto n_perm = static_cast<std::size_t>(opts.n_perm);
    const std::size_t n_lags = grid.size();
    // Surrogates are processed in batches so that each lag's EEG factorization is reused
    // across many permutations while memory stays bounded (~4M samples per batch).
    const std::size_t batch = std::clamp<std::size_t>(4'000'000 / n, 1, n_perm);
    std::vector<double> stats(n_perm, 0.0);
    const int jobs = opts.tmif.jobs;

    for (std::size_t start = 0; start < n_perm; start += batch) {
        const std::size_t count = std::min(batch, n_perm - start);
        std::vector<std::optional<gcmi::detail::RankedColumn>> surrogates(count);
        parallel_for(count, jobs, [&](std::size_t b) {
            const auto s = spectrum_matched_noise(env, mix_seed(opts.seed, start + b));
            surrogates[b].emplace(s);
        });
        Eigen::MatrixXd mi(static_cast<Eigen::Index>(n_lags), static_cast<Eigen::Index>(count));
        parallel_for(n_lags, jobs, [&](std::size_t l) {
            const auto ov = gcmi::detail::overlap_for(grid.lag(l), n);
            const gcmi::detail::NormalTable table(ov.length);
            const auto x = gcmi::detail::prepare_x(ptrs, ov.eeg_begin, table, opts.tmif.mi);
            std::vector<double> zy(ov.length);
            for (std::size_t b = 0; b < count; ++b) {
                surrogates[b]->copula_segment(ov.env_begin, table, zy.data());
                mi(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(b)) =
                    gcmi::detail::mi_with_column(x, zy, opts.tmif.mi);
            }
        });
        for (std::size_t b = 0; b < count; ++b)
            stats[start + b] = mi.col(static_cast<Eigen::Index>(b)).maxCoeff();
    }

    NullDistribution out;
    out.band = band;
    out.values = std::move(stats);
    out.percentile_used = opts.percentile;
    out.significance_level = percentile(out.values, opts.percentile);
    return out;
}

}  // namespace envtrack::nullperm
