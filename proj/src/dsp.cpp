#include "envtrack/dsp.hpp"

#include "envtrack/parallel.hpp"
#include "fft.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>
#include <sstream>
#include <tuple>

namespace envtrack::dsp {

namespace {

constexpr double kPi = std::numbers::pi;

bool is_integer_ratio(double fs_in, double fs_out, int& factor) {
    const double r = fs_in / fs_out;
    const double rounded = std::round(r);
    if (rounded < 1.0 || std::abs(r - rounded) > 1e-9 * r) return false;
    factor = static_cast<int>(rounded);
    return true;
}

}  // namespace

double erb_rate(double hz) { return 21.4 * std::log10(4.37e-3 * hz + 1.0); }

double inverse_erb_rate(double erb) { return (std::pow(10.0, erb / 21.4) - 1.0) / 4.37e-3; }

double erb_bandwidth(double hz) { return 24.7 * (4.37e-3 * hz + 1.0); }

std::vector<double> erb_space(double lo_hz, double hi_hz, int n) {
    if (n < 2) throw InvalidInput("erb_space needs at least 2 frequencies");
    if (!(lo_hz >= 0.0) || !(hi_hz > lo_hz)) throw InvalidInput("erb_space needs 0 <= lo < hi");
    const double e0 = erb_rate(lo_hz);
    const double e1 = erb_rate(hi_hz);
    std::vector<double> f(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        f[static_cast<std::size_t>(i)] = inverse_erb_rate(e0 + (e1 - e0) * i / (n - 1));
    f.front() = lo_hz;
    f.back() = hi_hz;
    return f;
}

GammatoneBank GammatoneBank::make(double fs, double lo_hz, double hi_hz, int n) {
    if (!(fs > 2.0 * hi_hz)) throw InvalidInput("gammatone bank centre frequencies exceed Nyquist");
    return GammatoneBank{erb_space(lo_hz, hi_hz, n), fs, 4};
}

std::vector<double> GammatoneBank::filter(std::span<const double> x, std::size_t k) const {
    // Complex one-pole cascade: each stage (1-|a|)/(1 - a z^-1) has unit gain at the centre
    // frequency; the real part of the analytic-like output carries half the amplitude.
    const double fc = center_hz.at(k);
    const double bw = 1.019 * erb_bandwidth(fc);
    const double radius = std::exp(-2.0 * kPi * bw / fs);
    const std::complex<double> a = std::polar(radius, 2.0 * kPi * fc / fs);
    const double gain = 1.0 - radius;
    std::vector<std::complex<double>> state(static_cast<std::size_t>(order), {0.0, 0.0});
    std::vector<double> y(x.size());
    for (std::size_t t = 0; t < x.size(); ++t) {
        std::complex<double> v(x[t], 0.0);
        for (auto& s : state) {
            s = gain * v + a * s;
            v = s;
        }
        y[t] = 2.0 * v.real();
    }
    return y;
}

std::vector<double> extract_envelope(const Recording& audio, const GammatoneBank& bank) {
    if (audio.kind() != SignalKind::audio) throw InvalidInput("envelope extraction needs audio");
    if (audio.n_samples() == 0) throw InvalidInput("envelope extraction on an empty signal");
    if (audio.fs() < 10000.0) throw InvalidInput("audio must be sampled at >= 10 kHz");
    if (bank.fs != audio.fs()) throw InvalidInput("gammatone bank rate differs from audio rate");
    int factor = 0;
    if (!is_integer_ratio(audio.fs(), kEnvelopeRate, factor))
        throw InvalidInput("audio rate must be an integer multiple of 512 Hz");
    require_finite(audio);
    const auto x = audio.channel(0);
    std::vector<double> sum(x.size(), 0.0);
    for (std::size_t k = 0; k < bank.center_hz.size(); ++k) {
        const auto sub = bank.filter(x, k);
        for (std::size_t t = 0; t < sub.size(); ++t) sum[t] += std::pow(std::abs(sub[t]), 0.6);
    }
    const double inv = 1.0 / static_cast<double>(bank.center_hz.size());
    for (auto& v : sum) v *= inv;
    return resample(sum, audio.fs(), kEnvelopeRate);
}

std::vector<double> extract_envelope(const Recording& audio) {
    return extract_envelope(audio, GammatoneBank::make(audio.fs()));
}

// ---- least-squares FIR design ----

namespace {

// integral over [w1, w2] of cos(m w) dw
double cos_integral(int m, double w1, double w2) {
    if (m == 0) return w2 - w1;
    return (std::sin(m * w2) - std::sin(m * w1)) / m;
}

std::vector<double> solve_ls(const std::vector<LsBand>& bands, double fs, int order) {
    const int half = order / 2;
    const int n = half + 1;
    std::vector<double> t(static_cast<std::size_t>(2 * half + 1), 0.0);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    for (const auto& b : bands) {
        const double w1 = 2.0 * kPi * b.lo_hz / fs;
        const double w2 = 2.0 * kPi * b.hi_hz / fs;
        for (int m = 0; m <= 2 * half; ++m) t[static_cast<std::size_t>(m)] += b.weight * cos_integral(m, w1, w2);
        if (b.desired != 0.0)
            for (int k = 0; k < n; ++k) rhs(k) += b.weight * b.desired * cos_integral(k, w1, w2);
    }
    Eigen::MatrixXd q(n, n);
    for (int k = 0; k < n; ++k)
        for (int l = 0; l < n; ++l)
            q(k, l) = 0.5 * (t[static_cast<std::size_t>(std::abs(k - l))] + t[static_cast<std::size_t>(k + l)]);
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(q);
    if (ldlt.info() != Eigen::Success) throw Error("least-squares FIR normal equations are singular");
    const Eigen::VectorXd a = ldlt.solve(rhs);
    std::vector<double> taps(static_cast<std::size_t>(order + 1));
    taps[static_cast<std::size_t>(half)] = a(0);
    for (int k = 1; k <= half; ++k) {
        taps[static_cast<std::size_t>(half - k)] = 0.5 * a(k);
        taps[static_cast<std::size_t>(half + k)] = 0.5 * a(k);
    }
    return taps;
}

}  // namespace

std::vector<double> design_ls_taps(const std::vector<LsBand>& bands, double fs, int order) {
    if (order < 2 || order % 2 != 0) throw InvalidInput("LS FIR order must be even and >= 2");
    if (bands.empty()) throw InvalidInput("LS FIR needs at least one band");
    for (const auto& b : bands)
        if (!(b.lo_hz >= 0.0) || !(b.hi_hz > b.lo_hz) || b.hi_hz > fs / 2.0 + 1e-9 || b.weight < 0.0)
            throw InvalidInput("LS FIR band edges must satisfy 0 <= lo < hi <= fs/2");

    using Key = std::vector<double>;
    static std::mutex cache_mutex;
    static std::map<Key, std::vector<double>> cache;
    Key key{fs, static_cast<double>(order)};
    for (const auto& b : bands) key.insert(key.end(), {b.lo_hz, b.hi_hz, b.desired, b.weight});
    {
        std::lock_guard lock(cache_mutex);
        if (auto it = cache.find(key); it != cache.end()) return it->second;
    }
    auto taps = solve_ls(bands, fs, order);
    std::lock_guard lock(cache_mutex);
    return cache.emplace(std::move(key), std::move(taps)).first->second;
}

FirFilter design_ls_fir(const BandSpec& band, double fs, int order) {
    const double nyq = fs / 2.0;
    if (!(band.lo_hz > 0.0) || !(band.hi_hz > band.lo_hz))
        throw InvalidInput("band edges must satisfy 0 < lo < hi");
    if (!(band.hi_hz * 1.1 < nyq)) {
        std::ostringstream os;
        os << "band " << to_string(band.name) << " stop edge " << band.hi_hz * 1.1
           << " Hz is not below Nyquist " << nyq << " Hz";
        throw InvalidInput(os.str());
    }
    const std::vector<LsBand> spec{{0.0, 0.9 * band.lo_hz, 0.0},
                                   {band.lo_hz, band.hi_hz, 1.0},
                                   {1.1 * band.hi_hz, nyq, 0.0}};
    return FirFilter{design_ls_taps(spec, fs, order), band, fs};
}

double magnitude_at(std::span<const double> taps, double hz, double fs) {
    const double w = 2.0 * kPi * hz / fs;
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t k = 0; k < taps.size(); ++k)
        acc += taps[k] * std::polar(1.0, -w * static_cast<double>(k));
    return std::abs(acc);
}

std::vector<double> filter_same(std::span<const double> x, std::span<const double> taps) {
    if (taps.size() % 2 != 1) throw InvalidInput("linear-phase filter needs an odd tap count");
    const auto full = detail::fft_convolve(x, taps);
    const std::size_t delay = taps.size() / 2;
    std::vector<double> y(x.size());
    for (std::size_t n = 0; n < x.size(); ++n) y[n] = full[n + delay];
    return y;
}

std::vector<double> filtfilt_compensated(std::span<const double> x, const FirFilter& filt) {
    if (x.size() <= static_cast<std::size_t>(filt.order()))
        throw InvalidInput("signal shorter than the filter order");
    return filter_same(x, filt.taps);
}

std::vector<double> resample(std::span<const double> x, double fs_in, double fs_out) {
    int factor = 0;
    if (!(fs_in > 0.0) || !(fs_out > 0.0) || !is_integer_ratio(fs_in, fs_out, factor))
        throw InvalidInput("resample needs fs_in / fs_out to be a positive integer");
    if (factor == 1) return {x.begin(), x.end()};
    const double pass = 0.9 * fs_out / 2.0;
    const auto taps = design_ls_taps({{0.0, pass, 1.0}, {1.1 * pass, fs_in / 2.0, 0.0}}, fs_in,
                                     kAntiAliasOrder);
    const auto smooth = filter_same(x, taps);
    std::vector<double> y((x.size() + static_cast<std::size_t>(factor) - 1) / static_cast<std::size_t>(factor));
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = smooth[i * static_cast<std::size_t>(factor)];
    return y;
}

Recording resample(const Recording& rec, double fs_out) {
    int factor = 0;
    if (!is_integer_ratio(rec.fs(), fs_out, factor))
        throw InvalidInput("resample needs fs_in / fs_out to be a positive integer");
    const Eigen::Index n_out = (rec.n_samples() + factor - 1) / factor;
    Eigen::MatrixXd out(n_out, rec.n_channels());
    for (Eigen::Index c = 0; c < rec.n_channels(); ++c) {
        const auto y = resample(rec.channel(c), rec.fs(), fs_out);
        out.col(c) = Eigen::Map<const Eigen::VectorXd>(y.data(), n_out);
    }
    return Recording(std::move(out), fs_out, rec.channel_names(), rec.kind());
}

Recording average_reference(const Recording& eeg) {
    if (eeg.n_channels() < 2) throw InvalidInput("average reference needs at least 2 channels");
    Eigen::MatrixXd x = eeg.samples();
    const Eigen::VectorXd mean = x.rowwise().mean();
    x.colwise() -= mean;
    return Recording(std::move(x), eeg.fs(), eeg.channel_names(), eeg.kind());
}

std::vector<double> zscore(std::span<const double> x) {
    if (x.empty()) throw InvalidInput("zscore of an empty signal");
    const double n = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / n);
    if (!(sd > 0.0)) throw InvalidInput("zscore of a constant signal");
    std::vector<double> z(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = (x[i] - mean) / sd;
    return z;
}

Recording band_filter(const Recording& rec, const BandSpec& band) {
    const auto filt = design_ls_fir(band, rec.fs());
    Eigen::MatrixXd out(rec.n_samples(), rec.n_channels());
    for (Eigen::Index c = 0; c < rec.n_channels(); ++c) {
        const auto y = filtfilt_compensated(rec.channel(c), filt);
        out.col(c) = Eigen::Map<const Eigen::VectorXd>(y.data(), rec.n_samples());
    }
    return Recording(std::move(out), rec.fs(), rec.channel_names(), rec.kind());
}

namespace {

double working_rate(double fs) {
    int factor = 0;
    if (fs == kAnalysisRate) return kAnalysisRate;
    if (is_integer_ratio(fs, kEnvelopeRate, factor)) return kEnvelopeRate;
    throw InvalidInput("input rate must be 128 Hz or an integer multiple of 512 Hz");
}

}  // namespace

std::map<Band, Recording> preprocess_eeg(const Recording& eeg, std::span<const Band> bands, int jobs) {
    if (eeg.kind() != SignalKind::eeg) throw InvalidInput("preprocess_eeg needs an EEG recording");
    require_finite(eeg);
    const double work_fs = working_rate(eeg.fs());
    const Recording referenced = average_reference(work_fs == eeg.fs() ? eeg : resample(eeg, work_fs));
    const auto n_ch = referenced.n_channels();
    std::vector<std::vector<double>> columns(bands.size() * static_cast<std::size_t>(n_ch));
    parallel_for(columns.size(), jobs, [&](std::size_t job) {
        const Band band = bands[job / static_cast<std::size_t>(n_ch)];
        const auto c = static_cast<Eigen::Index>(job % static_cast<std::size_t>(n_ch));
        const auto filt = design_ls_fir(BandSpec::canonical(band), work_fs);
        auto y = resample(filtfilt_compensated(referenced.channel(c), filt), work_fs, kAnalysisRate);
        // Zero-variance channels stay flat; they are reported by validation, never dropped.
        const bool flat = std::all_of(y.begin(), y.end(), [&](double v) { return v == y.front(); });
        columns[job] = flat ? std::vector<double>(y.size(), 0.0) : zscore(y);
    });
    std::map<Band, Recording> out;
    for (std::size_t b = 0; b < bands.size(); ++b) {
        const auto n = static_cast<Eigen::Index>(columns[b * static_cast<std::size_t>(n_ch)].size());
        Eigen::MatrixXd m(n, n_ch);
        for (Eigen::Index c = 0; c < n_ch; ++c)
            m.col(c) = Eigen::Map<const Eigen::VectorXd>(
                columns[b * static_cast<std::size_t>(n_ch) + static_cast<std::size_t>(c)].data(), n);
        out.emplace(bands[b], Recording(std::move(m), kAnalysisRate, referenced.channel_names(),
                                        SignalKind::eeg));
    }
    return out;
}

std::map<Band, std::vector<double>> band_envelopes(std::span<const double> envelope, double fs,
                                                   std::span<const Band> bands) {
    const double work_fs = working_rate(fs);
    const std::vector<double> env = work_fs == fs ? std::vector<double>(envelope.begin(), envelope.end())
                                                  : resample(envelope, fs, work_fs);
    std::map<Band, std::vector<double>> out;
    for (Band band : bands) {
        const auto filt = design_ls_fir(BandSpec::canonical(band), work_fs);
        out[band] = zscore(resample(filtfilt_compensated(env, filt), work_fs, kAnalysisRate));
    }
    return out;
}

}  // namespace envtrack::dsp
