#include "envtrack/synthcohort.hpp"

#include "envtrack/dsp.hpp"
#include "envtrack/layout.hpp"
#include "envtrack/parallel.hpp"
#include "fft.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <random>

namespace envtrack::synth {

namespace {

constexpr const char* kMontage[] = {
    "Fz",  "FCz", "Cz",  "CPz", "Pz",  "POz", "Oz",  "F3",  "F4",  "FC3", "FC4", "C3",  "C4",
    "CP3", "CP4", "P3",  "P4",  "PO3", "PO4", "O1",  "O2",  "F1",  "F2",  "FC1", "FC2", "C1",
    "C2",  "CP1", "CP2", "P1",  "P2",  "AFz", "Fpz", "Fp1", "Fp2", "AF3", "AF4", "AF7", "AF8",
    "F5",  "F6",  "F7",  "F8",  "FT7", "FT8", "FC5", "FC6", "C5",  "C6",  "T7",  "T8",  "TP7",
    "TP8", "CP5", "CP6", "P5",  "P6",  "P7",  "P8",  "P9",  "P10", "PO7", "PO8", "Iz"};
static_assert(std::size(kMontage) == 64);

// Response samples before the first stimulus sample are avoided by generating this much
// extra envelope and discarding it afterwards.
std::size_t kernel_padding(const SynthSpec& spec) {
    std::size_t pad = 1;
    for (const auto& [band, peaks] : spec.trf) pad = std::max(pad, trf_kernel(peaks, spec.fs).size());
    return pad;
}

std::vector<double> zscored(std::span<const double> x) { return dsp::zscore(x); }

// 1/f-shaped Gaussian noise restricted to the broad band, then split into bands.
std::map<Band, std::vector<double>> padded_stimulus(const SynthSpec& spec, std::size_t pad) {
    const std::size_t n = static_cast<std::size_t>(spec.n_samples()) + pad;
    std::mt19937_64 rng(mix_seed(spec.seed, 0x5354494dULL));
    std::normal_distribution<double> normal;
    std::vector<std::complex<double>> bins(n / 2 + 1);
    const BandSpec broad = BandSpec::canonical(Band::broad);
    for (std::size_t k = 0; k < bins.size(); ++k) {
        const double f = static_cast<double>(k) * spec.fs / static_cast<double>(n);
        const double re = normal(rng), im = normal(rng);
        if (f >= broad.lo_hz && f <= broad.hi_hz) bins[k] = std::complex<double>(re, im) / std::sqrt(f);
    }
    const auto base = detail::irfft(bins, n);
    return dsp::band_envelopes(base, spec.fs, kAllBands);
}

}  // namespace

std::map<Band, std::vector<TrfPeak>> SynthSpec::default_trf() {
    const std::map<Band, double> width{{Band::delta, 24.0}, {Band::theta, 12.0}, {Band::alpha, 6.0},
                                       {Band::beta, 3.0},   {Band::gamma, 1.5}};
    std::map<Band, std::vector<TrfPeak>> out;
    for (const auto& [band, w] : width) out[band] = {{50.0, w, 1.0}, {170.0, 1.6 * w, -0.8}};
    return out;
}

void SynthSpec::validate() const {
    if (n_controls < 1 || n_patients < 1) throw InvalidInput("synthetic cohort needs subjects in both groups");
    if (fs != dsp::kAnalysisRate) throw InvalidInput("synthetic cohorts are generated at 128 Hz");
    if (!(duration_min > 0.0)) throw InvalidInput("duration_min must be positive");
    if (n_channels < 1 || n_channels > 64) throw InvalidInput("n_channels must lie in 1..64");
    if (std::isnan(snr_db)) throw InvalidInput("snr_db is NaN");
    if (subject_sd < 0.0 || subject_band_sd < 0.0) throw InvalidInput("variability must be non-negative");
    if (!(age_min > 0.0) || age_max < age_min) throw InvalidInput("invalid age range");
    for (const auto& [band, e] : group_effect)
        if (!(e >= 0.0)) throw InvalidInput("group effect must be non-negative");
    for (const auto& [band, peaks] : trf) {
        if (band == Band::broad) throw InvalidInput("response kernels are set per narrow band");
        for (const auto& p : peaks)
            if (!(p.latency_ms >= 0.0) || !(p.width_ms > 0.0))
                throw InvalidInput("kernel peaks need latency >= 0 and width > 0");
    }
    const double min_len = static_cast<double>(dsp::kBandFilterOrder + 1) / fs / 60.0;
    if (duration_min <= min_len) throw InvalidInput("duration_min is shorter than the band filter");
}

Eigen::Index SynthSpec::n_samples() const {
    return static_cast<Eigen::Index>(std::floor(duration_min * 60.0 * fs + 1e-9));
}

std::vector<std::string> synth_channels(int n) {
    if (n < 1 || n > 64) throw InvalidInput("n_channels must lie in 1..64");
    return {std::begin(kMontage), std::begin(kMontage) + n};
}

std::vector<double> trf_kernel(const std::vector<TrfPeak>& peaks, double fs) {
    double reach = 0.0;
    for (const auto& p : peaks) reach = std::max(reach, p.latency_ms + 4.0 * p.width_ms);
    const auto len = static_cast<std::size_t>(std::ceil(reach * fs / 1000.0)) + 1;
    std::vector<double> h(len, 0.0);
    for (const auto& p : peaks) {
        std::vector<double> g(len);
        double sum = 0.0;
        for (std::size_t k = 0; k < len; ++k) {
            const double t = static_cast<double>(k) * 1000.0 / fs - p.latency_ms;
            g[k] = std::exp(-0.5 * t * t / (p.width_ms * p.width_ms));
            sum += g[k];
        }
        if (sum <= 0.0) throw InvalidInput("kernel peak falls between samples");
        for (std::size_t k = 0; k < len; ++k) h[k] += p.amplitude * g[k] / sum;
    }
    return h;
}

std::map<Band, std::vector<double>> stimulus_envelopes(const SynthSpec& spec) {
    spec.validate();
    const std::size_t pad = kernel_padding(spec);
    auto padded = padded_stimulus(spec, pad);
    std::map<Band, std::vector<double>> out;
    for (auto& [band, x] : padded) out[band] = zscored(std::span<const double>(x).subspan(pad));
    return out;
}

SynthSubject generate_subject(const SynthSpec& spec, Group group, std::uint64_t subject_seed) {
    spec.validate();
    const std::size_t pad = kernel_padding(spec);
    const auto padded = padded_stimulus(spec, pad);
    const auto n = static_cast<std::size_t>(spec.n_samples());
    const auto channels = synth_channels(spec.n_channels);
    const Layout layout = subset_layout(biosemi64_layout(), channels);

    std::mt19937_64 rng(subject_seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> uniform(spec.age_min, spec.age_max);
    SynthSubject out{Recording(Eigen::MatrixXd::Zero(1, 1), spec.fs, {"x"}, SignalKind::eeg), {}, 0.0};
    out.age = uniform(rng) + (group == Group::aphasia ? spec.patient_age_shift : 0.0);
    const double subject_factor = std::exp(spec.subject_sd * normal(rng));

    // Per band: response to the stimulus, the reference (effect 1, unit factors) copy
    // sets the noise level so that groups differ only through the effect.
    Eigen::VectorXd reference = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    Eigen::VectorXd response = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (Band band : kNarrowBands) {
        const double band_factor = std::exp(spec.subject_band_sd * normal(rng));
        auto it = spec.trf.find(band);
        if (it == spec.trf.end() || it->second.empty()) continue;
        const auto h = trf_kernel(it->second, spec.fs);
        const auto full = detail::fft_convolve(padded.at(band), h);
        double effect = 1.0;
        if (group == Group::aphasia)
            if (auto e = spec.group_effect.find(band); e != spec.group_effect.end()) effect = e->second;
        for (std::size_t t = 0; t < n; ++t) {
            const double v = full[t + pad];
            reference(static_cast<Eigen::Index>(t)) += v;
            response(static_cast<Eigen::Index>(t)) += v * effect * subject_factor * band_factor;
        }
    }

    Eigen::VectorXd gains(spec.n_channels);
    for (int c = 0; c < spec.n_channels; ++c) gains(c) = 0.4 + layout[static_cast<std::size_t>(c)].y;
    const double ref_power = reference.squaredNorm() / static_cast<double>(n) * gains.squaredNorm() /
                             static_cast<double>(spec.n_channels);
    const double sigma = std::isinf(spec.snr_db) && spec.snr_db > 0
                             ? 0.0
                             : std::sqrt(ref_power / std::pow(10.0, spec.snr_db / 10.0));

    Eigen::MatrixXd eeg(static_cast<Eigen::Index>(n), spec.n_channels);
    for (int c = 0; c < spec.n_channels; ++c) {
        eeg.col(c) = gains(c) * response;
        if (sigma > 0.0)
            for (std::size_t t = 0; t < n; ++t) eeg(static_cast<Eigen::Index>(t), c) += sigma * normal(rng);
    }
    out.eeg = Recording(std::move(eeg), spec.fs, channels, SignalKind::eeg);
    for (const auto& [band, x] : padded) out.envelopes[band] = zscored(std::span<const double>(x).subspan(pad));
    return out;
}

io::CohortManifest generate_cohort(const SynthSpec& spec, const std::filesystem::path& dir, int jobs) {
    spec.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    {
        std::ofstream probe(dir / ".write-test");
        if (ec || !probe) throw Error("cannot write to " + dir.string());
    }
    std::filesystem::remove(dir / ".write-test");

    io::CohortManifest m;
    m.fs = spec.fs;
    m.channel_selection = synth_channels(spec.n_channels);
    const auto envs = stimulus_envelopes(spec);
    for (const auto& [band, x] : envs) {
        const auto path = dir / ("envelope_" + std::string(to_string(band)) + ".f32");
        Eigen::MatrixXd col = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
        io::write_matrix(Recording(std::move(col), spec.fs, {"envelope"}, SignalKind::audio), path);
        m.envelopes[band] = path;
    }

    const std::size_t total = static_cast<std::size_t>(spec.n_controls + spec.n_patients);
    m.subjects.resize(total);
    parallel_for(total, jobs, [&](std::size_t i) {
        const Group g = i < static_cast<std::size_t>(spec.n_controls) ? Group::control : Group::aphasia;
        char id[16];
        std::snprintf(id, sizeof id, "sub-%03zu", i + 1);
        const auto subject = generate_subject(spec, g, mix_seed(spec.seed, i + 1));
        const auto path = dir / (std::string(id) + "_eeg.f32");
        io::write_matrix(subject.eeg, path);
        auto& entry = m.subjects[i];
        entry.id = id;
        entry.group = g;
        entry.age = subject.age;
        entry.eeg = path;
    });
    io::save_manifest(m, dir / "manifest.json");
    return m;
}

}  // namespace envtrack::synth
