#pragma once

// Forward-model synthetic cohorts: a shared stimulus envelope drives every subject's EEG
// through per-band response kernels, scaled per group, subject and channel, plus noise.

#include "envtrack/core.hpp"
#include "envtrack/io.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

namespace envtrack::synth {

/// One Gaussian lobe of a response kernel.
struct TrfPeak {
    double latency_ms = 50.0;
    double width_ms = 20.0;   // standard deviation
    double amplitude = 1.0;   // area of the lobe
};

struct SynthSpec {
    int n_controls = 22;
    int n_patients = 27;
    double fs = 128.0;
    double duration_min = 5.0;
    int n_channels = 8;
    /// Response kernel per narrow band; bands without an entry carry no response.
    std::map<Band, std::vector<TrfPeak>> trf = default_trf();
    /// Amplitude factor applied to patients per band (missing = 1).
    std::map<Band, double> group_effect;
    /// Reference signal power over noise power per channel; +inf disables noise.
    double snr_db = 0.0;
    double subject_sd = 0.25;        // log-amplitude sd shared by all bands of a subject
    double subject_band_sd = 0.15;   // additional per-band log-amplitude sd
    double age_min = 60.0;
    double age_max = 85.0;
    double patient_age_shift = 0.0;  // years added to patients' ages
    std::uint64_t seed = 1;

    /// Two lobes (about 50 ms positive, 170 ms negative) per narrow band, narrower for
    /// faster bands so that every band passes the kernel.
    static std::map<Band, std::vector<TrfPeak>> default_trf();
    void validate() const;
    Eigen::Index n_samples() const;
};

/// Channel names of the first n channels of the synthetic montage (n <= 64).
std::vector<std::string> synth_channels(int n);

/// Stimulus envelopes per band (broad and the five narrow bands) at 128 Hz, z-scored.
/// Depend only on the spec's seed and length.
std::map<Band, std::vector<double>> stimulus_envelopes(const SynthSpec& spec);

/// Discrete causal kernel of one band at fs (sample k is the response at k / fs).
std::vector<double> trf_kernel(const std::vector<TrfPeak>& peaks, double fs);

struct SynthSubject {
    Recording eeg;
    std::map<Band, std::vector<double>> envelopes;
    double age = 0.0;
};

SynthSubject generate_subject(const SynthSpec& spec, Group group, std::uint64_t subject_seed);

/// Writes shared envelopes, one EEG matrix per subject and manifest.json into dir.
/// Controls come first (sub-001 ...); subject i uses seed mix_seed(spec.seed, i + 1).
io::CohortManifest generate_cohort(const SynthSpec& spec, const std::filesystem::path& dir, int jobs = 1);

}  // namespace envtrack::synth
