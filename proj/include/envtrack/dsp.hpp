#pragma once

// Speech envelope extraction and the EEG/envelope band-filtering chain.

#include "envtrack/core.hpp"

#include <map>
#include <span>
#include <vector>

namespace envtrack::dsp {

inline constexpr double kEnvelopeRate = 512.0;  // Hz, after sub-band envelope extraction
inline constexpr double kAnalysisRate = 128.0;  // Hz, rate of all TMIF computations
inline constexpr int kBandFilterOrder = 2000;
inline constexpr int kAntiAliasOrder = 500;

/// Glasberg & Moore ERB-rate scale: 21.4 * log10(4.37e-3 * f + 1).
double erb_rate(double hz);
double inverse_erb_rate(double erb);
/// Equivalent rectangular bandwidth in Hz at frequency f: 24.7 * (4.37e-3 * f + 1).
double erb_bandwidth(double hz);

/// n centre frequencies equally spaced on the ERB-rate scale, endpoints included.
std::vector<double> erb_space(double lo_hz, double hi_hz, int n);

/// Fourth-order all-pole gammatone filterbank.
struct GammatoneBank {
    std::vector<double> center_hz;
    double fs = 0.0;
    int order = 4;

    /// 28 channels from 50 to 5000 Hz.
    static GammatoneBank make(double fs, double lo_hz = 50.0, double hi_hz = 5000.0, int n = 28);

    /// Real sub-band output of channel k (unity gain at the centre frequency).
    std::vector<double> filter(std::span<const double> x, std::size_t k) const;
};

/// Broadband speech envelope at 512 Hz: mean over sub-bands of |sub-band|^0.6, then
/// decimated. Requires an audio recording sampled at >= 10 kHz and at an integer
/// multiple of 512 Hz.
std::vector<double> extract_envelope(const Recording& audio, const GammatoneBank& bank);
std::vector<double> extract_envelope(const Recording& audio);

/// Linear-phase FIR (odd length, symmetric taps).
struct FirFilter {
    std::vector<double> taps;
    BandSpec band;
    double fs = 0.0;

    int order() const { return static_cast<int>(taps.size()) - 1; }
    int group_delay() const { return order() / 2; }
};

/// A piecewise-constant least-squares design band in Hz.
struct LsBand {
    double lo_hz;
    double hi_hz;
    double desired;
    double weight = 1.0;
};

/// Type-I least-squares FIR minimising sum_b w_b * integral over band b of (A(f) - d_b)^2.
/// Gaps between bands are unconstrained. `order` must be even.
std::vector<double> design_ls_taps(const std::vector<LsBand>& bands, double fs, int order);

/// Band-pass LS FIR: pass [lo, hi], stop below 0.9 lo and above 1.1 hi, transitions free.
/// A band reaching Nyquist-adjacent edges throws; designs are memoized per (band, fs, order).
FirFilter design_ls_fir(const BandSpec& band, double fs, int order = kBandFilterOrder);

/// Magnitude response |H(f)| of a tap vector.
double magnitude_at(std::span<const double> taps, double hz, double fs);

/// Convolution with the filter, advanced by the group delay; zero-padded edges, same length.
std::vector<double> filter_same(std::span<const double> x, std::span<const double> taps);

/// Delay-compensated single-pass FIR filtering. Requires len(x) > filter order.
std::vector<double> filtfilt_compensated(std::span<const double> x, const FirFilter& filt);

/// Anti-alias (LS FIR order 500, passband to 0.9 * fs_out / 2) then decimation.
/// fs_in / fs_out must be a positive integer; output length is ceil(len / factor).
std::vector<double> resample(std::span<const double> x, double fs_in, double fs_out);
Recording resample(const Recording& rec, double fs_out);

/// Subtracts the per-sample channel mean. Requires >= 2 channels.
Recording average_reference(const Recording& eeg);

/// Population z-score. Throws on constant input.
std::vector<double> zscore(std::span<const double> x);

/// Filters one band of a (single- or multi-channel) recording at its own rate.
Recording band_filter(const Recording& rec, const BandSpec& band);

/// EEG chain: to 512 Hz (if faster), average reference, band filter, to 128 Hz, z-score.
/// Input rate must be 128 Hz or a multiple of 512 Hz.
std::map<Band, Recording> preprocess_eeg(const Recording& eeg, std::span<const Band> bands,
                                         int jobs = 1);

/// Envelope chain from a broadband envelope at 512 (or 128) Hz: band filter, to 128 Hz,
/// z-score. Every output has identical length.
std::map<Band, std::vector<double>> band_envelopes(std::span<const double> envelope, double fs,
                                                   std::span<const Band> bands);

}  // namespace envtrack::dsp
