#pragma once

// Binary matrix files, TMIF exports, cohort manifests and WAV ingestion.
//
// Matrix format: `<name>.f32` holds raw little-endian float32 in sample-major order
// (row t, then channel), `<name>.json` is the sidecar
//   {"version":1,"fs":<Hz>,"rows":<n>,"cols":<m>,"channels":[...],"kind":"eeg"|"audio"}
// TMIF matrices use kind "tmif" with rows = lags and an extra "first_lag" key.

#include "envtrack/core.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace envtrack::io {

namespace fs = std::filesystem;

/// Strips a trailing ".f32" or ".json" so either file (or the bare stem) names the matrix.
fs::path matrix_base(const fs::path& path);

void write_matrix(const Recording& rec, const fs::path& path);
Recording read_matrix(const fs::path& path);

void write_tmif(const Tmif& tmif, const fs::path& path);
Tmif read_tmif(const fs::path& path);

/// `lag_ms,value` for multivariate TMIFs, `lag_ms,<chan1>,<chan2>,...` otherwise.
void write_tmif_csv(const Tmif& tmif, const fs::path& path);

/// Mono WAV, PCM16 or IEEE float32. PCM16 is scaled to [-1, 1).
Recording read_wav(const fs::path& path);
void write_wav_float32(const std::vector<double>& samples, double fs, const fs::path& path);
void write_wav_pcm16(const std::vector<double>& samples, double fs, const fs::path& path);

struct ManifestSubject {
    std::string id;
    Group group = Group::control;
    double age = 0.0;
    std::optional<fs::path> eeg;           // raw (unfiltered) EEG matrix
    std::map<Band, fs::path> eeg_bands;    // band-filtered EEG at 128 Hz
    std::map<Band, fs::path> envelopes;    // per-subject stimulus envelopes (override)
};

/// Cohort description. Paths are stored relative to the manifest's directory and
/// resolved to absolute paths on load.
struct CohortManifest {
    int version = 1;
    std::optional<double> fs;              // expected EEG sampling rate
    ChannelSelection channel_selection;
    std::string layout = "builtin:biosemi64";
    int adjacency_k = 4;
    std::optional<fs::path> audio;         // shared stimulus audio
    std::map<Band, fs::path> envelopes;    // shared stimulus envelopes at 128 Hz
    std::vector<ManifestSubject> subjects; // manifest order is iteration order

    const ManifestSubject& subject(std::string_view id) const;
};

/// Throws FormatError on schema problems, InvalidInput on duplicate ids or missing files.
CohortManifest load_manifest(const fs::path& path);
/// Writes paths relative to the manifest's directory when they lie beneath it.
void save_manifest(const CohortManifest& manifest, const fs::path& path);

}  // namespace envtrack::io
