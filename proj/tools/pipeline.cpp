#include "pipeline.hpp"

#include "envtrack/classifier.hpp"
#include "envtrack/clusterstats.hpp"
#include "envtrack/dsp.hpp"
#include "envtrack/gcmi.hpp"
#include "envtrack/io.hpp"
#include "envtrack/layout.hpp"
#include "envtrack/nullperm.hpp"
#include "envtrack/parallel.hpp"
#include "envtrack/synthcohort.hpp"
#include "envtrack/timecourse.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>

#ifndef ENVTRACK_VERSION
#define ENVTRACK_VERSION "unknown"
#endif

namespace envtrack::cli {

using report::fmt;

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string() + " for hashing");
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("SHA-256 unavailable");
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

namespace {

// ---- configuration ----

class Section {
public:
    Section(const Json* j, std::string name) : j_(j), name_(std::move(name)) {}

    bool has(const std::string& key) const { return j_->contains(key) && !j_->at(key).is_null(); }
    std::string where(const std::string& key) const { return name_ + "." + key; }

    template <typename T>
    T get(const std::string& key, const T& fallback) const {
        if (!has(key)) return fallback;
        return as<T>(key);
    }
    template <typename T>
    T require(const std::string& key) const {
        if (!has(key)) throw ConfigError("missing config key '" + where(key) + "'");
        return as<T>(key);
    }
    const Json& raw(const std::string& key) const { return j_->at(key); }

    void allow(std::initializer_list<const char*> keys) const {
        for (const auto& [k, v] : j_->items())
            if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; }))
                throw ConfigError("unknown config key '" + where(k) + "'");
    }

    std::vector<Band> bands(const std::string& key, std::vector<Band> fallback) const {
        if (!has(key)) return fallback;
        std::vector<Band> out;
        for (const auto& name : as<std::vector<std::string>>(key)) {
            try {
                out.push_back(parse_band(name));
            } catch (const InvalidInput&) {
                throw ConfigError("config key '" + where(key) + "': unknown band '" + name + "'");
            }
        }
        if (out.empty()) throw ConfigError("config key '" + where(key) + "' is empty");
        return out;
    }

private:
    template <typename T>
    T as(const std::string& key) const {
        try {
            return j_->at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config key '" + where(key) + "' has the wrong type");
        }
    }
    const Json* j_;
    std::string name_;
};

void apply_override(Json& root, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key.path=value, got '" + assignment + "'");
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    Json value;
    try {
        value = Json::parse(text);
    } catch (const nlohmann::json::exception&) {
        value = text;
    }
    Json* node = &root;
    std::istringstream parts(path);
    std::string part;
    std::vector<std::string> keys;
    while (std::getline(parts, part, '.')) keys.push_back(part);
    for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
        if (!node->contains(keys[i]) || !(*node)[keys[i]].is_object()) (*node)[keys[i]] = Json::object();
        node = &(*node)[keys[i]];
    }
    (*node)[keys.back()] = value;
}

// ---- stage context ----

struct Stage {
    std::string name;
    Json config;
    fs::path config_dir;
    fs::path run_dir;
    fs::path dir;  // where outputs are written (renamed into place on success)
    std::uint64_t seed = 0;
    int jobs = 1;
    std::set<fs::path> inputs;
    std::mutex input_mutex;

    Section section() const { return {&config.at(name), name}; }
    fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : config_dir / p; }
    fs::path output_of(const std::string& stage) const { return run_dir / stage; }

    void input(const fs::path& p) {
        std::lock_guard lock(input_mutex);
        inputs.insert(fs::absolute(p).lexically_normal());
    }
    void input_matrix(const fs::path& p) {
        const auto base = io::matrix_base(p);
        input(fs::path(base).concat(".f32"));
        input(fs::path(base).concat(".json"));
    }
    void log(const std::string& msg) const { std::cerr << "[" << name << "] " << msg << "\n"; }
};

std::string display_path(const Stage& st, const fs::path& p) {
    const auto rel = p.lexically_relative(fs::absolute(st.run_dir).lexically_normal());
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return p.generic_string();
}

// ---- shared loading ----

fs::path manifest_path(const Stage& st, const Section& sec) {
    if (sec.has("manifest")) return st.resolve(sec.require<std::string>("manifest"));
    for (const char* prev : {"preprocess", "synth"}) {
        const auto p = st.output_of(prev) / "manifest.json";
        if (fs::exists(p)) return p;
    }
    throw ConfigError("missing config key '" + sec.where("manifest") +
                      "' (and this run has no preprocess or synth output)");
}

io::CohortManifest load_manifest(Stage& st, const Section& sec) {
    const auto path = manifest_path(st, sec);
    st.input(path);
    return io::load_manifest(path);
}

std::vector<double> read_envelope(Stage& st, const fs::path& p) {
    st.input_matrix(p);
    const Recording rec = io::read_matrix(p);
    if (rec.n_channels() != 1) throw InvalidInput(p.string() + ": envelope must have one channel");
    if (rec.fs() != dsp::kAnalysisRate) throw InvalidInput(p.string() + ": envelope must be at 128 Hz");
    const auto c = rec.channel(0);
    return {c.begin(), c.end()};
}

std::map<Band, std::vector<double>> shared_envelopes(Stage& st, const io::CohortManifest& m,
                                                     std::span<const Band> bands) {
    std::map<Band, std::vector<double>> out;
    if (!m.envelopes.empty()) {
        for (Band b : bands)
            if (auto it = m.envelopes.find(b); it != m.envelopes.end()) out[b] = read_envelope(st, it->second);
        return out;
    }
    if (m.audio) {
        st.input(*m.audio);
        const Recording audio = io::read_wav(*m.audio);
        const auto broadband = dsp::extract_envelope(audio);
        return dsp::band_envelopes(broadband, dsp::kEnvelopeRate, bands);
    }
    return out;
}

struct SubjectData {
    std::map<Band, Recording> eeg;
    std::map<Band, std::vector<double>> env;
};

// EEG and envelopes of one subject at 128 Hz, trimmed to a common length.
SubjectData load_subject(Stage& st, const io::ManifestSubject& s, std::span<const Band> bands,
                         const std::map<Band, std::vector<double>>& shared) {
    SubjectData d;
    const bool have_bands = std::all_of(bands.begin(), bands.end(), [&](Band b) { return s.eeg_bands.count(b); });
    if (have_bands) {
        for (Band b : bands) {
            st.input_matrix(s.eeg_bands.at(b));
            Recording r = io::read_matrix(s.eeg_bands.at(b));
            if (r.fs() != dsp::kAnalysisRate) throw InvalidInput("band EEG of '" + s.id + "' is not at 128 Hz");
            require_finite(r);
            d.eeg.emplace(b, std::move(r));
        }
    } else {
        if (!s.eeg) throw InvalidInput("subject '" + s.id + "' has neither raw nor band EEG");
        st.input_matrix(*s.eeg);
        const Recording raw = io::read_matrix(*s.eeg);
        d.eeg = dsp::preprocess_eeg(raw, bands, 1);
    }
    for (Band b : bands) {
        if (auto it = s.envelopes.find(b); it != s.envelopes.end()) d.env[b] = read_envelope(st, it->second);
        else if (auto sh = shared.find(b); sh != shared.end()) d.env[b] = sh->second;
        else throw InvalidInput("no " + std::string(to_string(b)) + " envelope for subject '" + s.id + "'");
    }
    // Allow up to one second of length mismatch between EEG and stimulus.
    for (Band b : bands) {
        Recording& e = d.eeg.at(b);
        auto& env = d.env.at(b);
        const auto n = std::min<Eigen::Index>(e.n_samples(), static_cast<Eigen::Index>(env.size()));
        if (std::abs(e.n_samples() - static_cast<Eigen::Index>(env.size())) > static_cast<Eigen::Index>(dsp::kAnalysisRate))
            throw InvalidInput("EEG and envelope of '" + s.id + "' differ in length by more than 1 s");
        if (e.n_samples() != n) e = e.head(n);
        env.resize(static_cast<std::size_t>(n));
    }
    return d;
}

ChannelSelection selection_of(const io::CohortManifest& m) {
    return m.channel_selection.empty() ? default_channel_selection() : m.channel_selection;
}

// ---- TMIF index ----

struct TmifIndex {
    fs::path root;
    LagGrid grid = LagGrid::default_grid();
    std::vector<Band> bands;
    std::vector<double> durations;
    bool halves = false;
    bool single_channel = false;
    ChannelSelection selection;
    std::string layout;
    fs::path layout_root;
    int adjacency_k = 4;
    struct Entry {
        std::string id;
        Group group;
        double age;
    };
    std::vector<Entry> subjects;

    fs::path file(const Entry& s, Band b, const std::string& suffix = "") const {
        return root / s.id / (std::string(to_string(b)) + suffix);
    }
    bool has_band(Band b) const { return std::find(bands.begin(), bands.end(), b) != bands.end(); }
};

TmifIndex load_index(Stage& st, const Section& sec) {
    const fs::path path = sec.has("tmif_index") ? st.resolve(sec.require<std::string>("tmif_index"))
                                                : st.output_of("tmif") / "index.json";
    if (!fs::exists(path))
        throw ConfigError("missing config key '" + sec.where("tmif_index") + "' (and this run has no tmif output)");
    st.input(path);
    const Json j = report::read_json(path);
    TmifIndex idx;
    idx.root = fs::absolute(path).parent_path();
    try {
        const auto& g = j.at("grid");
        idx.grid = LagGrid::from_lags(g.at("fs").get<double>(), g.at("first_lag").get<int>(), g.at("last_lag").get<int>());
        for (const auto& b : j.at("bands")) idx.bands.push_back(parse_band(b.get<std::string>()));
        idx.durations = j.at("durations_min").get<std::vector<double>>();
        idx.halves = j.at("halves").get<bool>();
        idx.single_channel = j.at("single_channel").get<bool>();
        idx.selection = j.at("channel_selection").get<ChannelSelection>();
        idx.layout = j.at("layout").get<std::string>();
        idx.layout_root = idx.root;
        idx.adjacency_k = j.at("adjacency_k").get<int>();
        for (const auto& s : j.at("subjects"))
            idx.subjects.push_back({s.at("id").get<std::string>(), parse_group(s.at("group").get<std::string>()),
                                    s.at("age").get<double>()});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return idx;
}

Tmif read_tmif(Stage& st, const fs::path& p) {
    st.input_matrix(p);
    return io::read_tmif(p);
}

std::vector<Subject> load_subjects(Stage& st, const TmifIndex& idx, std::span<const Band> bands) {
    std::vector<Subject> out;
    for (const auto& e : idx.subjects) {
        Subject s{e.id, e.group, e.age, {}};
        for (Band b : bands) {
            if (!idx.has_band(b)) throw InvalidInput("TMIFs were not computed for band " + std::string(to_string(b)));
            s.tmifs[b] = read_tmif(st, idx.file(e, b));
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<timecourse::SubjectTimecourse> load_timecourses(Stage& st, const TmifIndex& idx,
                                                            std::span<const Band> bands, bool durations,
                                                            bool halves) {
    if (durations && idx.durations.empty())
        throw ConfigError("tmif.durations_min was empty when the TMIFs were computed");
    if (halves && !idx.halves) throw ConfigError("tmif.halves was false when the TMIFs were computed");
    std::vector<timecourse::SubjectTimecourse> out;
    for (const auto& e : idx.subjects) {
        timecourse::SubjectTimecourse tc;
        tc.id = e.id;
        tc.group = e.group;
        tc.age = e.age;
        tc.durations = durations ? idx.durations : std::vector<double>{};
        for (Band b : bands) {
            if (!idx.has_band(b)) throw InvalidInput("TMIFs were not computed for band " + std::string(to_string(b)));
            tc.full[b] = read_tmif(st, idx.file(e, b));
            if (durations)
                for (std::size_t d = 0; d < idx.durations.size(); ++d)
                    tc.by_duration[b].push_back(read_tmif(st, idx.file(e, b, "_dur" + std::to_string(d + 1))));
            if (halves)
                tc.halves[b] = {read_tmif(st, idx.file(e, b, "_half1")), read_tmif(st, idx.file(e, b, "_half2"))};
        }
        out.push_back(std::move(tc));
    }
    return out;
}

// ---- stages ----

void stage_synth(Stage& st) {
    const Section sec = st.section();
    sec.allow({"n_controls", "n_patients", "duration_min", "n_channels", "snr_db", "group_effect", "trf",
               "subject_sd", "subject_band_sd", "age_min", "age_max", "patient_age_shift"});
    synth::SynthSpec spec;
    spec.n_controls = sec.get("n_controls", spec.n_controls);
    spec.n_patients = sec.get("n_patients", spec.n_patients);
    spec.duration_min = sec.get("duration_min", spec.duration_min);
    spec.n_channels = sec.get("n_channels", spec.n_channels);
    if (sec.has("snr_db")) {
        const Json& v = sec.raw("snr_db");
        if (v.is_string() && v.get<std::string>() == "inf") spec.snr_db = INFINITY;
        else spec.snr_db = sec.require<double>("snr_db");
    }
    spec.subject_sd = sec.get("subject_sd", spec.subject_sd);
    spec.subject_band_sd = sec.get("subject_band_sd", spec.subject_band_sd);
    spec.age_min = sec.get("age_min", spec.age_min);
    spec.age_max = sec.get("age_max", spec.age_max);
    spec.patient_age_shift = sec.get("patient_age_shift", spec.patient_age_shift);
    spec.seed = st.seed;
    try {
        const Json effects = sec.get("group_effect", Json::object());
        for (const auto& [k, v] : effects.items())
            spec.group_effect[parse_band(k)] = v.get<double>();
        if (sec.has("trf")) {
            spec.trf.clear();
            for (const auto& [k, peaks] : sec.raw("trf").items())
                for (const auto& p : peaks)
                    spec.trf[parse_band(k)].push_back(
                        {p.at("latency_ms").get<double>(), p.at("width_ms").get<double>(), p.at("amplitude").get<double>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config section 'synth': " + std::string(e.what()));
    } catch (const InvalidInput& e) {
        throw ConfigError("config section 'synth': " + std::string(e.what()));
    }
    synth::generate_cohort(spec, st.dir, st.jobs);
    st.log("wrote " + std::to_string(spec.n_controls + spec.n_patients) + " subjects");
}

void stage_envelope(Stage& st) {
    const Section sec = st.section();
    sec.allow({"audio", "bands"});
    const fs::path audio_path = st.resolve(sec.require<std::string>("audio"));
    const auto bands = sec.bands("bands", {kAllBands.begin(), kAllBands.end()});
    st.input(audio_path);
    const Recording audio = io::read_wav(audio_path);
    const auto broadband = dsp::extract_envelope(audio);
    auto to_rec = [](const std::vector<double>& x, double fs) {
        Eigen::MatrixXd m = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
        return Recording(std::move(m), fs, {"envelope"}, SignalKind::audio);
    };
    io::write_matrix(to_rec(broadband, dsp::kEnvelopeRate), st.dir / "broadband.f32");
    Json index = Json::object();
    for (const auto& [band, env] : dsp::band_envelopes(broadband, dsp::kEnvelopeRate, bands)) {
        const std::string name = std::string(to_string(band)) + ".f32";
        io::write_matrix(to_rec(env, dsp::kAnalysisRate), st.dir / name);
        index[std::string(to_string(band))] = name;
    }
    report::write_json(st.dir / "envelopes.json", index);
}

void stage_preprocess(Stage& st) {
    const Section sec = st.section();
    sec.allow({"manifest", "bands"});
    io::CohortManifest m = load_manifest(st, sec);
    const auto bands = sec.bands("bands", {kAllBands.begin(), kAllBands.end()});
    parallel_for(m.subjects.size(), st.jobs, [&](std::size_t i) {
        auto& s = m.subjects[i];
        if (!s.eeg) throw InvalidInput("subject '" + s.id + "' has no raw EEG");
        st.input_matrix(*s.eeg);
        const Recording raw = io::read_matrix(*s.eeg);
        for (auto& [band, rec] : dsp::preprocess_eeg(raw, bands, 1)) {
            const auto path = st.dir / (s.id + "_" + std::string(to_string(band)) + ".f32");
            io::write_matrix(rec, path);
            s.eeg_bands[band] = path;
        }
    });
    // Band files live beside the manifest, so they are stored relative and survive the rename.
    io::save_manifest(m, st.dir / "manifest.json");
}

void stage_tmif(Stage& st) {
    const Section sec = st.section();
    sec.allow({"manifest", "bands", "t_min_ms", "t_max_ms", "durations_min", "halves", "single_channel",
               "bias_correct"});
    const io::CohortManifest m = load_manifest(st, sec);
    const auto bands = sec.bands("bands", {kAllBands.begin(), kAllBands.end()});
    const LagGrid grid = LagGrid::make(dsp::kAnalysisRate, sec.get("t_min_ms", -200.0), sec.get("t_max_ms", 500.0));
    const auto durations = sec.get("durations_min", std::vector<double>{});
    timecourse::check_durations(durations);
    const bool halves = sec.get("halves", true);
    const bool single = sec.get("single_channel", false);
    gcmi::TmifOptions opts;
    opts.mi.bias_correct = sec.get("bias_correct", false);
    const ChannelSelection selection = selection_of(m);
    const auto shared = shared_envelopes(st, m, bands);

    parallel_for(m.subjects.size(), st.jobs, [&](std::size_t i) {
        const auto& s = m.subjects[i];
        const SubjectData d = load_subject(st, s, bands, shared);
        const fs::path dir = st.dir / s.id;
        for (Band b : bands) {
            const Recording& eeg = d.eeg.at(b);
            const auto& env = d.env.at(b);
            const std::string name(to_string(b));
            const Tmif full = gcmi::tmif_multivariate(eeg, env, grid, selection, opts);
            io::write_tmif(full, dir / (name + ".f32"));
            io::write_tmif_csv(full, dir / (name + ".csv"));
            for (std::size_t k = 0; k < durations.size(); ++k)
                io::write_tmif(timecourse::crop_and_tmif(eeg, env, durations[k], grid, selection, opts),
                               dir / (name + "_dur" + std::to_string(k + 1) + ".f32"));
            if (halves) {
                const Eigen::Index h = eeg.n_samples() / 2;
                const std::span<const double> e(env);
                io::write_tmif(gcmi::tmif_multivariate(eeg.slice(0, h), e.first(static_cast<std::size_t>(h)), grid,
                                                       selection, opts),
                               dir / (name + "_half1.f32"));
                io::write_tmif(gcmi::tmif_multivariate(eeg.slice(h, h),
                                                       e.subspan(static_cast<std::size_t>(h), static_cast<std::size_t>(h)),
                                                       grid, selection, opts),
                               dir / (name + "_half2.f32"));
            }
            if (single) {
                std::vector<std::string> names = selection;
                Eigen::MatrixXd cols(eeg.n_samples(), static_cast<Eigen::Index>(names.size()));
                for (std::size_t c = 0; c < names.size(); ++c)
                    cols.col(static_cast<Eigen::Index>(c)) = eeg.samples().col(eeg.channel_index(names[c]));
                const Recording sel(std::move(cols), eeg.fs(), names, SignalKind::eeg);
                io::write_tmif(gcmi::tmif_single_channel(sel, env, grid, opts), dir / (name + "_channels.f32"));
            }
        }
    });

    Json subjects = Json::array();
    for (const auto& s : m.subjects)
        subjects.push_back({{"id", s.id}, {"group", to_string(s.group)}, {"age", s.age}});
    std::vector<std::string> band_names;
    for (Band b : bands) band_names.emplace_back(to_string(b));
    std::string layout = m.layout;
    if (layout.rfind("builtin:", 0) != 0) layout = fs::absolute(fs::path(m.layout)).string();
    report::write_json(st.dir / "index.json", {{"grid", report::to_json(grid)},
                                               {"bands", band_names},
                                               {"durations_min", durations},
                                               {"halves", halves},
                                               {"single_channel", single},
                                               {"channel_selection", selection},
                                               {"layout", layout},
                                               {"adjacency_k", m.adjacency_k},
                                               {"subjects", subjects}});
    st.log("computed TMIFs for " + std::to_string(m.subjects.size()) + " subjects");
}

void stage_null(Stage& st) {
    const Section sec = st.section();
    sec.allow({"manifest", "bands", "n_perm", "percentile", "t_min_ms", "t_max_ms"});
    const io::CohortManifest m = load_manifest(st, sec);
    const auto bands = sec.bands("bands", {kNarrowBands.begin(), kNarrowBands.end()});
    const LagGrid grid = LagGrid::make(dsp::kAnalysisRate, sec.get("t_min_ms", -200.0), sec.get("t_max_ms", 500.0));
    nullperm::NullOptions opts;
    opts.n_perm = sec.get("n_perm", opts.n_perm);
    opts.percentile = sec.get("percentile", opts.percentile);
    const ChannelSelection selection = selection_of(m);
    const auto shared = shared_envelopes(st, m, bands);

    struct Row {
        double level, observed;
        nullperm::NullDistribution dist;
    };
    std::vector<std::vector<Row>> rows(m.subjects.size());
    parallel_for(m.subjects.size(), st.jobs, [&](std::size_t i) {
        const SubjectData d = load_subject(st, m.subjects[i], bands, shared);
        for (std::size_t b = 0; b < bands.size(); ++b) {
            nullperm::NullOptions o = opts;
            o.seed = mix_seed(mix_seed(st.seed, i), b);
            const Recording& eeg = d.eeg.at(bands[b]);
            const auto& env = d.env.at(bands[b]);
            auto dist = nullperm::significance_level(eeg, env, grid, selection, BandSpec::canonical(bands[b]), o);
            const double observed = gcmi::tmif_multivariate(eeg, env, grid, selection).values.maxCoeff();
            rows[i].push_back({dist.significance_level, observed, std::move(dist)});
        }
    });
    std::ostringstream csv;
    csv << "id,group,band,level,observed_max,significant\n";
    Json dists = Json::object();
    for (std::size_t i = 0; i < m.subjects.size(); ++i) {
        const auto& s = m.subjects[i];
        Json per = Json::object();
        for (std::size_t b = 0; b < bands.size(); ++b) {
            const auto& r = rows[i][b];
            csv << s.id << ',' << to_string(s.group) << ',' << to_string(bands[b]) << ',' << fmt(r.level) << ','
                << fmt(r.observed) << ',' << (r.observed > r.level ? 1 : 0) << '\n';
            per[std::string(to_string(bands[b]))] = report::to_json(r.dist);
        }
        dists[s.id] = per;
    }
    report::write_text(st.dir / "levels.csv", csv.str());
    report::write_json(st.dir / "distributions.json", dists);
}

void stage_cluster(Stage& st) {
    const Section sec = st.section();
    sec.allow({"tmif_index", "bands", "n_perm", "cluster_alpha", "tail", "exhaustive", "spatiotemporal",
               "adjacency_k", "adjacency_radius"});
    const TmifIndex idx = load_index(st, sec);
    const auto bands = sec.bands("bands", idx.bands);
    clusterstats::ClusterOptions opts;
    opts.n_perm = sec.get("n_perm", opts.n_perm);
    opts.cluster_alpha = sec.get("cluster_alpha", opts.cluster_alpha);
    try {
        opts.tail = clusterstats::parse_tail(sec.get<std::string>("tail", "two"));
    } catch (const InvalidInput& e) {
        throw ConfigError("config key '" + sec.where("tail") + "': " + e.what());
    }
    opts.exhaustive = sec.get("exhaustive", false);
    opts.jobs = st.jobs;
    const bool spatial = sec.get("spatiotemporal", idx.single_channel);
    if (spatial && !idx.single_channel)
        throw ConfigError("cluster.spatiotemporal needs tmif.single_channel = true");

    std::optional<clusterstats::Adjacency> adjacency;
    if (spatial) {
        const Layout layout = subset_layout(resolve_layout(idx.layout, idx.layout_root), idx.selection);
        adjacency = sec.has("adjacency_radius")
                        ? clusterstats::build_adjacency_radius(layout, sec.require<double>("adjacency_radius"))
                        : clusterstats::build_adjacency(layout, sec.get("adjacency_k", idx.adjacency_k));
    }

    std::ostringstream csv;
    csv << "band,test,rank,sign,mass,p,start_ms,end_ms,size\n";
    auto emit = [&](Band b, const std::string& test, const clusterstats::ClusterResult& res) {
        report::write_json(st.dir / (std::string(to_string(b)) + "_" + test + ".json"), report::to_json(res));
        int rank = 0;
        for (const auto& c : res.clusters) {
            std::size_t lo = res.grid.size(), hi = 0;
            for (const auto& mbr : c.members) {
                lo = std::min(lo, mbr.lag_index);
                hi = std::max(hi, mbr.lag_index);
            }
            csv << to_string(b) << ',' << test << ',' << ++rank << ',' << c.sign << ',' << fmt(c.mass) << ','
                << fmt(c.p_value) << ',' << fmt(res.grid.time_ms(lo)) << ',' << fmt(res.grid.time_ms(hi)) << ','
                << c.members.size() << '\n';
        }
    };
    for (std::size_t bi = 0; bi < bands.size(); ++bi) {
        const Band b = bands[bi];
        if (!idx.has_band(b)) throw InvalidInput("TMIFs were not computed for band " + std::string(to_string(b)));
        std::vector<Tmif> control, aphasia, control_ch, aphasia_ch;
        for (const auto& e : idx.subjects) {
            (e.group == Group::control ? control : aphasia).push_back(read_tmif(st, idx.file(e, b)));
            if (spatial)
                (e.group == Group::control ? control_ch : aphasia_ch).push_back(read_tmif(st, idx.file(e, b, "_channels")));
        }
        clusterstats::ClusterOptions o = opts;
        o.seed = mix_seed(st.seed, 2 * bi);
        emit(b, "temporal", clusterstats::temporal_cluster_test(control, aphasia, o));
        if (spatial) {
            o.seed = mix_seed(st.seed, 2 * bi + 1);
            emit(b, "spatiotemporal", clusterstats::spatiotemporal_cluster_test(control_ch, aphasia_ch, *adjacency, o));
        }
    }
    report::write_text(st.dir / "summary.csv", csv.str());
}

classifier::EvalOptions eval_options(const Stage& st, const Section& sec) {
    classifier::EvalOptions o;
    o.c_grid = sec.get("c_grid", o.c_grid);
    o.prune_grid_ms = sec.get("prune_grid_ms", o.prune_grid_ms);
    o.bands = sec.bands("bands", o.bands);
    o.inner_folds = sec.get("inner_folds", o.inner_folds);
    o.svm.tol = sec.get("svm_tol", o.svm.tol);
    o.svm.max_iter = sec.get("svm_max_iter", o.svm.max_iter);
    o.seed = st.seed;
    o.jobs = st.jobs;
    return o;
}

void stage_classify(Stage& st) {
    const Section sec = st.section();
    sec.allow({"tmif_index", "c_grid", "prune_grid_ms", "bands", "inner_folds", "svm_tol", "svm_max_iter", "ablation"});
    const TmifIndex idx = load_index(st, sec);
    const auto opts = eval_options(st, sec);
    const auto cohort = load_subjects(st, idx, opts.bands);
    const auto rep = classifier::nested_loso_evaluate(cohort, opts);
    report::write_json(st.dir / "report.json", report::to_json(rep));
    report::write_text(st.dir / "roc.csv", report::roc_csv(rep.roc));
    std::ostringstream pred;
    pred << "id,label,decision,C,prune_ms\n";
    for (std::size_t i = 0; i < rep.subject_ids.size(); ++i)
        pred << rep.subject_ids[i] << ',' << rep.labels[i] << ',' << fmt(rep.decisions[i]) << ','
             << fmt(rep.folds[i].C) << ',' << fmt(rep.folds[i].prune_ms) << '\n';
    report::write_text(st.dir / "predictions.csv", pred.str());
    if (sec.get("ablation", true) && opts.bands.size() > 1) {
        Json arr = Json::array();
        std::ostringstream csv;
        csv << "band,accuracy,f1,auc,drop_accuracy,drop_f1,drop_auc\n";
        for (Band b : opts.bands) {
            const auto ab = classifier::ablate_band(cohort, b, rep, opts);
            arr.push_back(report::to_json(ab));
            csv << to_string(b) << ',' << fmt(ab.report.metrics.accuracy) << ',' << fmt(ab.report.metrics.f1) << ','
                << fmt(ab.report.roc.auc) << ',' << fmt(ab.d_accuracy) << ',' << fmt(ab.d_f1) << ','
                << fmt(ab.d_auc) << '\n';
        }
        report::write_json(st.dir / "ablation.json", arr);
        report::write_text(st.dir / "ablation.csv", csv.str());
    }
    st.log("accuracy " + fmt(rep.metrics.accuracy) + ", AUC " + fmt(rep.roc.auc));
}

void stage_duration(Stage& st) {
    const Section sec = st.section();
    sec.allow({"tmif_index", "c_grid", "prune_grid_ms", "bands", "inner_folds", "svm_tol", "svm_max_iter",
               "within_window_ms"});
    const TmifIndex idx = load_index(st, sec);
    const auto opts = eval_options(st, sec);
    const auto cohort = load_timecourses(st, idx, opts.bands, true, false);
    std::optional<std::pair<double, double>> window;
    if (sec.has("within_window_ms")) {
        const auto w = sec.require<std::vector<double>>("within_window_ms");
        if (w.size() != 2) throw ConfigError("config key '" + sec.where("within_window_ms") + "' needs [t0, t1]");
        window = std::pair{w[0], w[1]};
    }
    const auto curve = timecourse::classification_vs_duration(cohort, opts);
    const auto within = timecourse::within_subject_stability(cohort, opts.bands, window);
    const auto between = timecourse::between_subject_stability(cohort, opts.bands);
    std::ostringstream csv;
    csv << "duration_min,accuracy,f1,auc\n";
    for (std::size_t d = 0; d < curve.durations.size(); ++d)
        csv << fmt(curve.durations[d]) << ',' << fmt(curve.reports[d].metrics.accuracy) << ','
            << fmt(curve.reports[d].metrics.f1) << ',' << fmt(curve.reports[d].roc.auc) << '\n';
    report::write_text(st.dir / "classification.csv", csv.str());
    report::write_text(st.dir / "within.csv", report::stability_csv(within));
    report::write_text(st.dir / "between.csv", report::stability_csv(between));
    report::write_json(st.dir / "summary.json", {{"classification", report::to_json(curve)},
                                                 {"within_subject", report::to_json(within)},
                                                 {"between_subject", report::to_json(between)}});
}

void stage_reliability(Stage& st) {
    const Section sec = st.section();
    sec.allow({"tmif_index", "bands"});
    const TmifIndex idx = load_index(st, sec);
    const auto bands = sec.bands("bands", {kNarrowBands.begin(), kNarrowBands.end()});
    const auto cohort = load_timecourses(st, idx, bands, false, true);
    const auto rows = timecourse::split_half_reliability(cohort, bands);
    report::write_text(st.dir / "reliability.csv", report::reliability_csv(rows));
    std::ostringstream table;
    table << "band,r_aphasia,r_control,fisher_z,p_fisher\n";
    Json arr = Json::array();
    for (Band b : bands) {
        const timecourse::Reliability *ra = nullptr, *rc = nullptr;
        for (const auto& r : rows)
            if (r.band == b) (r.group == Group::aphasia ? ra : rc) = &r;
        double z = NAN, p = NAN;
        try {
            const auto f = timecourse::fisher_z_compare(ra->r, ra->n, rc->r, rc->n);
            z = f.z;
            p = std::min(1.0, f.p * static_cast<double>(bands.size()));
        } catch (const InvalidInput&) {
            // |r| = 1 or too few subjects: comparison undefined
        }
        table << to_string(b) << ',' << fmt(ra->r) << ',' << fmt(rc->r) << ',' << fmt(z) << ',' << fmt(p) << '\n';
        arr.push_back({{"band", to_string(b)},
                       {"aphasia", report::to_json(*ra)},
                       {"control", report::to_json(*rc)},
                       {"fisher_z", std::isfinite(z) ? Json(z) : Json(nullptr)},
                       {"p_fisher", std::isfinite(p) ? Json(p) : Json(nullptr)}});
    }
    report::write_text(st.dir / "table.csv", table.str());
    report::write_json(st.dir / "summary.json", arr);
}

void stage_bandcorr(Stage& st) {
    const Section sec = st.section();
    sec.allow({"tmif_index", "bands"});
    const TmifIndex idx = load_index(st, sec);
    const auto bands = sec.bands("bands", {kAllBands.begin(), kAllBands.end()});
    const auto cohort = load_subjects(st, idx, bands);
    Json out = Json::object();
    for (Group g : {Group::aphasia, Group::control}) {
        const auto r = timecourse::band_correlation_matrix(cohort, g, bands);
        report::write_text(st.dir / (std::string(to_string(g)) + ".csv"), report::matrix_csv(r, bands));
        Json rows = Json::array();
        for (Eigen::Index i = 0; i < r.rows(); ++i) {
            Json row = Json::array();
            for (Eigen::Index j = 0; j < r.cols(); ++j) row.push_back(r(i, j));
            rows.push_back(row);
        }
        out[std::string(to_string(g))] = rows;
    }
    std::vector<std::string> names;
    for (Band b : bands) names.emplace_back(to_string(b));
    out["bands"] = names;
    report::write_json(st.dir / "bandcorr.json", out);
}

void stage_report(Stage& st) {
    const Section sec = st.section();
    sec.allow({});
    Json out = Json::object();
    out["version"] = ENVTRACK_VERSION;
    out["seed"] = st.seed;
    auto include_json = [&](const std::string& stage, const std::string& file, const std::string& key) {
        const auto p = st.output_of(stage) / file;
        if (!fs::exists(p)) return;
        st.input(p);
        out[key] = report::read_json(p);
    };
    include_json("classify", "report.json", "classification");
    include_json("classify", "ablation.json", "ablation");
    include_json("duration", "summary.json", "duration");
    include_json("reliability", "summary.json", "reliability");
    include_json("bandcorr", "bandcorr.json", "band_correlations");
    const auto cluster_csv = st.output_of("cluster") / "summary.csv";
    if (fs::exists(cluster_csv)) {
        st.input(cluster_csv);
        std::ifstream in(cluster_csv);
        std::string line;
        std::getline(in, line);
        Json rows = Json::array();
        while (std::getline(in, line)) rows.push_back(line);
        out["clusters"] = rows;
    }
    const auto null_csv = st.output_of("null") / "levels.csv";
    if (fs::exists(null_csv)) {
        st.input(null_csv);
        std::ifstream in(null_csv);
        std::string line;
        std::getline(in, line);
        std::map<std::string, std::pair<int, int>> counts;  // band -> (significant, total)
        while (std::getline(in, line)) {
            std::vector<std::string> f;
            std::istringstream row(line);
            for (std::string cell; std::getline(row, cell, ',');) f.push_back(cell);
            if (f.size() != 6) throw FormatError(null_csv.string() + ": malformed row");
            auto& c = counts[f[2]];
            c.first += f[5] == "1";
            c.second += 1;
        }
        Json j = Json::object();
        for (const auto& [band, c] : counts) j[band] = {{"significant", c.first}, {"subjects", c.second}};
        out["significant_tracking"] = j;
    }
    // Hashes of the upstream artifacts that fed the report, by run-relative name.
    Json hashes = Json::object();
    for (const auto& stage : {"tmif", "classify", "cluster", "duration", "reliability", "bandcorr", "null"}) {
        const auto dir = st.output_of(stage);
        if (!fs::exists(dir)) continue;
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(dir))
            if (e.is_regular_file() && e.path().filename() != "run.json") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) hashes[f.lexically_relative(st.run_dir).generic_string()] = sha256_file(f);
    }
    out["artifacts"] = hashes;
    if (out.size() == 3 && hashes.empty())
        throw InvalidInput("nothing to report: run classify, cluster, duration, reliability, bandcorr or null first");
    report::write_json(st.dir / "report.json", out);
}

using StageFn = std::function<void(Stage&)>;

const std::map<std::string, StageFn>& stage_table() {
    static const std::map<std::string, StageFn> table{
        {"synth", stage_synth},       {"envelope", stage_envelope}, {"preprocess", stage_preprocess},
        {"tmif", stage_tmif},         {"null", stage_null},         {"cluster", stage_cluster},
        {"classify", stage_classify}, {"duration", stage_duration}, {"reliability", stage_reliability},
        {"bandcorr", stage_bandcorr}, {"report", stage_report}};
    return table;
}

void write_run_log(Stage& st) {
    Json inputs = Json::array();
    for (const auto& p : st.inputs) inputs.push_back({{"path", display_path(st, p)}, {"sha256", sha256_file(p)}});
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(st.dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    Json outputs = Json::array();
    for (const auto& f : files)
        outputs.push_back({{"path", f.lexically_relative(st.dir).generic_string()}, {"sha256", sha256_file(f)}});
    report::write_json(st.dir / "run.json", {{"stage", st.name},
                                             {"version", ENVTRACK_VERSION},
                                             {"seed", st.seed},
                                             {"jobs", st.jobs},
                                             {"config", st.config},
                                             {"inputs", inputs},
                                             {"outputs", outputs}});
}

}  // namespace

void run(const Invocation& inv) {
    const auto& table = stage_table();
    const auto fn = table.find(inv.stage);
    if (fn == table.end()) throw ConfigError("unknown stage '" + inv.stage + "'");

    std::ifstream in(inv.config_path);
    if (!in) throw ConfigError("cannot open config " + inv.config_path.string());
    Json config;
    try {
        config = Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + inv.config_path.string() + " is not valid JSON: " + e.what());
    }
    if (!config.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& o : inv.overrides) apply_override(config, o);
    if (inv.seed) config["run"]["seed"] = *inv.seed;
    if (inv.run_id) config["run"]["id"] = *inv.run_id;

    if (!config.contains("run") || !config["run"].is_object()) throw ConfigError("missing config key 'run'");
    const Section run_sec(&config.at("run"), "run");
    run_sec.allow({"id", "seed", "out"});
    const auto seed = run_sec.require<std::uint64_t>("seed");
    const auto id = run_sec.require<std::string>("id");
    if (id.empty() || id.find('/') != std::string::npos || id == "." || id == "..")
        throw ConfigError("config key 'run.id' must be a plain directory name");
    if (!config.contains(inv.stage) || !config[inv.stage].is_object())
        throw ConfigError("missing config key '" + inv.stage + "'");

    Stage st;
    st.name = inv.stage;
    st.config = config;
    st.config_dir = fs::absolute(inv.config_path).parent_path();
    const fs::path out_root = inv.out ? fs::absolute(*inv.out) : st.resolve(run_sec.get<std::string>("out", "out"));
    st.run_dir = out_root / id;
    st.seed = seed;
    st.jobs = resolve_jobs(inv.jobs);

    const fs::path final_dir = st.run_dir / st.name;
    st.dir = st.run_dir / ("." + st.name + ".partial");
    fs::remove_all(st.dir);
    fs::create_directories(st.dir);
    try {
        fn->second(st);
        write_run_log(st);
        fs::remove_all(final_dir);
        fs::rename(st.dir, final_dir);
    } catch (...) {
        std::error_code ec;
        fs::remove_all(st.dir, ec);
        throw;
    }
    std::cout << final_dir.string() << "\n";
}

}  // namespace envtrack::cli
