#include "envtrack/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

namespace envtrack::io {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr int kFormatVersion = 1;

fs::path with_ext(const fs::path& base, const char* ext) {
    fs::path p = base;
    p += ext;
    return p;
}

std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        v = ((v & 0xFF) << 24) | ((v & 0xFF00) << 8) | ((v >> 8) & 0xFF00) | (v >> 24);
    }
    return v;
}

void write_payload(const Eigen::MatrixXd& m, const fs::path& path) {
    std::vector<std::uint32_t> words(static_cast<std::size_t>(m.size()));
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            words[k++] = to_le(std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c))));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(words.data()),
              static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
    if (!out) throw Error("failed writing " + path.string());
}

Eigen::MatrixXd read_payload(const fs::path& path, Eigen::Index rows, Eigen::Index cols) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open payload " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto expected = static_cast<std::size_t>(rows * cols) * sizeof(std::uint32_t);
    if (bytes.size() != expected) {
        std::ostringstream os;
        os << "payload " << path.string() << " has " << bytes.size() << " bytes, header declares "
           << rows << "x" << cols << " float32 (" << expected << " bytes)";
        throw FormatError(os.str());
    }
    Eigen::MatrixXd m(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c, k += 4) {
            std::uint32_t w;
            std::memcpy(&w, bytes.data() + k, 4);
            m(r, c) = static_cast<double>(std::bit_cast<float>(to_le(w)));
        }
    return m;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << text;
}

ordered_json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    try {
        return ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

struct Sidecar {
    double fs = 0.0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    std::vector<std::string> channels;
    SignalKind kind = SignalKind::eeg;
    std::optional<int> first_lag;
};

void write_sidecar(const Sidecar& s, const fs::path& path) {
    ordered_json j;
    j["version"] = kFormatVersion;
    j["fs"] = s.fs;
    j["rows"] = s.rows;
    j["cols"] = s.cols;
    j["channels"] = s.channels;
    j["kind"] = std::string(to_string(s.kind));
    if (s.first_lag) j["first_lag"] = *s.first_lag;
    write_text(path, j.dump() + "\n");
}

Sidecar read_sidecar(const fs::path& path) {
    const auto j = read_json(path);
    try {
        const int version = j.at("version").get<int>();
        if (version != kFormatVersion)
            throw FormatError(path.string() + ": unknown format version " + std::to_string(version));
        Sidecar s;
        s.fs = j.at("fs").get<double>();
        s.rows = j.at("rows").get<Eigen::Index>();
        s.cols = j.at("cols").get<Eigen::Index>();
        s.channels = j.at("channels").get<std::vector<std::string>>();
        s.kind = parse_signal_kind(j.at("kind").get<std::string>());
        if (j.contains("first_lag")) s.first_lag = j.at("first_lag").get<int>();
        if (s.rows < 0 || s.cols < 0) throw FormatError(path.string() + ": negative dimensions");
        if (static_cast<Eigen::Index>(s.channels.size()) != s.cols)
            throw FormatError(path.string() + ": channel list length differs from cols");
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace

fs::path matrix_base(const fs::path& path) {
    const auto ext = path.extension();
    if (ext == ".f32" || ext == ".json") {
        fs::path p = path;
        return p.replace_extension();
    }
    return path;
}

void write_matrix(const Recording& rec, const fs::path& path) {
    const auto base = matrix_base(path);
    if (base.has_parent_path()) fs::create_directories(base.parent_path());
    write_payload(rec.samples(), with_ext(base, ".f32"));
    write_sidecar({rec.fs(), rec.n_samples(), rec.n_channels(), rec.channel_names(), rec.kind(),
                   std::nullopt},
                  with_ext(base, ".json"));
}

Recording read_matrix(const fs::path& path) {
    const auto base = matrix_base(path);
    const auto s = read_sidecar(with_ext(base, ".json"));
    auto m = read_payload(with_ext(base, ".f32"), s.rows, s.cols);
    try {
        return Recording(std::move(m), s.fs, s.channels, s.kind);
    } catch (const InvalidInput& e) {
        throw FormatError(base.string() + ": " + e.what());
    }
}

void write_tmif(const Tmif& tmif, const fs::path& path) {
    const auto base = matrix_base(path);
    if (base.has_parent_path()) fs::create_directories(base.parent_path());
    const Eigen::MatrixXd lags_by_rows = tmif.values.transpose();
    write_payload(lags_by_rows, with_ext(base, ".f32"));
    write_sidecar({tmif.grid.fs(), lags_by_rows.rows(), lags_by_rows.cols(), tmif.rows,
                   SignalKind::tmif, tmif.grid.first_lag()},
                  with_ext(base, ".json"));
}

Tmif read_tmif(const fs::path& path) {
    const auto base = matrix_base(path);
    const auto s = read_sidecar(with_ext(base, ".json"));
    if (s.kind != SignalKind::tmif || !s.first_lag)
        throw FormatError(base.string() + ": not a TMIF matrix");
    if (s.rows < 1) throw FormatError(base.string() + ": empty TMIF");
    Tmif t;
    t.grid = LagGrid::from_lags(s.fs, *s.first_lag, *s.first_lag + static_cast<int>(s.rows) - 1);
    t.rows = s.channels;
    t.values = read_payload(with_ext(base, ".f32"), s.rows, s.cols).transpose();
    return t;
}

void write_tmif_csv(const Tmif& tmif, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ostringstream os;
    os.precision(10);
    os << "lag_ms";
    if (tmif.is_multivariate()) {
        os << ",value";
    } else {
        for (const auto& r : tmif.rows) os << ',' << r;
    }
    os << '\n';
    for (std::size_t i = 0; i < tmif.grid.size(); ++i) {
        os << tmif.grid.time_ms(i);
        for (Eigen::Index r = 0; r < tmif.values.rows(); ++r)
            os << ',' << tmif.values(r, static_cast<Eigen::Index>(i));
        os << '\n';
    }
    write_text(path, os.str());
}

// ---- WAV ----

namespace {

template <typename T>
T read_le(const std::vector<char>& b, std::size_t off) {
    if (off + sizeof(T) > b.size()) throw FormatError("truncated WAV file");
    T v;
    std::memcpy(&v, b.data() + off, sizeof(T));
    return v;
}

template <typename T>
void put_le(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

void write_wav(const std::string& data, std::uint16_t format, std::uint16_t bits, double fs,
               const fs::path& path) {
    const auto rate = static_cast<std::uint32_t>(std::lround(fs));
    std::string out;
    out += "RIFF";
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(36 + data.size()));
    out += "WAVEfmt ";
    put_le<std::uint32_t>(out, 16);
    put_le<std::uint16_t>(out, format);
    put_le<std::uint16_t>(out, 1);
    put_le<std::uint32_t>(out, rate);
    put_le<std::uint32_t>(out, rate * bits / 8);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(bits / 8));
    put_le<std::uint16_t>(out, bits);
    out += "data";
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.size()));
    out += data;
    write_text(path, out);
}

}  // namespace

Recording read_wav(const fs::path& path) {
    static_assert(std::endian::native == std::endian::little, "WAV reader assumes little-endian");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::vector<char> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 ||
        std::memcmp(b.data() + 8, "WAVE", 4) != 0)
        throw FormatError(path.string() + ": not a RIFF/WAVE file");
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    std::size_t off = 12;
    while (off + 8 <= b.size()) {
        const std::string id(b.data() + off, 4);
        const auto size = read_le<std::uint32_t>(b, off + 4);
        const std::size_t body = off + 8;
        if (id == "fmt ") {
            format = read_le<std::uint16_t>(b, body);
            channels = read_le<std::uint16_t>(b, body + 2);
            rate = read_le<std::uint32_t>(b, body + 4);
            bits = read_le<std::uint16_t>(b, body + 14);
            if (format == 0xFFFE && size >= 26) format = read_le<std::uint16_t>(b, body + 24);
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) throw FormatError(path.string() + ": data chunk before fmt chunk");
            if (channels != 1) throw FormatError(path.string() + ": only mono WAV is supported");
            if (body + size > b.size()) throw FormatError(path.string() + ": truncated data chunk");
            std::vector<double> x;
            if (format == 1 && bits == 16) {
                x.resize(size / 2);
                for (std::size_t i = 0; i < x.size(); ++i)
                    x[i] = read_le<std::int16_t>(b, body + 2 * i) / 32768.0;
            } else if (format == 3 && bits == 32) {
                x.resize(size / 4);
                for (std::size_t i = 0; i < x.size(); ++i)
                    x[i] = read_le<float>(b, body + 4 * i);
            } else {
                throw FormatError(path.string() + ": unsupported WAV encoding (need PCM16 or float32)");
            }
            Eigen::MatrixXd m = Eigen::Map<Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
            return Recording(std::move(m), static_cast<double>(rate), {"audio"}, SignalKind::audio);
        }
        off = body + size + (size & 1U);
    }
    throw FormatError(path.string() + ": no data chunk");
}

void write_wav_float32(const std::vector<double>& samples, double fs, const fs::path& path) {
    std::string data;
    for (double v : samples) put_le<float>(data, static_cast<float>(v));
    write_wav(data, 3, 32, fs, path);
}

void write_wav_pcm16(const std::vector<double>& samples, double fs, const fs::path& path) {
    std::string data;
    for (double v : samples) {
        const double s = std::clamp(std::round(v * 32768.0), -32768.0, 32767.0);
        put_le<std::int16_t>(data, static_cast<std::int16_t>(s));
    }
    write_wav(data, 1, 16, fs, path);
}

// ---- manifest ----

namespace {

fs::path resolve(const fs::path& root, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : (root / path).lexically_normal();
}

std::string relative_to(const fs::path& root, const fs::path& p) {
    if (p.is_relative()) return p.generic_string();
    auto rel = p.lexically_relative(root);
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return p.generic_string();
}

void require_matrix(const fs::path& base, const std::string& what) {
    const auto b = matrix_base(base);
    if (!fs::exists(with_ext(b, ".json")) || !fs::exists(with_ext(b, ".f32")))
        throw InvalidInput("manifest references missing " + what + " matrix " + b.string());
}

std::map<Band, fs::path> read_band_paths(const ordered_json& j, const fs::path& root,
                                         const std::string& what) {
    std::map<Band, fs::path> out;
    for (const auto& [key, value] : j.items()) {
        const auto p = resolve(root, value.get<std::string>());
        require_matrix(p, what);
        out[parse_band(key)] = p;
    }
    return out;
}

ordered_json write_band_paths(const std::map<Band, fs::path>& m, const fs::path& root) {
    ordered_json j = ordered_json::object();
    for (Band b : kAllBands) {
        auto it = m.find(b);
        if (it != m.end()) j[std::string(to_string(b))] = relative_to(root, it->second);
    }
    return j;
}

}  // namespace

const ManifestSubject& CohortManifest::subject(std::string_view id) const {
    for (const auto& s : subjects)
        if (s.id == id) return s;
    throw InvalidInput("no subject '" + std::string(id) + "' in manifest");
}

CohortManifest load_manifest(const fs::path& path) {
    const auto j = read_json(path);
    const auto root = fs::absolute(path).parent_path();
    CohortManifest m;
    try {
        m.version = j.value("version", 1);
        if (m.version != 1) throw FormatError("unsupported manifest version");
        if (j.contains("fs")) m.fs = j.at("fs").get<double>();
        m.channel_selection = j.value("channel_selection", ChannelSelection{});
        if (j.contains("adjacency")) {
            const auto& a = j.at("adjacency");
            m.layout = a.value("layout", m.layout);
            m.adjacency_k = a.value("k", m.adjacency_k);
        }
        if (j.contains("audio")) {
            m.audio = resolve(root, j.at("audio").get<std::string>());
            if (!fs::exists(*m.audio))
                throw InvalidInput("manifest references missing audio " + m.audio->string());
        }
        if (j.contains("envelopes")) m.envelopes = read_band_paths(j.at("envelopes"), root, "envelope");
        std::set<std::string> seen;
        for (const auto& s : j.at("subjects")) {
            ManifestSubject sub;
            sub.id = s.at("id").get<std::string>();
            if (!seen.insert(sub.id).second)
                throw InvalidInput("duplicate subject id '" + sub.id + "' in manifest");
            sub.group = parse_group(s.at("group").get<std::string>());
            sub.age = s.at("age").get<double>();
            if (!(sub.age > 0.0)) throw InvalidInput("subject '" + sub.id + "' has non-positive age");
            if (s.contains("eeg")) {
                sub.eeg = resolve(root, s.at("eeg").get<std::string>());
                require_matrix(*sub.eeg, "EEG");
            }
            if (s.contains("eeg_bands")) sub.eeg_bands = read_band_paths(s.at("eeg_bands"), root, "EEG");
            if (s.contains("envelopes"))
                sub.envelopes = read_band_paths(s.at("envelopes"), root, "envelope");
            m.subjects.push_back(std::move(sub));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return m;
}

void save_manifest(const CohortManifest& m, const fs::path& path) {
    const auto root = fs::absolute(path).parent_path();
    fs::create_directories(root);
    ordered_json j;
    j["version"] = m.version;
    if (m.fs) j["fs"] = *m.fs;
    j["channel_selection"] = m.channel_selection;
    j["adjacency"] = {{"layout", m.layout}, {"k", m.adjacency_k}};
    if (m.audio) j["audio"] = relative_to(root, *m.audio);
    if (!m.envelopes.empty()) j["envelopes"] = write_band_paths(m.envelopes, root);
    j["subjects"] = ordered_json::array();
    for (const auto& s : m.subjects) {
        ordered_json e;
        e["id"] = s.id;
        e["group"] = std::string(to_string(s.group));
        e["age"] = s.age;
        if (s.eeg) e["eeg"] = relative_to(root, *s.eeg);
        if (!s.eeg_bands.empty()) e["eeg_bands"] = write_band_paths(s.eeg_bands, root);
        if (!s.envelopes.empty()) e["envelopes"] = write_band_paths(s.envelopes, root);
        j["subjects"].push_back(std::move(e));
    }
    write_text(path, j.dump(2) + "\n");
}

}  // namespace envtrack::io
