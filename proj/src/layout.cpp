#include "envtrack/layout.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace envtrack {

namespace {

struct Spherical {
    const char* name;
    double theta;  // inclination, degrees (negative on the left hemisphere)
    double phi;    // azimuth, degrees
};

// BioSemi A1..A32, B1..B32.
constexpr Spherical kBiosemi64[] = {
    {"Fp1", -92, -72}, {"AF7", -92, -54}, {"AF3", -74, -65}, {"F1", -50, -68},
    {"F3", -60, -51},  {"F5", -75, -41},  {"F7", -92, -36},  {"FT7", -92, -18},
    {"FC5", -72, -21}, {"FC3", -50, -28}, {"FC1", -32, -45}, {"C1", -23, 0},
    {"C3", -46, 0},    {"C5", -69, 0},    {"T7", -92, 0},    {"TP7", -92, 18},
    {"CP5", -72, 21},  {"CP3", -50, 28},  {"CP1", -32, 45},  {"P1", -50, 68},
    {"P3", -60, 51},   {"P5", -75, 41},   {"P7", -92, 36},   {"P9", -115, 36},
    {"PO7", -92, 54},  {"PO3", -74, 65},  {"O1", -92, 72},   {"Iz", 115, -90},
    {"Oz", 92, -90},   {"POz", 69, -90},  {"Pz", 46, -90},   {"CPz", 23, -90},
    {"Fpz", 92, 90},   {"Fp2", 92, 72},   {"AF8", 92, 54},   {"AF4", 74, 65},
    {"AFz", 69, 90},   {"Fz", 46, 90},    {"F2", 50, 68},    {"F4", 60, 51},
    {"F6", 75, 41},    {"F8", 92, 36},    {"FT8", 92, 18},   {"FC6", 72, 21},
    {"FC4", 50, 28},   {"FC2", 32, 45},   {"FCz", 23, 90},   {"Cz", 0, 0},
    {"C2", 23, 0},     {"C4", 46, 0},     {"C6", 69, 0},     {"T8", 92, 0},
    {"TP8", 92, -18},  {"CP6", 72, -21},  {"CP4", 50, -28},  {"CP2", 32, -45},
    {"P2", 50, -68},   {"P4", 60, -51},   {"P6", 75, -41},   {"P8", 92, -36},
    {"P10", 115, -36}, {"PO8", 92, -54},  {"PO4", 74, -65},  {"O2", 92, -72},
};

Layout make_biosemi64() {
    Layout out;
    for (const auto& s : kBiosemi64) {
        const double phi = s.phi * std::numbers::pi / 180.0;
        // Round to 1e-6 so the shipped CSV reproduces the built-in table exactly.
        auto r6 = [](double v) { return std::round(v * 1e6) / 1e6; };
        out.push_back({s.name, r6(s.theta * std::cos(phi) / 92.0), r6(s.theta * std::sin(phi) / 92.0)});
    }
    return out;
}

}  // namespace

const Layout& biosemi64_layout() {
    static const Layout layout = make_biosemi64();
    return layout;
}

Layout load_layout_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open layout " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("name,x,y", 0) != 0)
        throw FormatError(path.string() + ": layout CSV must start with 'name,x,y'");
    Layout out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        ChannelPosition p;
        std::string x, y;
        if (!std::getline(row, p.name, ',') || !std::getline(row, x, ',') || !std::getline(row, y))
            throw FormatError(path.string() + ": malformed layout row '" + line + "'");
        try {
            p.x = std::stod(x);
            p.y = std::stod(y);
        } catch (const std::exception&) {
            throw FormatError(path.string() + ": malformed layout row '" + line + "'");
        }
        out.push_back(std::move(p));
    }
    return out;
}

void save_layout_csv(const Layout& layout, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.precision(10);
    out << "name,x,y\n";
    for (const auto& p : layout) out << p.name << ',' << p.x << ',' << p.y << '\n';
}

Layout resolve_layout(const std::string& spec, const std::filesystem::path& root) {
    if (spec == "builtin:biosemi64") return biosemi64_layout();
    std::filesystem::path p(spec);
    if (p.is_relative() && !root.empty()) p = root / p;
    return load_layout_csv(p);
}

Layout subset_layout(const Layout& layout, const std::vector<std::string>& channels) {
    Layout out;
    for (const auto& name : channels) {
        bool found = false;
        for (const auto& p : layout)
            if (p.name == name) {
                out.push_back(p);
                found = true;
                break;
            }
        if (!found) throw InvalidInput("channel '" + name + "' has no layout position");
    }
    return out;
}

ChannelSelection default_channel_selection() {
    return {"F3", "F1", "Fz", "F2", "F4", "FC3", "FC1", "FCz", "FC2", "FC4", "C3", "C1", "Cz",
            "C2", "C4", "P3", "P1", "Pz", "P2", "P4", "PO3", "POz", "PO4", "O1", "Oz", "O2"};
}

}  // namespace envtrack
