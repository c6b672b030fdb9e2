#include "envtrack/report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace envtrack::report {

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

namespace {

Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

template <typename T>
Json optional_number(const std::optional<T>& v) {
    return v ? number(*v) : Json(nullptr);
}

}  // namespace

Json to_json(const LagGrid& grid) {
    return {{"fs", grid.fs()}, {"first_lag", grid.first_lag()}, {"last_lag", grid.last_lag()},
            {"t_min_ms", grid.time_ms(0)}, {"t_max_ms", grid.time_ms(grid.size() - 1)}};
}

Json to_json(const classifier::EvaluationReport& rep) {
    Json subjects = Json::array();
    for (std::size_t i = 0; i < rep.subject_ids.size(); ++i) {
        const auto& f = rep.folds[i];
        subjects.push_back({{"id", rep.subject_ids[i]},
                            {"label", rep.labels[i]},
                            {"decision", number(rep.decisions[i])},
                            {"C", f.C},
                            {"prune_ms", f.prune_ms},
                            {"inner_accuracy", f.inner_accuracy}});
    }
    Json roc = Json::array();
    for (const auto& p : rep.roc.points) roc.push_back({number(p.fpr), number(p.tpr), number(p.threshold)});
    return {{"accuracy", rep.metrics.accuracy},
            {"f1", rep.metrics.f1},
            {"sensitivity", rep.metrics.sensitivity},
            {"specificity", rep.metrics.specificity},
            {"auc", rep.roc.auc},
            {"positive_class", "aphasia"},
            {"roc", roc},
            {"subjects", subjects}};
}

Json to_json(const classifier::Ablation& ab) {
    return {{"band", to_string(ab.band)},
            {"accuracy", ab.report.metrics.accuracy},
            {"f1", ab.report.metrics.f1},
            {"auc", ab.report.roc.auc},
            {"drop_accuracy", ab.d_accuracy},
            {"drop_f1", ab.d_f1},
            {"drop_auc", ab.d_auc}};
}

Json to_json(const clusterstats::ClusterResult& res) {
    Json clusters = Json::array();
    for (const auto& c : res.clusters) {
        Json members = Json::array();
        std::size_t lo = res.grid.size(), hi = 0;
        for (const auto& m : c.members) {
            members.push_back({res.channels[m.channel], res.grid.lag(m.lag_index)});
            lo = std::min(lo, m.lag_index);
            hi = std::max(hi, m.lag_index);
        }
        clusters.push_back({{"sign", c.sign},
                            {"mass", c.mass},
                            {"p", c.p_value},
                            {"start_ms", res.grid.time_ms(lo)},
                            {"end_ms", res.grid.time_ms(hi)},
                            {"size", c.members.size()},
                            {"members", members}});
    }
    Json t = Json::array();
    for (Eigen::Index r = 0; r < res.t_values.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index l = 0; l < res.t_values.cols(); ++l) row.push_back(number(res.t_values(r, l)));
        t.push_back(row);
    }
    return {{"grid", to_json(res.grid)},
            {"channels", res.channels},
            {"tail", std::string(clusterstats::to_string(res.tail))},
            {"cluster_alpha", res.cluster_alpha},
            {"n_permutations", res.n_permutations},
            {"exhaustive", res.exhaustive},
            {"clusters", clusters},
            {"t", t}};
}

Json to_json(const nullperm::NullDistribution& null) {
    return {{"band", to_string(null.band.name)},
            {"statistic", "max_over_lags"},
            {"percentile", null.percentile_used},
            {"significance_level", null.significance_level},
            {"values", null.values}};
}

Json to_json(const timecourse::StabilityCurve& curve) {
    Json bands = Json::object();
    for (const auto& [band, pts] : curve.bands) {
        Json arr = Json::array();
        for (const auto& p : pts) arr.push_back({{"value", number(p.value)}, {"stderr", number(p.std_error)}, {"n", p.n}});
        bands[std::string(to_string(band))] = arr;
    }
    Json avg = Json::array();
    for (double v : curve.average) avg.push_back(number(v));
    return {{"kind", curve.kind == timecourse::StabilityKind::within_subject ? "within_subject" : "between_subject"},
            {"durations_min", curve.durations},
            {"bands", bands},
            {"average", avg},
            {"knee_min", optional_number(curve.knee)}};
}

Json to_json(const timecourse::DurationCurve& curve) {
    Json rows = Json::array();
    for (std::size_t i = 0; i < curve.durations.size(); ++i) {
        const auto& r = curve.reports[i];
        rows.push_back({{"duration_min", curve.durations[i]},
                        {"accuracy", r.metrics.accuracy},
                        {"f1", r.metrics.f1},
                        {"auc", r.roc.auc}});
    }
    return {{"curve", rows}, {"knee_min", optional_number(curve.knee)}};
}

Json to_json(const timecourse::Reliability& rel) {
    return {{"band", to_string(rel.band)}, {"group", to_string(rel.group)}, {"n", rel.n},
            {"r", number(rel.r)},          {"ci_lo", number(rel.ci_lo)},    {"ci_hi", number(rel.ci_hi)},
            {"p", number(rel.p)}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw Error("failed writing " + path.string());
}

void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

Json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::string roc_csv(const classifier::Roc& roc) {
    std::ostringstream os;
    os << "fpr,tpr,threshold\n";
    for (const auto& p : roc.points) os << fmt(p.fpr) << ',' << fmt(p.tpr) << ',' << fmt(p.threshold) << '\n';
    return os.str();
}

std::string stability_csv(const timecourse::StabilityCurve& curve) {
    std::ostringstream os;
    os << "band,duration_min,value,stderr\n";
    for (const auto& [band, pts] : curve.bands)
        for (std::size_t d = 0; d < pts.size(); ++d)
            os << to_string(band) << ',' << fmt(curve.durations[d]) << ',' << fmt(pts[d].value) << ','
               << fmt(pts[d].std_error) << '\n';
    for (std::size_t d = 0; d < curve.average.size(); ++d)
        os << "average," << fmt(curve.durations[d]) << ',' << fmt(curve.average[d]) << ",nan\n";
    return os.str();
}

std::string reliability_csv(const std::vector<timecourse::Reliability>& rows) {
    std::ostringstream os;
    os << "band,group,n,r,ci_lo,ci_hi,p\n";
    for (const auto& r : rows)
        os << to_string(r.band) << ',' << to_string(r.group) << ',' << r.n << ',' << fmt(r.r) << ','
           << fmt(r.ci_lo) << ',' << fmt(r.ci_hi) << ',' << fmt(r.p) << '\n';
    return os.str();
}

std::string matrix_csv(const Eigen::MatrixXd& m, std::span<const Band> bands) {
    if (m.rows() != static_cast<Eigen::Index>(bands.size()) || m.cols() != m.rows())
        throw InvalidInput("matrix does not match the band list");
    std::ostringstream os;
    os << "band";
    for (Band b : bands) os << ',' << to_string(b);
    os << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        os << to_string(bands[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < m.cols(); ++j) os << ',' << fmt(m(i, j));
        os << '\n';
    }
    return os.str();
}

}  // namespace envtrack::report
