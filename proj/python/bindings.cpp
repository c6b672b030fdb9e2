#include "envtrack/classifier.hpp"
#include "envtrack/clusterstats.hpp"
#include "envtrack/dsp.hpp"
#include "envtrack/gcmi.hpp"
#include "envtrack/layout.hpp"
#include "envtrack/nullperm.hpp"
#include "envtrack/synthcohort.hpp"
#include "envtrack/timecourse.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace envtrack;

namespace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

std::vector<std::string> default_names(Eigen::Index n) {
    std::vector<std::string> out;
    for (Eigen::Index c = 0; c < n; ++c) out.push_back("ch" + std::to_string(c + 1));
    return out;
}

Recording as_eeg(const Matrix& eeg, double fs, std::optional<std::vector<std::string>> names) {
    return Recording(eeg, fs, names ? *names : default_names(eeg.cols()), SignalKind::eeg);
}

std::vector<double> as_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

py::dict tmif_dict(const Tmif& t) {
    std::vector<double> lags_ms;
    for (std::size_t i = 0; i < t.grid.size(); ++i) lags_ms.push_back(t.grid.time_ms(i));
    py::dict d;
    d["lags_ms"] = lags_ms;
    d["rows"] = t.rows;
    d["values"] = t.values;
    return d;
}

Tmif curve_tmif(const Vector& values, double fs, int first_lag) {
    Tmif t;
    t.grid = LagGrid::from_lags(fs, first_lag, first_lag + static_cast<int>(values.size()) - 1);
    t.rows = {"multivariate"};
    t.values = values.transpose();
    return t;
}

py::dict cluster_dict(const clusterstats::ClusterResult& r) {
    py::list clusters;
    for (const auto& c : r.clusters) {
        std::vector<std::pair<std::size_t, std::size_t>> members;
        for (const auto& m : c.members) members.emplace_back(m.channel, m.lag_index);
        py::dict d;
        d["sign"] = c.sign;
        d["mass"] = c.mass;
        d["p"] = c.p_value;
        d["members"] = members;
        clusters.append(d);
    }
    py::dict d;
    d["t"] = r.t_values;
    d["clusters"] = clusters;
    d["null_max"] = r.null_max;
    d["n_permutations"] = r.n_permutations;
    d["exhaustive"] = r.exhaustive;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Envelope tracking analyses (compiled core)";

    static py::exception<Error> error(m, "EnvtrackError", PyExc_RuntimeError);
    static py::exception<InvalidInput> invalid(m, "InvalidInput", PyExc_ValueError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const InvalidInput& e) {
            PyErr_SetString(invalid.ptr(), e.what());
        } catch (const Error& e) {
            PyErr_SetString(error.ptr(), e.what());
        }
    });

    m.def("mix_seed", &mix_seed, py::arg("seed"), py::arg("index"));

    // gcmi
    m.def("copula_transform", [](const Matrix& x) { return gcmi::copula_transform(x); }, py::arg("x"),
          "Column-wise rank-to-normal transform.");
    m.def(
        "gcmi",
        [](const Matrix& x, const Matrix& y, bool bias_correct) {
            gcmi::MiOptions o;
            o.bias_correct = bias_correct;
            return gcmi::gcmi(x, y, o);
        },
        py::arg("x"), py::arg("y"), py::arg("bias_correct") = false,
        "Gaussian-copula mutual information in bits between the columns of x and y.");
    m.def(
        "tmif",
        [](const Matrix& eeg, const Vector& env, double fs, double t_min_ms, double t_max_ms, bool multivariate,
           std::optional<std::vector<std::string>> channels, std::optional<std::vector<std::string>> selection) {
            const Recording rec = as_eeg(eeg, fs, channels);
            const auto grid = LagGrid::make(fs, t_min_ms, t_max_ms);
            const auto e = as_vec(env);
            if (!multivariate) return tmif_dict(gcmi::tmif_single_channel(rec, e, grid));
            return tmif_dict(gcmi::tmif_multivariate(rec, e, grid, selection ? *selection : rec.channel_names()));
        },
        py::arg("eeg"), py::arg("env"), py::arg("fs") = 128.0, py::arg("t_min_ms") = -200.0,
        py::arg("t_max_ms") = 500.0, py::arg("multivariate") = true, py::arg("channels") = py::none(),
        py::arg("selection") = py::none(),
        "Temporal mutual information function; eeg is samples x channels.");

    // dsp
    m.def(
        "band_filter",
        [](const Matrix& x, double fs, const std::string& band) {
            return dsp::band_filter(as_eeg(x, fs, std::nullopt), BandSpec::canonical(parse_band(band))).samples();
        },
        py::arg("x"), py::arg("fs"), py::arg("band"));
    m.def(
        "preprocess_eeg",
        [](const Matrix& eeg, double fs, std::vector<std::string> bands,
           std::optional<std::vector<std::string>> channels) {
            std::vector<Band> bs;
            for (const auto& b : bands) bs.push_back(parse_band(b));
            std::map<std::string, Matrix> out;
            for (const auto& [b, rec] : dsp::preprocess_eeg(as_eeg(eeg, fs, channels), bs))
                out[std::string(to_string(b))] = rec.samples();
            return out;
        },
        py::arg("eeg"), py::arg("fs"), py::arg("bands"), py::arg("channels") = py::none());
    m.def(
        "band_envelopes",
        [](const Vector& envelope, double fs, std::vector<std::string> bands) {
            std::vector<Band> bs;
            for (const auto& b : bands) bs.push_back(parse_band(b));
            std::map<std::string, std::vector<double>> out;
            for (auto& [b, x] : dsp::band_envelopes(as_vec(envelope), fs, bs)) out[std::string(to_string(b))] = x;
            return out;
        },
        py::arg("envelope"), py::arg("fs"), py::arg("bands"));
    m.def(
        "extract_envelope",
        [](const Vector& audio, double fs) {
            return dsp::extract_envelope(Recording(audio, fs, {"audio"}, SignalKind::audio));
        },
        py::arg("audio"), py::arg("fs"), "Broadband envelope at 512 Hz.");

    // nullperm
    m.def(
        "spectrum_matched_noise",
        [](const Vector& x, std::uint64_t seed) { return nullperm::spectrum_matched_noise(as_vec(x), seed); },
        py::arg("x"), py::arg("seed"));
    m.def(
        "significance_level",
        [](const Matrix& eeg, const Vector& env, const std::string& band, int n_perm, double percentile,
           std::uint64_t seed, double fs) {
            const Recording rec = as_eeg(eeg, fs, std::nullopt);
            nullperm::NullOptions o;
            o.n_perm = n_perm;
            o.percentile = percentile;
            o.seed = seed;
            const auto d = nullperm::significance_level(rec, as_vec(env), LagGrid::default_grid(),
                                                        rec.channel_names(),
                                                        BandSpec::canonical(parse_band(band)), o);
            return py::make_tuple(d.significance_level, d.values);
        },
        py::arg("eeg"), py::arg("env"), py::arg("band"), py::arg("n_perm") = 1000, py::arg("percentile") = 95.0,
        py::arg("seed") = 0, py::arg("fs") = 128.0,
        "Returns (level, null values) for the maximum-over-lags statistic.");

    // clusterstats
    m.def(
        "welch_t",
        [](const Vector& a, const Vector& b) {
            const auto w = clusterstats::welch_t(as_vec(a), as_vec(b));
            return py::make_tuple(w.t, w.df);
        },
        py::arg("a"), py::arg("b"));
    m.def("count_relabelings", &clusterstats::count_relabelings, py::arg("n_a"), py::arg("n_b"));
    m.def(
        "temporal_cluster_test",
        [](const std::vector<Vector>& a, const std::vector<Vector>& b, int n_perm, double cluster_alpha,
           const std::string& tail, std::uint64_t seed, bool exhaustive, double fs, int first_lag) {
            std::vector<Tmif> ta, tb;
            for (const auto& v : a) ta.push_back(curve_tmif(v, fs, first_lag));
            for (const auto& v : b) tb.push_back(curve_tmif(v, fs, first_lag));
            clusterstats::ClusterOptions o;
            o.n_perm = n_perm;
            o.cluster_alpha = cluster_alpha;
            o.tail = clusterstats::parse_tail(tail);
            o.seed = seed;
            o.exhaustive = exhaustive;
            return cluster_dict(clusterstats::temporal_cluster_test(ta, tb, o));
        },
        py::arg("group_a"), py::arg("group_b"), py::arg("n_perm") = 5000, py::arg("cluster_alpha") = 0.05,
        py::arg("tail") = "two", py::arg("seed") = 0, py::arg("exhaustive") = false, py::arg("fs") = 128.0,
        py::arg("first_lag") = -26, "Cluster-mass permutation test on one curve per subject.");

    // classifier
    py::class_<classifier::SvmModel>(m, "SvmModel")
        .def_readonly("coef", &classifier::SvmModel::coef)
        .def_readonly("bias", &classifier::SvmModel::bias)
        .def_readonly("gamma", &classifier::SvmModel::gamma)
        .def_readonly("C", &classifier::SvmModel::C)
        .def_readonly("converged", &classifier::SvmModel::converged)
        .def_readonly("iterations", &classifier::SvmModel::iterations)
        .def("decision_function", [](const classifier::SvmModel& model, const Matrix& x) {
            Vector out(x.rows());
            for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = classifier::svm_decide(model, x.row(i).transpose());
            return out;
        });
    m.def(
        "svm_fit",
        [](const Matrix& x, std::vector<int> y, double C, std::optional<double> gamma, bool standardize) {
            if (standardize) return classifier::svm_fit_standardized(x, y, C);
            return classifier::svm_train(x, y, C, gamma ? *gamma : classifier::gamma_rule(x));
        },
        py::arg("x"), py::arg("y"), py::arg("C") = 1.0, py::arg("gamma") = py::none(),
        py::arg("standardize") = true,
        "RBF support vector machine; labels are +1/-1. With standardize, gamma follows the default rule.");
    m.def(
        "roc_auc",
        [](const Vector& scores, std::vector<int> labels) {
            const auto r = classifier::roc_auc(as_vec(scores), labels);
            std::vector<double> fpr, tpr, thr;
            for (const auto& p : r.points) {
                fpr.push_back(p.fpr);
                tpr.push_back(p.tpr);
                thr.push_back(p.threshold);
            }
            return py::make_tuple(fpr, tpr, thr, r.auc);
        },
        py::arg("scores"), py::arg("labels"));

    // timecourse
    m.def(
        "knee_point",
        [](const Vector& xs, const Vector& ys, double S) { return timecourse::knee_point(as_vec(xs), as_vec(ys), S); },
        py::arg("xs"), py::arg("ys"), py::arg("S") = 1.0);
    m.def(
        "fisher_z_compare",
        [](double r1, int n1, double r2, int n2) {
            const auto f = timecourse::fisher_z_compare(r1, n1, r2, n2);
            return py::make_tuple(f.z, f.p);
        },
        py::arg("r1"), py::arg("n1"), py::arg("r2"), py::arg("n2"));
    m.def(
        "pearson", [](const Vector& x, const Vector& y) { return timecourse::pearson(as_vec(x), as_vec(y)); },
        py::arg("x"), py::arg("y"));

    // synthcohort
    m.def(
        "synth_subject",
        [](const std::string& group, std::uint64_t seed, double duration_min, int n_channels, double snr_db,
           std::map<std::string, double> group_effect) {
            synth::SynthSpec spec;
            spec.duration_min = duration_min;
            spec.n_channels = n_channels;
            spec.snr_db = snr_db;
            spec.seed = seed;
            for (const auto& [b, e] : group_effect) spec.group_effect[parse_band(b)] = e;
            const auto s = synth::generate_subject(spec, parse_group(group), mix_seed(seed, 1));
            std::map<std::string, std::vector<double>> envs;
            for (const auto& [b, x] : s.envelopes) envs[std::string(to_string(b))] = x;
            py::dict d;
            d["eeg"] = s.eeg.samples();
            d["channels"] = s.eeg.channel_names();
            d["envelopes"] = envs;
            d["age"] = s.age;
            d["fs"] = s.eeg.fs();
            return d;
        },
        py::arg("group"), py::arg("seed") = 1, py::arg("duration_min") = 1.0, py::arg("n_channels") = 8,
        py::arg("snr_db") = 0.0, py::arg("group_effect") = std::map<std::string, double>{},
        "One synthetic subject: EEG at 128 Hz plus the stimulus band envelopes.");
}
