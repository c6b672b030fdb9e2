#include "envtrack/classifier.hpp"

#include "envtrack/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace envtrack::classifier {

Standardizer Standardizer::fit(const Eigen::MatrixXd& x) {
    if (x.rows() == 0) throw InvalidInput("cannot standardize an empty matrix");
    Standardizer s;
    s.mean = x.colwise().mean().transpose();
    s.scale.resize(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double sd = std::sqrt((x.col(j).array() - s.mean(j)).square().mean());
        s.scale(j) = sd > 0.0 ? sd : 1.0;
    }
    return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& x) const {
    if (identity()) return x;
    if (x.cols() != mean.size()) throw InvalidInput("feature dimension mismatch");
    return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

Eigen::VectorXd Standardizer::apply(const Eigen::VectorXd& x) const {
    if (identity()) return x;
    if (x.size() != mean.size()) throw InvalidInput("feature dimension mismatch");
    return ((x - mean).array() / scale.array()).matrix();
}

double gamma_rule(const Eigen::MatrixXd& x) {
    const double d = static_cast<double>(x.cols());
    const double mean = x.mean();
    const double var = (x.array() - mean).square().mean();
    return var > 0.0 ? 1.0 / (d * var) : 1.0 / d;
}

// ---- SMO ----

namespace {

Eigen::MatrixXd rbf_kernel(const Eigen::MatrixXd& x, double gamma) {
    const Eigen::Index n = x.rows();
    const Eigen::VectorXd sq = x.rowwise().squaredNorm();
    Eigen::MatrixXd k = x * x.transpose();
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            const double d2 = std::max(0.0, sq(i) + sq(j) - 2.0 * k(i, j));
            k(i, j) = std::exp(-gamma * d2);
        }
    for (Eigen::Index i = 0; i < n; ++i) k(i, i) = 1.0;
    return k;
}

constexpr double kTau = 1e-12;

}  // namespace

SvmModel svm_train(const Eigen::MatrixXd& x, std::span<const int> y, double C, double gamma,
                   const SvmOptions& opts) {
    const auto n = static_cast<Eigen::Index>(y.size());
    if (x.rows() != n) throw InvalidInput("feature rows and labels differ in length");
    if (!(C > 0.0)) throw InvalidInput("C must be positive");
    if (!(gamma > 0.0)) throw InvalidInput("gamma must be positive");
    if (!x.allFinite()) throw InvalidInput("non-finite features");
    bool pos = false, neg = false;
    for (int v : y) {
        if (v == +1) pos = true;
        else if (v == -1) neg = true;
        else throw InvalidInput("labels must be -1 or +1");
    }
    if (!pos || !neg) throw InvalidInput("SVM training needs both classes");

    const Eigen::MatrixXd K = rbf_kernel(x, gamma);
    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd G = Eigen::VectorXd::Constant(n, -1.0);  // gradient of the dual objective
    auto yy = [&](Eigen::Index i) { return static_cast<double>(y[static_cast<std::size_t>(i)]); };
    auto in_up = [&](Eigen::Index t) { return yy(t) > 0 ? alpha(t) < C : alpha(t) > 0.0; };
    auto in_low = [&](Eigen::Index t) { return yy(t) > 0 ? alpha(t) > 0.0 : alpha(t) < C; };

    SvmModel model;
    model.C = C;
    model.gamma = gamma;
    long iter = 0;
    double gap = std::numeric_limits<double>::infinity();
    for (; iter < opts.max_iter; ++iter) {
        Eigen::Index i = -1;
        double gmax = -std::numeric_limits<double>::infinity();
        for (Eigen::Index t = 0; t < n; ++t)
            if (in_up(t) && -yy(t) * G(t) >= gmax) {
                if (-yy(t) * G(t) > gmax || i < 0) i = t;
                gmax = -yy(t) * G(t);
            }
        Eigen::Index j = -1;
        double gmin = std::numeric_limits<double>::infinity();
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index t = 0; t < n; ++t) {
            if (!in_low(t)) continue;
            const double v = -yy(t) * G(t);
            gmin = std::min(gmin, v);
            const double b = gmax - v;
            if (i >= 0 && b > 0.0) {
                double a = K(i, i) + K(t, t) - 2.0 * K(i, t);
                if (a <= 0.0) a = kTau;
                const double obj = -(b * b) / a;
                if (obj <= best) {
                    best = obj;
                    j = t;
                }
            }
        }
        gap = gmax - gmin;
        if (i < 0 || j < 0 || gap < opts.tol) break;

        const double ai = alpha(i), aj = alpha(j);
        double quad = K(i, i) + K(j, j) - 2.0 * K(i, j);
        if (quad <= 0.0) quad = kTau;
        if (yy(i) != yy(j)) {
            const double delta = (-G(i) - G(j)) / quad;
            const double diff = ai - aj;
            alpha(i) += delta;
            alpha(j) += delta;
            if (diff > 0.0) {
                if (alpha(j) < 0.0) { alpha(j) = 0.0; alpha(i) = diff; }
            } else if (alpha(i) < 0.0) {
                alpha(i) = 0.0; alpha(j) = -diff;
            }
            if (diff > 0.0) {
                if (alpha(i) > C) { alpha(i) = C; alpha(j) = C - diff; }
            } else if (alpha(j) > C) {
                alpha(j) = C; alpha(i) = C + diff;
            }
        } else {
            const double delta = (G(i) - G(j)) / quad;
            const double sum = ai + aj;
            alpha(i) -= delta;
            alpha(j) += delta;
            if (sum > C) {
                if (alpha(i) > C) { alpha(i) = C; alpha(j) = sum - C; }
            } else if (alpha(j) < 0.0) {
                alpha(j) = 0.0; alpha(i) = sum;
            }
            if (sum > C) {
                if (alpha(j) > C) { alpha(j) = C; alpha(i) = sum - C; }
            } else if (alpha(i) < 0.0) {
                alpha(i) = 0.0; alpha(j) = sum;
            }
        }
        const double di = alpha(i) - ai, dj = alpha(j) - aj;
        for (Eigen::Index t = 0; t < n; ++t)
            G(t) += yy(t) * (yy(i) * K(t, i) * di + yy(j) * K(t, j) * dj);
    }
    model.iterations = iter;
    model.kkt_gap = gap;
    model.converged = gap < opts.tol;

    // rho: average y*G over free vectors, else the middle of the feasible interval.
    double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum_free = 0.0;
    int n_free = 0;
    for (Eigen::Index t = 0; t < n; ++t) {
        const double yg = yy(t) * G(t);
        if (alpha(t) >= C) {
            if (yy(t) < 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
        } else if (alpha(t) <= 0.0) {
            if (yy(t) > 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
        } else {
            ++n_free;
            sum_free += yg;
        }
    }
    const double rho = n_free > 0 ? sum_free / n_free : (ub + lb) / 2.0;
    model.bias = -rho;

    std::vector<Eigen::Index> sv;
    for (Eigen::Index t = 0; t < n; ++t)
        if (alpha(t) > 0.0) sv.push_back(t);
    model.support.resize(static_cast<Eigen::Index>(sv.size()), x.cols());
    model.coef.resize(static_cast<Eigen::Index>(sv.size()));
    for (std::size_t s = 0; s < sv.size(); ++s) {
        model.support.row(static_cast<Eigen::Index>(s)) = x.row(sv[s]);
        model.coef(static_cast<Eigen::Index>(s)) = alpha(sv[s]) * yy(sv[s]);
    }
    return model;
}

double svm_decide(const SvmModel& model, const Eigen::VectorXd& x) {
    const Eigen::VectorXd z = model.scaler.apply(x);
    if (z.size() != model.support.cols()) throw InvalidInput("feature dimension mismatch");
    double f = model.bias;
    for (Eigen::Index s = 0; s < model.support.rows(); ++s)
        f += model.coef(s) * std::exp(-model.gamma * (model.support.row(s).transpose() - z).squaredNorm());
    return f;
}

SvmModel svm_fit_standardized(const Eigen::MatrixXd& x, std::span<const int> y, double C,
                              const SvmOptions& opts) {
    auto scaler = Standardizer::fit(x);
    const Eigen::MatrixXd z = scaler.apply(x);
    SvmModel m = svm_train(z, y, C, gamma_rule(z), opts);
    m.scaler = std::move(scaler);
    return m;
}

// ---- metrics ----

Roc roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw InvalidInput("scores and labels differ in length");
    double n_pos = 0, n_neg = 0;
    for (int l : labels) (l > 0 ? n_pos : n_neg) += 1.0;
    if (n_pos == 0 || n_neg == 0) throw InvalidInput("ROC needs both classes");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });

    Roc roc;
    roc.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double thr = scores[order[i]];
        while (i < order.size() && scores[order[i]] == thr) {
            (labels[order[i]] > 0 ? tp : fp) += 1.0;
            ++i;
        }
        const RocPoint& prev = roc.points.back();
        const RocPoint next{fp / n_neg, tp / n_pos, thr};
        roc.auc += (next.fpr - prev.fpr) * (next.tpr + prev.tpr) / 2.0;
        roc.points.push_back(next);
    }
    return roc;
}

Metrics compute_metrics(std::span<const double> decisions, std::span<const int> labels) {
    if (decisions.size() != labels.size() || decisions.empty())
        throw InvalidInput("decisions and labels must be non-empty and equally long");
    double tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < decisions.size(); ++i) {
        const bool predicted = decisions[i] > 0.0;
        const bool actual = labels[i] > 0;
        if (predicted && actual) ++tp;
        else if (predicted) ++fp;
        else if (actual) ++fn;
        else ++tn;
    }
    Metrics m;
    m.accuracy = (tp + tn) / static_cast<double>(decisions.size());
    m.sensitivity = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    m.specificity = tn + fp > 0 ? tn / (tn + fp) : 0.0;
    m.f1 = tp > 0 ? 2.0 * tp / (2.0 * tp + fp + fn) : 0.0;
    return m;
}

// ---- features and nested CV ----

Eigen::VectorXd build_features(const Subject& subject, std::span<const Band> bands, double prune_ms) {
    if (!(subject.age > 0.0)) throw InvalidInput("subject '" + subject.id + "' has no valid age");
    std::vector<double> f;
    for (Band b : bands) {
        auto it = subject.tmifs.find(b);
        if (it == subject.tmifs.end())
            throw InvalidInput("subject '" + subject.id + "' lacks a " + std::string(to_string(b)) + " TMIF");
        const Tmif& t = it->second;
        const auto [begin, end] = t.grid.window(t.grid.time_ms(0), prune_ms);
        const Eigen::VectorXd c = t.curve();
        for (std::size_t i = begin; i < end; ++i) f.push_back(c(static_cast<Eigen::Index>(i)));
    }
    f.push_back(subject.age);
    Eigen::VectorXd v = Eigen::Map<Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size()));
    if (!v.allFinite()) throw InvalidInput("subject '" + subject.id + "' has non-finite features");
    return v;
}

std::vector<int> stratified_folds(std::span<const int> labels, int k, std::uint64_t seed) {
    if (k < 2) throw InvalidInput("need at least 2 folds");
    std::vector<int> fold(labels.size(), 0);
    std::mt19937_64 rng(seed);
    int next = 0;
    for (int cls : {+1, -1}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == cls) idx.push_back(i);
        for (std::size_t i = idx.size(); i > 1; --i) {
            std::uniform_int_distribution<std::size_t> pick(0, i - 1);
            std::swap(idx[i - 1], idx[pick(rng)]);
        }
        for (std::size_t i : idx) {
            fold[i] = next;
            next = (next + 1) % k;
        }
    }
    return fold;
}

namespace {

struct FeatureSet {
    double prune_ms;
    Eigen::MatrixXd x;  // subjects x features
};

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& x, const std::vector<std::size_t>& rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(rows[r]));
    return out;
}

std::vector<int> labels_of(std::span<const int> y, const std::vector<std::size_t>& rows) {
    std::vector<int> out;
    for (std::size_t r : rows) out.push_back(y[r]);
    return out;
}

// Pooled inner-CV accuracy on the training subjects only.
double inner_accuracy(const Eigen::MatrixXd& x, std::span<const int> y, const std::vector<int>& folds,
                      int k, double C, const SvmOptions& svm) {
    std::size_t correct = 0;
    for (int f = 0; f < k; ++f) {
        std::vector<std::size_t> train, test;
        for (std::size_t i = 0; i < y.size(); ++i) (folds[i] == f ? test : train).push_back(i);
        if (test.empty()) continue;
        const auto ytr = labels_of(y, train);
        if (std::count(ytr.begin(), ytr.end(), +1) == 0 || std::count(ytr.begin(), ytr.end(), -1) == 0)
            throw InvalidInput("a class is absent from an inner training fold");
        const SvmModel m = svm_fit_standardized(rows_of(x, train), ytr, C, svm);
        for (std::size_t i : test) {
            const double d = svm_decide(m, x.row(static_cast<Eigen::Index>(i)).transpose());
            if ((d > 0.0) == (y[i] > 0)) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(y.size());
}

}  // namespace

EvaluationReport nested_loso_evaluate(const std::vector<Subject>& cohort, const EvalOptions& opts) {
    if (opts.c_grid.empty() || opts.prune_grid_ms.empty()) throw InvalidInput("empty hyperparameter grid");
    if (opts.bands.empty()) throw InvalidInput("no feature bands");
    std::vector<int> y;
    for (const auto& s : cohort) y.push_back(class_label(s.group));
    if (std::count(y.begin(), y.end(), +1) < 3 || std::count(y.begin(), y.end(), -1) < 3)
        throw InvalidInput("nested LOSO needs at least 3 subjects per class");

    std::vector<FeatureSet> sets;
    for (double prune : opts.prune_grid_ms) {
        FeatureSet fs{prune, {}};
        for (std::size_t i = 0; i < cohort.size(); ++i) {
            const Eigen::VectorXd f = build_features(cohort[i], opts.bands, prune);
            if (i == 0) fs.x.resize(static_cast<Eigen::Index>(cohort.size()), f.size());
            if (f.size() != fs.x.cols()) throw InvalidInput("subjects have TMIFs on different lag grids");
            fs.x.row(static_cast<Eigen::Index>(i)) = f.transpose();
        }
        sets.push_back(std::move(fs));
    }

    EvaluationReport rep;
    for (const auto& s : cohort) rep.subject_ids.push_back(s.id);
    rep.labels = y;
    rep.decisions.assign(cohort.size(), 0.0);
    rep.folds.assign(cohort.size(), {});

    parallel_for(cohort.size(), opts.jobs, [&](std::size_t out) {
        std::vector<std::size_t> train;
        for (std::size_t i = 0; i < cohort.size(); ++i)
            if (i != out) train.push_back(i);
        const auto ytr = labels_of(y, train);
        const int k = std::min<int>(opts.inner_folds, static_cast<int>(train.size()));
        const auto folds = stratified_folds(ytr, k, mix_seed(opts.seed, out));

        double best_acc = -1.0, best_c = 0.0;
        const FeatureSet* best_set = nullptr;
        for (double C : opts.c_grid)
            for (const auto& fs : sets) {
                const double acc = inner_accuracy(rows_of(fs.x, train), ytr, folds, k, C, opts.svm);
                if (acc > best_acc) {
                    best_acc = acc;
                    best_c = C;
                    best_set = &fs;
                }
            }
        const SvmModel m = svm_fit_standardized(rows_of(best_set->x, train), ytr, best_c, opts.svm);
        rep.decisions[out] = svm_decide(m, best_set->x.row(static_cast<Eigen::Index>(out)).transpose());
        rep.folds[out] = {cohort[out].id, best_c, best_set->prune_ms, best_acc};
    });

    rep.metrics = compute_metrics(rep.decisions, rep.labels);
    rep.roc = roc_auc(rep.decisions, rep.labels);
    return rep;
}

Ablation ablate_band(const std::vector<Subject>& cohort, Band band, const EvaluationReport& full,
                     const EvalOptions& opts) {
    EvalOptions reduced = opts;
    std::erase(reduced.bands, band);
    if (reduced.bands.size() == opts.bands.size())
        throw InvalidInput("band " + std::string(to_string(band)) + " is not among the feature bands");
    Ablation a;
    a.band = band;
    a.report = nested_loso_evaluate(cohort, reduced);
    a.d_accuracy = full.metrics.accuracy - a.report.metrics.accuracy;
    a.d_f1 = full.metrics.f1 - a.report.metrics.f1;
    a.d_auc = full.roc.auc - a.report.roc.auc;
    return a;
}

}  // namespace envtrack::classifier
