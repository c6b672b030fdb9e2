#pragma once

// RBF-kernel SVM and nested leave-one-subject-out evaluation on TMIF features.

#include "envtrack/core.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace envtrack::classifier {

/// Per-feature affine map x -> (x - mean) / scale. A default-constructed one is the identity.
struct Standardizer {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;

    /// Population mean/std per column; zero std becomes 1.
    static Standardizer fit(const Eigen::MatrixXd& x);
    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
    Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
    bool identity() const { return mean.size() == 0; }
};

struct SvmOptions {
    double tol = 1e-3;          // stop when the maximal KKT violation drops below this
    long max_iter = 100000;
};

struct SvmModel {
    Eigen::MatrixXd support;    // one support vector per row, in standardized units
    Eigen::VectorXd coef;       // alpha_i * y_i
    double bias = 0.0;
    double gamma = 1.0;
    double C = 1.0;
    Standardizer scaler;        // applied to raw inputs before the kernel
    long iterations = 0;
    double kkt_gap = 0.0;       // maximal violating-pair gap at exit
    bool converged = false;
    std::size_t dim() const { return static_cast<std::size_t>(support.cols()); }
};

/// Soft-margin C-SVM dual solved by SMO with second-order working-set selection.
/// x is used as given (no standardization); y holds -1/+1 labels.
SvmModel svm_train(const Eigen::MatrixXd& x, std::span<const int> y, double C, double gamma,
                   const SvmOptions& opts = {});

/// sum_i coef_i * k(sv_i, x) + bias, with x mapped through the model's scaler first.
double svm_decide(const SvmModel& model, const Eigen::VectorXd& x);

/// Standardize on x, set gamma = 1 / (d * var(standardized x)) and train.
SvmModel svm_fit_standardized(const Eigen::MatrixXd& x, std::span<const int> y, double C,
                              const SvmOptions& opts = {});

/// kernel width rule on already standardized data.
double gamma_rule(const Eigen::MatrixXd& x);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    double threshold = 0.0;  // +inf for the first point
};

struct Roc {
    std::vector<RocPoint> points;
    double auc = 0.0;
};

/// Threshold sweep over unique scores (score >= threshold is positive), trapezoidal AUC.
/// labels are -1/+1.
Roc roc_auc(std::span<const double> scores, std::span<const int> labels);

struct Metrics {
    double accuracy = 0.0;
    double f1 = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
};

/// Predictions are decision > 0.
Metrics compute_metrics(std::span<const double> decisions, std::span<const int> labels);

/// Multivariate TMIF values of each band from the grid start up to prune_ms (inclusive),
/// concatenated in band order, followed by age.
Eigen::VectorXd build_features(const Subject& subject, std::span<const Band> bands, double prune_ms);

struct EvalOptions {
    std::vector<double> c_grid{0.1, 1.0, 10.0, 100.0};
    std::vector<double> prune_grid_ms{100.0, 200.0, 300.0, 400.0, 500.0};
    std::vector<Band> bands{kNarrowBands.begin(), kNarrowBands.end()};
    int inner_folds = 5;
    std::uint64_t seed = 0;
    SvmOptions svm;
    int jobs = 1;
};

struct FoldChoice {
    std::string held_out;
    double C = 0.0;
    double prune_ms = 0.0;
    double inner_accuracy = 0.0;
};

struct EvaluationReport {
    std::vector<std::string> subject_ids;
    std::vector<int> labels;
    std::vector<double> decisions;   // held-out decision value per subject
    std::vector<FoldChoice> folds;   // one per outer fold, subject order
    Metrics metrics;
    Roc roc;
};

/// Outer loop leaves one subject out; an inner stratified k-fold on the remaining subjects
/// picks (C, prune) by pooled accuracy (ties: smaller C, then shorter prune). Scaling and
/// gamma are fit on training data only. Requires at least 3 subjects per class.
EvaluationReport nested_loso_evaluate(const std::vector<Subject>& cohort, const EvalOptions& opts = {});

/// Stratified fold index per subject for the inner CV (deterministic in seed).
std::vector<int> stratified_folds(std::span<const int> labels, int k, std::uint64_t seed);

struct Ablation {
    Band band = Band::delta;
    EvaluationReport report;
    double d_accuracy = 0.0;   // full minus ablated
    double d_f1 = 0.0;
    double d_auc = 0.0;
};

/// Re-runs the nested evaluation without `band`; drops are relative to `full`.
Ablation ablate_band(const std::vector<Subject>& cohort, Band band, const EvaluationReport& full,
                     const EvalOptions& opts = {});

}  // namespace envtrack::classifier
