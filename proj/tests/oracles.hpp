#pragma once

// Straightforward reference implementations used to check the library. They favour
// obviousness over speed and share no code with src/.

#include <Eigen/Dense>
#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

namespace oracle {

// Standard normal quantile by bisection on the CDF.
inline double normal_quantile(double p) {
    double lo = -40.0, hi = 40.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// Average ranks (1-based), then the normal quantile of rank / (n + 1).
inline std::vector<double> copula(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        double less = 0, equal = 0;
        for (double v : x) {
            less += v < x[i];
            equal += v == x[i];
        }
        out[i] = normal_quantile((less + (equal + 1.0) / 2.0) / (static_cast<double>(n) + 1.0));
    }
    return out;
}

inline double log_det(const Eigen::MatrixXd& a) {
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    double s = 0.0;
    const Eigen::MatrixXd u = lu.matrixLU().triangularView<Eigen::Upper>();
    for (Eigen::Index i = 0; i < a.rows(); ++i) s += std::log(std::abs(u(i, i)));
    return s;
}

// MI in bits of jointly Gaussian columns, unbiased sample covariance.
inline double gaussian_mi(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    Eigen::MatrixXd j(x.rows(), x.cols() + y.cols());
    j << x, y;
    const Eigen::MatrixXd c = j.rowwise() - j.colwise().mean();
    const Eigen::MatrixXd cov = c.transpose() * c / static_cast<double>(x.rows() - 1);
    const auto p = x.cols(), q = y.cols();
    return 0.5 * (log_det(cov.topLeftCorner(p, p)) + log_det(cov.bottomRightCorner(q, q)) - log_det(cov)) /
           std::log(2.0);
}

inline Eigen::MatrixXd copula_columns(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const std::vector<double> col(x.col(c).data(), x.col(c).data() + x.rows());
        const auto z = copula(col);
        for (Eigen::Index r = 0; r < x.rows(); ++r) out(r, c) = z[static_cast<std::size_t>(r)];
    }
    return out;
}

// MI between env(t) and eeg(t + lag), both copula-transformed over the overlap only.
inline double lagged_gcmi(const Eigen::MatrixXd& eeg, const std::vector<double>& env, int lag) {
    const auto n = static_cast<Eigen::Index>(env.size());
    const Eigen::Index m = n - std::abs(lag);
    const Eigen::Index e0 = lag >= 0 ? 0 : -lag;
    const Eigen::Index x0 = lag >= 0 ? lag : 0;
    Eigen::MatrixXd y(m, 1);
    for (Eigen::Index t = 0; t < m; ++t) y(t, 0) = env[static_cast<std::size_t>(e0 + t)];
    return gaussian_mi(copula_columns(eeg.middleRows(x0, m)), copula_columns(y));
}

// Welch t with a and b as plain vectors.
inline double welch_t(const std::vector<double>& a, const std::vector<double>& b) {
    auto mv = [](const std::vector<double>& v) {
        const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return std::pair{m, s / static_cast<double>(v.size() - 1)};
    };
    const auto [ma, va] = mv(a);
    const auto [mb, vb] = mv(b);
    return (ma - mb) / std::sqrt(va / static_cast<double>(a.size()) + vb / static_cast<double>(b.size()));
}

// Kneedle, transcribed from the reference package's default (concave, increasing,
// online=false) behaviour.
inline std::optional<double> kneedle(const std::vector<double>& x, const std::vector<double>& y, double S = 1.0) {
    const std::size_t n = x.size();
    const double xmin = *std::min_element(x.begin(), x.end()), xmax = *std::max_element(x.begin(), x.end());
    const double ymin = *std::min_element(y.begin(), y.end()), ymax = *std::max_element(y.begin(), y.end());
    if (ymax == ymin) return std::nullopt;
    std::vector<double> xn(n), d(n);
    for (std::size_t i = 0; i < n; ++i) {
        xn[i] = (x[i] - xmin) / (xmax - xmin);
        d[i] = (y[i] - ymin) / (ymax - ymin) - xn[i];
    }
    std::vector<std::size_t> maxima, minima;
    for (std::size_t i = 0; i < n; ++i) {
        const double l = d[i == 0 ? 0 : i - 1], r = d[i + 1 == n ? n - 1 : i + 1];
        if (d[i] >= l && d[i] >= r) maxima.push_back(i);
        if (d[i] <= l && d[i] <= r) minima.push_back(i);
    }
    if (maxima.empty()) return std::nullopt;
    double mean_dx = 0.0;
    for (std::size_t i = 1; i < n; ++i) mean_dx += xn[i] - xn[i - 1];
    mean_dx /= static_cast<double>(n - 1);
    double threshold = 0.0;
    std::size_t threshold_index = 0;
    bool active = false;
    for (std::size_t i = maxima.front(); i + 1 < n; ++i) {
        if (std::find(maxima.begin(), maxima.end(), i) != maxima.end()) {
            threshold = d[i] - S * std::abs(mean_dx);
            threshold_index = i;
            active = true;
        }
        if (std::find(minima.begin(), minima.end(), i) != minima.end()) {
            threshold = 0.0;
            active = false;
        }
        if (active && d[i + 1] < threshold) return x[threshold_index];
    }
    return std::nullopt;
}

// Two-sided Student p via the regularized incomplete beta function.
inline double student_p_two(double t, double df) { return boost::math::ibeta(df / 2.0, 0.5, df / (df + t * t)); }

inline double welch_df(const std::vector<double>& a, const std::vector<double>& b) {
    auto v = [](const std::vector<double>& x) {
        const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
        double s = 0;
        for (double e : x) s += (e - m) * (e - m);
        return s / static_cast<double>(x.size() - 1) / static_cast<double>(x.size());
    };
    const double va = v(a), vb = v(b);
    return (va + vb) * (va + vb) /
           (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
}

// Largest |mass| over runs of same-sign two-sided supra-threshold lags.
inline double max_abs_mass(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                    double alpha, std::vector<double>* masses = nullptr) {
    const std::size_t L = a.front().size();
    double best = 0.0, run = 0.0;
    int run_sign = 0;
    auto flush = [&] {
        if (run_sign != 0) {
            best = std::max(best, std::abs(run));
            if (masses) masses->push_back(run);
        }
        run = 0.0;
        run_sign = 0;
    };
    for (std::size_t l = 0; l < L; ++l) {
        std::vector<double> xa, xb;
        for (const auto& s : a) xa.push_back(s[l]);
        for (const auto& s : b) xb.push_back(s[l]);
        const double t = oracle::welch_t(xa, xb);
        const int sign = student_p_two(t, welch_df(xa, xb)) < alpha ? (t > 0 ? 1 : -1) : 0;
        if (sign != run_sign) flush();
        if (sign != 0) {
            run_sign = sign;
            run += t;
        }
    }
    flush();
    return best;
}

// Exhaustive two-sided cluster p-values by enumerating every assignment of group a.
inline std::vector<double> brute_force_p(const std::vector<std::vector<double>>& a,
                                  const std::vector<std::vector<double>>& b, double alpha) {
    std::vector<std::vector<double>> pooled(a);
    pooled.insert(pooled.end(), b.begin(), b.end());
    std::vector<double> obs;
    max_abs_mass(a, b, alpha, &obs);
    std::sort(obs.begin(), obs.end(), [](double x, double y) { return std::abs(x) > std::abs(y); });
    const std::size_t N = pooled.size();
    std::vector<double> null;
    for (std::uint32_t mask = 0; mask < (1u << N); ++mask) {
        if (static_cast<std::size_t>(__builtin_popcount(mask)) != a.size()) continue;
        std::vector<std::vector<double>> ga, gb;
        for (std::size_t i = 0; i < N; ++i) ((mask >> i) & 1u ? ga : gb).push_back(pooled[i]);
        null.push_back(max_abs_mass(ga, gb, alpha));
    }
    std::vector<double> p;
    for (double m : obs) {
        const double bar = std::abs(m) * (1 - 1e-10);
        p.push_back(static_cast<double>(std::count_if(null.begin(), null.end(), [&](double v) { return v >= bar; })) /
                    static_cast<double>(null.size()));
    }
    return p;
}

// Fraction of the (mean-removed) signal energy at DFT bins outside [lo, hi] Hz, by a direct DFT.
inline double out_of_band_fraction(const std::vector<double>& x, double fs, double lo, double hi) {
    const std::size_t n = x.size();
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    double inside = 0.0, total = 0.0;
    const double pi = std::acos(-1.0);
    for (std::size_t k = 1; k <= n / 2; ++k) {
        double re = 0.0, im = 0.0;
        const double w = 2.0 * pi * static_cast<double>(k) / static_cast<double>(n);
        for (std::size_t t = 0; t < n; ++t) {
            const double v = x[t] - mean;
            re += v * std::cos(w * static_cast<double>(t));
            im -= v * std::sin(w * static_cast<double>(t));
        }
        const double f = static_cast<double>(k) * fs / static_cast<double>(n);
        const double e = re * re + im * im;
        total += e;
        if (f >= lo && f <= hi) inside += e;
    }
    return 1.0 - inside / total;
}

}  // namespace oracle
