#include "envtrack/gcmi.hpp"

#include "envtrack/parallel.hpp"
#include "lagged_mi.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/digamma.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <map>
#include <mutex>
#include <sstream>

namespace envtrack::gcmi {

namespace {
constexpr double kRelativePivot = 1e-12;
}

double rank_to_normal(double rank, std::size_t n) {
    static const boost::math::normal standard;
    return boost::math::quantile(standard, rank / (static_cast<double>(n) + 1.0));
}

namespace detail {

namespace {

constexpr std::size_t kTableCacheBytes = std::size_t{128} << 20;

std::mutex table_mutex;
std::map<std::size_t, std::shared_ptr<const std::vector<double>>> table_cache;
std::size_t table_bytes = 0;

}  // namespace

NormalTable::NormalTable(std::size_t m) : m_(m) {
    {
        std::lock_guard lock(table_mutex);
        if (auto it = table_cache.find(m); it != table_cache.end()) {
            values_ = it->second;
            return;
        }
    }
    auto values = std::make_shared<std::vector<double>>(m + 1);
    for (std::size_t r = 1; r <= m; ++r) (*values)[r] = rank_to_normal(static_cast<double>(r), m);
    values_ = values;
    std::lock_guard lock(table_mutex);
    const std::size_t bytes = (m + 1) * sizeof(double);
    if (table_bytes + bytes > kTableCacheBytes) {
        table_cache.clear();
        table_bytes = 0;
    }
    if (bytes <= kTableCacheBytes && table_cache.emplace(m, values_).second) table_bytes += bytes;
}

double NormalTable::at(double rank) const {
    const double whole = std::floor(rank);
    if (whole == rank) return (*values_)[static_cast<std::size_t>(whole)];
    return rank_to_normal(rank, m_);
}

RankedColumn::RankedColumn(std::span<const double> x) : x_(x.begin(), x.end()), order_(x.size()) {
    for (double v : x_)
        if (!std::isfinite(v)) throw InvalidInput("copula transform of non-finite data");
    std::iota(order_.begin(), order_.end(), 0U);
    std::stable_sort(order_.begin(), order_.end(),
                     [this](std::uint32_t a, std::uint32_t b) { return x_[a] < x_[b]; });
    for (std::size_t k = 1; k < order_.size() && !has_ties_; ++k)
        has_ties_ = x_[order_[k]] == x_[order_[k - 1]];
}

void RankedColumn::copula_segment(std::size_t begin, const NormalTable& table, double* out) const {
    const std::size_t m = table.size();
    const std::size_t end = begin + m;
    if (end > x_.size()) throw InvalidInput("copula segment beyond column");
    const std::size_t n = x_.size();
    if (!has_ties_) {
        if (m < 2) throw InvalidInput("copula transform of a constant segment");
        std::size_t placed = 0;
        for (std::uint32_t idx : order_)
            if (idx >= begin && idx < end) out[idx - begin] = table.at_integer(++placed);
        return;
    }
    std::size_t placed = 0;  // in-segment values already ranked
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i + 1;
        const double v = x_[order_[i]];
        while (j < n && x_[order_[j]] == v) ++j;
        if (j == i + 1) {
            const std::size_t idx = order_[i];
            if (idx >= begin && idx < end) out[idx - begin] = table.at_integer(++placed);
        } else {
            std::size_t count = 0;
            for (std::size_t k = i; k < j; ++k)
                if (order_[k] >= begin && order_[k] < end) ++count;
            if (count == m) throw InvalidInput("copula transform of a constant segment");
            if (count > 0) {
                const double rank = static_cast<double>(placed) + (static_cast<double>(count) + 1.0) / 2.0;
                const double q = table.at(rank);
                for (std::size_t k = i; k < j; ++k)
                    if (order_[k] >= begin && order_[k] < end) out[order_[k] - begin] = q;
                placed += count;
            }
        }
        i = j;
    }
}

bool cholesky(const Eigen::MatrixXd& a, Eigen::MatrixXd& lower, double& logdet) {
    const Eigen::Index p = a.rows();
    lower = Eigen::MatrixXd::Zero(p, p);
    logdet = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
        const double d = a(j, j) - lower.row(j).head(j).squaredNorm();
        if (!(a(j, j) > 0.0) || !(d > kRelativePivot * a(j, j))) return false;
        const double ljj = std::sqrt(d);
        lower(j, j) = ljj;
        logdet += 2.0 * std::log(ljj);
        for (Eigen::Index i = j + 1; i < p; ++i)
            lower(i, j) = (a(i, j) - lower.row(i).head(j).dot(lower.row(j).head(j))) / ljj;
    }
    return true;
}

double bias_psi_sum(std::size_t n, std::size_t d) {
    double s = 0.0;
    for (std::size_t i = 1; i <= d; ++i)
        s += boost::math::digamma((static_cast<double>(n) - static_cast<double>(i)) / 2.0) / 2.0;
    return s;
}

PreparedX prepare_x(const std::vector<const RankedColumn*>& cols, std::size_t begin,
                    const NormalTable& table, const MiOptions& opts) {
    const auto m = static_cast<Eigen::Index>(table.size());
    const auto p = static_cast<Eigen::Index>(cols.size());
    PreparedX out;
    out.z.resize(m, p);
    for (Eigen::Index c = 0; c < p; ++c) {
        cols[static_cast<std::size_t>(c)]->copula_segment(begin, table, out.z.col(c).data());
        out.z.col(c).array() -= out.z.col(c).mean();
    }
    Eigen::MatrixXd cov = (out.z.transpose() * out.z) / static_cast<double>(m - 1);
    if (opts.ridge) cov.diagonal().array() += opts.ridge_lambda;
    double logdet = 0.0;
    if (!cholesky(cov, out.chol, logdet))
        throw SingularCovariance("EEG covariance is singular (duplicated or flat channels?)");
    return out;
}

double mi_with_column(const PreparedX& x, std::span<const double> y, const MiOptions& opts) {
    const auto m = x.z.rows();
    if (static_cast<Eigen::Index>(y.size()) != m) throw InvalidInput("column length mismatch");
    const Eigen::Map<const Eigen::VectorXd> yv(y.data(), m);
    const Eigen::VectorXd yc = yv.array() - yv.mean();
    double s2 = yc.squaredNorm() / static_cast<double>(m - 1);
    if (opts.ridge) s2 += opts.ridge_lambda;
    if (!(s2 > 0.0)) throw SingularCovariance("stimulus variance is zero");
    const Eigen::VectorXd cross = (x.z.transpose() * yc) / static_cast<double>(m - 1);
    const Eigen::VectorXd v = x.chol.triangularView<Eigen::Lower>().solve(cross);
    const double resid = s2 - v.squaredNorm();
    if (!(resid > kRelativePivot * s2))
        throw SingularCovariance("joint covariance is singular (stimulus determined by EEG)");
    double nats = 0.5 * (std::log(s2) - std::log(resid));
    if (opts.bias_correct) {
        const auto n = static_cast<std::size_t>(m);
        const auto p = static_cast<std::size_t>(x.z.cols());
        nats += bias_psi_sum(n, p + 1) - bias_psi_sum(n, p) - bias_psi_sum(n, 1);
    }
    return nats / std::numbers::ln2;
}

Overlap overlap_for(int lag, std::size_t n) {
    const auto shift = static_cast<std::size_t>(std::abs(lag));
    if (shift >= n) throw InvalidInput("lag exceeds signal length");
    return lag >= 0 ? Overlap{0, shift, n - shift} : Overlap{shift, 0, n - shift};
}

void check_overlap(const LagGrid& grid, std::size_t n) {
    const auto shift = static_cast<std::size_t>(grid.max_abs_lag());
    const std::size_t need = 10 * grid.size();
    if (shift >= n || n - shift < need) {
        std::ostringstream os;
        os << "overlap of " << (shift >= n ? 0 : n - shift) << " samples is shorter than 10 x "
           << grid.size() << " lags";
        throw InvalidInput(os.str());
    }
}

}  // namespace detail

std::vector<double> copula_transform(std::span<const double> x) {
    if (x.size() < 3) throw InvalidInput("copula transform needs at least 3 samples");
    const detail::RankedColumn col(x);
    const detail::NormalTable table(x.size());
    std::vector<double> out(x.size());
    col.copula_segment(0, table, out.data());
    return out;
}

Eigen::MatrixXd copula_transform(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const auto z = copula_transform(std::span<const double>(x.col(c).data(), static_cast<std::size_t>(x.rows())));
        out.col(c) = Eigen::Map<const Eigen::VectorXd>(z.data(), x.rows());
    }
    return out;
}

double gaussian_mi(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const MiOptions& opts) {
    const Eigen::Index n = x.rows();
    const Eigen::Index p = x.cols();
    const Eigen::Index q = y.cols();
    if (y.rows() != n) throw InvalidInput("X and Y must have the same number of samples");
    if (p < 1 || q < 1) throw InvalidInput("X and Y need at least one column each");
    if (n <= p + q + 2) throw InvalidInput("gaussian_mi needs n > p + q + 2 samples");
    Eigen::MatrixXd joint(n, p + q);
    joint << x, y;
    const Eigen::RowVectorXd mean = joint.colwise().mean();
    joint.rowwise() -= mean;
    Eigen::MatrixXd cov = (joint.transpose() * joint) / static_cast<double>(n - 1);
    if (opts.ridge) cov.diagonal().array() += opts.ridge_lambda;
    Eigen::MatrixXd l;
    double ld_x = 0.0, ld_y = 0.0, ld_xy = 0.0;
    if (!detail::cholesky(cov.topLeftCorner(p, p), l, ld_x))
        throw SingularCovariance("covariance of X is singular");
    if (!detail::cholesky(cov.bottomRightCorner(q, q), l, ld_y))
        throw SingularCovariance("covariance of Y is singular");
    if (!detail::cholesky(cov, l, ld_xy)) throw SingularCovariance("joint covariance is singular");
    double nats = 0.5 * (ld_x + ld_y - ld_xy);
    if (opts.bias_correct) {
        const auto un = static_cast<std::size_t>(n);
        nats += detail::bias_psi_sum(un, static_cast<std::size_t>(p + q)) -
                detail::bias_psi_sum(un, static_cast<std::size_t>(p)) -
                detail::bias_psi_sum(un, static_cast<std::size_t>(q));
    }
    return nats / std::numbers::ln2;
}

double gcmi(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const MiOptions& opts) {
    return gaussian_mi(copula_transform(x), copula_transform(y), opts);
}

namespace {

void check_inputs(const Recording& eeg, std::span<const double> env, const LagGrid& grid) {
    if (eeg.kind() != SignalKind::eeg) throw InvalidInput("TMIF needs an EEG recording");
    if (eeg.fs() != grid.fs()) throw InvalidInput("EEG rate differs from the lag grid rate");
    if (static_cast<std::size_t>(eeg.n_samples()) != env.size())
        throw InvalidInput("EEG and envelope lengths differ");
    detail::check_overlap(grid, env.size());
}

}  // namespace

Tmif tmif_single_channel(const Recording& eeg, std::span<const double> env, const LagGrid& grid,
                         const TmifOptions& opts) {
    check_inputs(eeg, env, grid);
    const detail::RankedColumn env_col(env);
    std::vector<detail::RankedColumn> cols;
    cols.reserve(static_cast<std::size_t>(eeg.n_channels()));
    for (Eigen::Index c = 0; c < eeg.n_channels(); ++c) cols.emplace_back(eeg.channel(c));

    Tmif out{grid, eeg.channel_names(), Eigen::MatrixXd(eeg.n_channels(), static_cast<Eigen::Index>(grid.size()))};
    parallel_for(grid.size(), opts.jobs, [&](std::size_t i) {
        const auto ov = detail::overlap_for(grid.lag(i), env.size());
        const detail::NormalTable table(ov.length);
        std::vector<double> zy(ov.length);
        env_col.copula_segment(ov.env_begin, table, zy.data());
        for (std::size_t c = 0; c < cols.size(); ++c) {
            const auto x = detail::prepare_x({&cols[c]}, ov.eeg_begin, table, opts.mi);
            out.values(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(i)) =
                detail::mi_with_column(x, zy, opts.mi);
        }
    });
    return out;
}

Tmif tmif_multivariate(const Recording& eeg, std::span<const double> env, const LagGrid& grid,
                       const ChannelSelection& selection, const TmifOptions& opts) {
    check_inputs(eeg, env, grid);
    if (selection.empty()) throw InvalidInput("channel selection is empty");
    const detail::RankedColumn env_col(env);
    std::vector<detail::RankedColumn> cols;
    cols.reserve(selection.size());
    for (const auto& name : selection) cols.emplace_back(eeg.channel(eeg.channel_index(name)));
    std::vector<const detail::RankedColumn*> ptrs;
    for (const auto& c : cols) ptrs.push_back(&c);

    Tmif out{grid, {"multivariate"}, Eigen::MatrixXd(1, static_cast<Eigen::Index>(grid.size()))};
    parallel_for(grid.size(), opts.jobs, [&](std::size_t i) {
        const auto ov = detail::overlap_for(grid.lag(i), env.size());
        const detail::NormalTable table(ov.length);
        std::vector<double> zy(ov.length);
        env_col.copula_segment(ov.env_begin, table, zy.data());
        const auto x = detail::prepare_x(ptrs, ov.eeg_begin, table, opts.mi);
        out.values(0, static_cast<Eigen::Index>(i)) = detail::mi_with_column(x, zy, opts.mi);
    });
    return out;
}

double mean_mi(const Tmif& tmif, double t0_ms, double t1_ms, Eigen::Index row) {
    if (row < 0 || row >= tmif.values.rows()) throw InvalidInput("TMIF row out of range");
    const auto [begin, end] = tmif.grid.window(t0_ms, t1_ms);
    return tmif.values.row(row)
        .segment(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin))
        .mean();
}

}  // namespace envtrack::gcmi
