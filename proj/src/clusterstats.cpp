#include "envtrack/clusterstats.hpp"

#include "envtrack/parallel.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace envtrack::clusterstats {

// ---- adjacency ----

Adjacency::Adjacency(std::vector<std::string> channels)
    : channels_(std::move(channels)), neighbors_(channels_.size()) {}

void Adjacency::connect(std::size_t a, std::size_t b) {
    if (a >= channels_.size() || b >= channels_.size()) throw InvalidInput("adjacency index out of range");
    if (a == b || connected(a, b)) return;
    neighbors_[a].push_back(b);
    neighbors_[b].push_back(a);
    std::sort(neighbors_[a].begin(), neighbors_[a].end());
    std::sort(neighbors_[b].begin(), neighbors_[b].end());
}

bool Adjacency::connected(std::size_t a, std::size_t b) const {
    const auto& n = neighbors_.at(a);
    return std::binary_search(n.begin(), n.end(), b);
}

std::set<std::pair<std::size_t, std::size_t>> Adjacency::edges() const {
    std::set<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < neighbors_.size(); ++i)
        for (std::size_t j : neighbors_[i])
            if (i < j) out.emplace(i, j);
    return out;
}

std::size_t Adjacency::index_of(const std::string& channel) const {
    auto it = std::find(channels_.begin(), channels_.end(), channel);
    if (it == channels_.end()) throw InvalidInput("adjacency is missing channel '" + channel + "'");
    return static_cast<std::size_t>(it - channels_.begin());
}

Adjacency Adjacency::restricted(const std::vector<std::string>& channels) const {
    Adjacency out(channels);
    std::vector<std::size_t> idx;
    for (const auto& c : channels) idx.push_back(index_of(c));
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = i + 1; j < idx.size(); ++j)
            if (connected(idx[i], idx[j])) out.connect(i, j);
    return out;
}

Adjacency Adjacency::full(std::vector<std::string> channels) {
    Adjacency out(std::move(channels));
    for (std::size_t i = 0; i < out.channels_.size(); ++i)
        for (std::size_t j = i + 1; j < out.channels_.size(); ++j) out.connect(i, j);
    return out;
}

namespace {

std::vector<std::string> names_of(const Layout& layout) {
    std::vector<std::string> names;
    for (const auto& p : layout) names.push_back(p.name);
    return names;
}

void check_distinct(const Layout& layout) {
    for (std::size_t i = 0; i < layout.size(); ++i)
        for (std::size_t j = i + 1; j < layout.size(); ++j)
            if (layout[i].x == layout[j].x && layout[i].y == layout[j].y)
                throw InvalidInput("duplicate layout position for '" + layout[i].name + "' and '" +
                                   layout[j].name + "'");
}

double dist(const ChannelPosition& a, const ChannelPosition& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

Adjacency build_adjacency(const Layout& layout, int k) {
    if (k < 1) throw InvalidInput("k must be positive");
    check_distinct(layout);
    Adjacency out(names_of(layout));
    const std::size_t n = layout.size();
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> others;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) others.push_back(j);
        std::stable_sort(others.begin(), others.end(), [&](std::size_t a, std::size_t b) {
            return dist(layout[i], layout[a]) < dist(layout[i], layout[b]);
        });
        const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), others.size());
        for (std::size_t t = 0; t < take; ++t) out.connect(i, others[t]);
    }
    return out;
}

Adjacency build_adjacency_radius(const Layout& layout, double radius) {
    if (!(radius > 0.0)) throw InvalidInput("radius must be positive");
    check_distinct(layout);
    Adjacency out(names_of(layout));
    for (std::size_t i = 0; i < layout.size(); ++i)
        for (std::size_t j = i + 1; j < layout.size(); ++j)
            if (dist(layout[i], layout[j]) <= radius + 1e-9) out.connect(i, j);
    return out;
}

Tail parse_tail(std::string_view text) {
    if (text == "two") return Tail::two;
    if (text == "positive") return Tail::positive;
    if (text == "negative") return Tail::negative;
    throw InvalidInput("unknown tail '" + std::string(text) + "' (two|positive|negative)");
}

std::string_view to_string(Tail tail) {
    switch (tail) {
    case Tail::two: return "two";
    case Tail::positive: return "positive";
    case Tail::negative: return "negative";
    }
    return "two";
}

// ---- statistics ----

namespace {

struct Moments {
    double mean;
    double var_over_n;  // sample variance / n
};

template <typename Get>
Moments moments(std::size_t n, Get get) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += get(i);
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = get(i) - mean;
        ss += d * d;
    }
    const double var = ss / static_cast<double>(n - 1);
    return {mean, var / static_cast<double>(n)};
}

WelchT combine(const Moments& a, std::size_t na, const Moments& b, std::size_t nb) {
    const double se2 = a.var_over_n + b.var_over_n;
    const double diff = a.mean - b.mean;
    WelchT w;
    if (se2 == 0.0) {
        w.t = diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
        w.df = static_cast<double>(na + nb - 2);
        return w;
    }
    w.t = diff / std::sqrt(se2);
    const double da = a.var_over_n * a.var_over_n / static_cast<double>(na - 1);
    const double db = b.var_over_n * b.var_over_n / static_cast<double>(nb - 1);
    w.df = se2 * se2 / (da + db);
    return w;
}

}  // namespace

WelchT welch_t(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw InvalidInput("Welch t needs at least 2 values per group");
    return combine(moments(a.size(), [&](std::size_t i) { return a[i]; }), a.size(),
                   moments(b.size(), [&](std::size_t i) { return b[i]; }), b.size());
}

double welch_p(const WelchT& w, Tail tail) {
    if (std::isinf(w.t)) {
        if (tail == Tail::two) return 0.0;
        return ((w.t > 0) == (tail == Tail::positive)) ? 0.0 : 1.0;
    }
    const boost::math::students_t dist(w.df);
    switch (tail) {
    case Tail::two: return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(w.t)));
    case Tail::positive: return boost::math::cdf(boost::math::complement(dist, w.t));
    case Tail::negative: return boost::math::cdf(dist, w.t);
    }
    return 1.0;
}

std::uint64_t count_relabelings(std::size_t n_a, std::size_t n_b) {
    const std::size_t n = n_a + n_b;
    const std::size_t k = std::min(n_a, n_b);
    constexpr std::uint64_t cap = std::uint64_t{1} << 63;
    std::uint64_t c = 1;
    for (std::size_t i = 1; i <= k; ++i) {
        // c * (n - k + i) / i stays integral at every step.
        const std::uint64_t num = n - k + i;
        if (c > cap / num) return cap;
        c = c * num / i;
    }
    return c;
}

// ---- cluster engine ----

namespace {

// Pooled data: subject-major, S samples each.
struct Problem {
    std::size_t n_a = 0;
    std::size_t n_b = 0;
    std::size_t n_channels = 0;
    std::size_t n_lags = 0;
    std::vector<std::vector<double>> data;  // pooled subjects (a first), each S values
    const Adjacency* adjacency = nullptr;   // null: channels are never adjacent
    double alpha = 0.05;
    Tail tail = Tail::two;
    double crit_lo = 0.0;  // critical |t| at the largest possible Welch df
    double crit_hi = 0.0;  // critical |t| at the smallest possible Welch df

    std::size_t samples() const { return n_channels * n_lags; }
};

double critical_t(double df, double alpha, Tail tail) {
    const boost::math::students_t dist(df);
    const double q = tail == Tail::two ? 1.0 - alpha / 2.0 : 1.0 - alpha;
    return boost::math::quantile(dist, q);
}

bool supra_threshold(const Problem& pb, const WelchT& w) {
    if (pb.tail == Tail::positive && !(w.t > 0.0)) return false;
    if (pb.tail == Tail::negative && !(w.t < 0.0)) return false;
    const double a = std::abs(w.t);
    if (std::isinf(a)) return true;
    if (a <= pb.crit_lo * (1.0 - 1e-12)) return false;
    if (a > pb.crit_hi * (1.0 + 1e-12)) return true;
    return welch_p(w, pb.tail) < pb.alpha;
}

// t per sample for a partition given as the member lists of each group (canonical order).
std::vector<WelchT> sample_stats(const Problem& pb, const std::vector<std::size_t>& group_a,
                                 const std::vector<std::size_t>& group_b) {
    std::vector<WelchT> out(pb.samples());
    for (std::size_t s = 0; s < out.size(); ++s) {
        const auto ma = moments(group_a.size(), [&](std::size_t i) { return pb.data[group_a[i]][s]; });
        const auto mb = moments(group_b.size(), [&](std::size_t i) { return pb.data[group_b[i]][s]; });
        out[s] = combine(ma, group_a.size(), mb, group_b.size());
    }
    return out;
}

std::vector<Cluster> find_clusters(const Problem& pb, const std::vector<WelchT>& stats) {
    const std::size_t L = pb.n_lags;
    std::vector<int> sign(stats.size(), 0);
    for (std::size_t s = 0; s < stats.size(); ++s)
        if (supra_threshold(pb, stats[s])) sign[s] = stats[s].t > 0.0 ? +1 : -1;

    std::vector<char> seen(stats.size(), 0);
    std::vector<Cluster> clusters;
    std::vector<std::size_t> stack;
    for (std::size_t s0 = 0; s0 < stats.size(); ++s0) {
        if (sign[s0] == 0 || seen[s0]) continue;
        Cluster cl;
        cl.sign = sign[s0];
        std::vector<std::size_t> members;
        stack.assign(1, s0);
        seen[s0] = 1;
        while (!stack.empty()) {
            const std::size_t s = stack.back();
            stack.pop_back();
            members.push_back(s);
            const std::size_t c = s / L;
            const std::size_t l = s % L;
            auto visit = [&](std::size_t nb) {
                if (!seen[nb] && sign[nb] == cl.sign) {
                    seen[nb] = 1;
                    stack.push_back(nb);
                }
            };
            if (l > 0) visit(s - 1);
            if (l + 1 < L) visit(s + 1);
            if (pb.adjacency)
                for (std::size_t c2 : pb.adjacency->neighbors(c)) visit(c2 * L + l);
        }
        std::sort(members.begin(), members.end());
        for (std::size_t s : members) {
            cl.members.push_back({s / L, s % L});
            cl.mass += stats[s].t;
        }
        clusters.push_back(std::move(cl));
    }
    return clusters;
}

double null_statistic(const Problem& pb, const std::vector<Cluster>& clusters) {
    double best = 0.0;
    for (const auto& cl : clusters) {
        double v = 0.0;
        switch (pb.tail) {
        case Tail::two: v = std::abs(cl.mass); break;
        case Tail::positive: v = cl.mass; break;
        case Tail::negative: v = -cl.mass; break;
        }
        best = std::max(best, v);
    }
    return best;
}

// Lexicographic ordering of subjects by their data; relabelings are drawn over this
// order so that the null does not depend on which group was passed first.
std::vector<std::size_t> canonical_order(const Problem& pb) {
    std::vector<std::size_t> order(pb.data.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return pb.data[a] < pb.data[b]; });
    return order;
}

// Splits pooled subjects into (small group, other group) given the small group's
// canonical positions; members are listed in canonical order.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split(
    const std::vector<std::size_t>& canon, std::vector<std::size_t> small_positions) {
    std::sort(small_positions.begin(), small_positions.end());
    std::vector<char> in_small(canon.size(), 0);
    for (std::size_t p : small_positions) in_small[p] = 1;
    std::vector<std::size_t> small, other;
    for (std::size_t p = 0; p < canon.size(); ++p) (in_small[p] ? small : other).push_back(canon[p]);
    return {small, other};
}

bool next_combination(std::vector<std::size_t>& comb, std::size_t n) {
    const std::size_t k = comb.size();
    for (std::size_t i = k; i-- > 0;) {
        if (comb[i] < n - k + i) {
            ++comb[i];
            for (std::size_t j = i + 1; j < k; ++j) comb[j] = comb[j - 1] + 1;
            return true;
        }
    }
    return false;
}

ClusterResult run_test(Problem pb, const LagGrid& grid, std::vector<std::string> channels,
                       const ClusterOptions& opts) {
    if (pb.n_a < 2 || pb.n_b < 2) throw InvalidInput("cluster test needs at least 2 subjects per group");
    if (!(opts.cluster_alpha > 0.0 && opts.cluster_alpha < 1.0))
        throw InvalidInput("cluster_alpha must lie in (0, 1)");
    if (opts.n_perm < 1) throw InvalidInput("cluster test needs at least one permutation");
    pb.alpha = opts.cluster_alpha;
    pb.tail = opts.tail;
    pb.crit_lo = critical_t(static_cast<double>(pb.n_a + pb.n_b - 2), pb.alpha, pb.tail);
    pb.crit_hi = critical_t(static_cast<double>(std::min(pb.n_a, pb.n_b) - 1), pb.alpha, pb.tail);

    const std::size_t N = pb.n_a + pb.n_b;
    const auto canon = canonical_order(pb);
    std::vector<std::size_t> pos_of(N);
    for (std::size_t p = 0; p < N; ++p) pos_of[canon[p]] = p;

    // The relabeled group is the smaller one (group a on ties); its observed members:
    const bool small_is_a = pb.n_a <= pb.n_b;
    const std::size_t k = small_is_a ? pb.n_a : pb.n_b;
    std::vector<std::size_t> observed_small;
    for (std::size_t i = 0; i < N; ++i)
        if ((i < pb.n_a) == small_is_a) observed_small.push_back(pos_of[i]);
    std::sort(observed_small.begin(), observed_small.end());

    auto stats_for = [&](const std::vector<std::size_t>& small_positions) {
        auto [small, other] = split(canon, small_positions);
        return small_is_a ? sample_stats(pb, small, other) : sample_stats(pb, other, small);
    };

    ClusterResult res;
    res.grid = grid;
    res.channels = std::move(channels);
    res.cluster_alpha = opts.cluster_alpha;
    res.tail = opts.tail;

    const auto observed = stats_for(observed_small);
    res.t_values.resize(static_cast<Eigen::Index>(pb.n_channels), static_cast<Eigen::Index>(pb.n_lags));
    for (std::size_t s = 0; s < observed.size(); ++s)
        res.t_values(static_cast<Eigen::Index>(s / pb.n_lags), static_cast<Eigen::Index>(s % pb.n_lags)) =
            observed[s].t;
    res.clusters = find_clusters(pb, observed);

    const std::uint64_t distinct = count_relabelings(pb.n_a, pb.n_b);
    res.exhaustive = opts.exhaustive || static_cast<std::uint64_t>(opts.n_perm) >= distinct - 1;
    std::vector<std::vector<std::size_t>> draws;
    if (res.exhaustive) {
        if (distinct > 2'000'000) throw InvalidInput("too many relabelings for exhaustive enumeration");
        std::vector<std::size_t> comb(k);
        std::iota(comb.begin(), comb.end(), 0);
        do {
            if (comb != observed_small) draws.push_back(comb);
        } while (next_combination(comb, N));
    } else {
        draws.resize(static_cast<std::size_t>(opts.n_perm));
        for (std::size_t i = 0; i < draws.size(); ++i) {
            std::mt19937_64 rng(mix_seed(opts.seed, i));
            std::vector<std::size_t> idx(N);
            std::iota(idx.begin(), idx.end(), 0);
            for (std::size_t j = 0; j < k; ++j) {
                std::uniform_int_distribution<std::size_t> pick(j, N - 1);
                std::swap(idx[j], idx[pick(rng)]);
            }
            draws[i].assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
        }
    }
    res.n_permutations = static_cast<int>(draws.size());
    res.null_max.assign(draws.size(), 0.0);
    parallel_for(draws.size(), opts.jobs, [&](std::size_t i) {
        res.null_max[i] = null_statistic(pb, find_clusters(pb, stats_for(draws[i])));
    });

    for (auto& cl : res.clusters) {
        double obs = 0.0;
        switch (pb.tail) {
        case Tail::two: obs = std::abs(cl.mass); break;
        case Tail::positive: obs = cl.mass; break;
        case Tail::negative: obs = -cl.mass; break;
        }
        // Relative slack so mirror-image relabelings with rounding-level differences count.
        const double bar = obs - 1e-10 * std::abs(obs);
        const auto hits = std::count_if(res.null_max.begin(), res.null_max.end(),
                                        [&](double v) { return v >= bar; });
        cl.p_value = (1.0 + static_cast<double>(hits)) / (1.0 + static_cast<double>(res.null_max.size()));
    }
    std::stable_sort(res.clusters.begin(), res.clusters.end(), [](const Cluster& x, const Cluster& y) {
        return std::abs(x.mass) > std::abs(y.mass);
    });
    return res;
}

void check_grids(const std::vector<Tmif>& a, const std::vector<Tmif>& b) {
    if (a.empty() || b.empty()) throw InvalidInput("cluster test needs at least 2 subjects per group");
    const auto& ref = a.front();
    for (const auto* group : {&a, &b})
        for (const auto& t : *group) {
            if (!(t.grid == ref.grid)) throw InvalidInput("TMIF lag grids differ between subjects");
            if (t.rows != ref.rows) throw InvalidInput("TMIF channels differ between subjects");
            if (t.values.rows() != static_cast<Eigen::Index>(t.rows.size()) ||
                t.values.cols() != static_cast<Eigen::Index>(t.grid.size()))
                throw InvalidInput("TMIF value matrix has the wrong shape");
        }
}

Problem make_problem(const std::vector<Tmif>& a, const std::vector<Tmif>& b) {
    Problem pb;
    pb.n_a = a.size();
    pb.n_b = b.size();
    pb.n_channels = a.front().rows.size();
    pb.n_lags = a.front().grid.size();
    for (const auto* group : {&a, &b})
        for (const auto& t : *group) {
            std::vector<double> v(pb.samples());
            for (std::size_t c = 0; c < pb.n_channels; ++c)
                for (std::size_t l = 0; l < pb.n_lags; ++l)
                    v[c * pb.n_lags + l] = t.values(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(l));
            pb.data.push_back(std::move(v));
        }
    return pb;
}

}  // namespace

ClusterResult temporal_cluster_test(const std::vector<Tmif>& group_a, const std::vector<Tmif>& group_b,
                                    const ClusterOptions& opts) {
    check_grids(group_a, group_b);
    if (group_a.front().rows.size() != 1)
        throw InvalidInput("temporal cluster test expects single-row (multivariate) TMIFs");
    return run_test(make_problem(group_a, group_b), group_a.front().grid, group_a.front().rows, opts);
}

ClusterResult spatiotemporal_cluster_test(const std::vector<Tmif>& group_a,
                                          const std::vector<Tmif>& group_b,
                                          const Adjacency& adjacency, const ClusterOptions& opts) {
    check_grids(group_a, group_b);
    const auto& channels = group_a.front().rows;
    const Adjacency adj = adjacency.restricted(channels);
    Problem pb = make_problem(group_a, group_b);
    pb.adjacency = &adj;
    return run_test(std::move(pb), group_a.front().grid, channels, opts);
}

}  // namespace envtrack::clusterstats
