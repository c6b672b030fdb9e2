#include "envtrack/clusterstats.hpp"
#include "envtrack/layout.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace envtrack;
using namespace envtrack::clusterstats;

namespace {

Tmif curve(const std::vector<double>& v) {
    Tmif t;
    t.grid = LagGrid::from_lags(128.0, 0, static_cast<int>(v.size()) - 1);
    t.rows = {"multivariate"};
    t.values = Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    return t;
}


std::vector<std::vector<double>> random_curves(std::size_t n, std::size_t L, double shift, std::size_t from,
                                               std::size_t to, std::uint64_t seed) {
    std::vector<std::vector<double>> out;
    for (std::size_t s = 0; s < n; ++s) {
        auto v = testutil::gaussian_vec(L, seed * 1000 + s);
        for (std::size_t l = from; l < to; ++l) v[l] += shift;
        out.push_back(v);
    }
    return out;
}

std::vector<Tmif> as_tmifs(const std::vector<std::vector<double>>& v) {
    std::vector<Tmif> out;
    for (const auto& x : v) out.push_back(curve(x));
    return out;
}

}  // namespace

TEST_CASE("Welch statistic") {
    const std::vector<double> a{1.2, 3.4, 2.2, 5.0, 4.1}, b{0.3, -1.0, 2.5, 0.0};
    const auto w = welch_t(a, b);
    CHECK(w.t == doctest::Approx(oracle::welch_t(a, b)).epsilon(1e-12));
    CHECK(w.df == doctest::Approx(oracle::welch_df(a, b)).epsilon(1e-12));
    CHECK(welch_p(w) == doctest::Approx(oracle::student_p_two(w.t, w.df)).epsilon(1e-10));
    CHECK(welch_p(w, Tail::positive) == doctest::Approx(welch_p(w) / 2).epsilon(1e-10));
    CHECK(welch_p(w, Tail::negative) == doctest::Approx(1 - welch_p(w) / 2).epsilon(1e-10));
    const auto z = welch_t(std::vector<double>{1, 1, 1}, std::vector<double>{0, 0});
    CHECK(std::isinf(z.t));
    CHECK(z.t > 0);
    CHECK(welch_p(z) == 0.0);
    CHECK(welch_t(std::vector<double>{2, 2}, std::vector<double>{2, 2}).t == 0.0);
    CHECK_THROWS_AS(welch_t(std::vector<double>{1}, b), InvalidInput);
}

TEST_CASE("relabeling counts") {
    CHECK(count_relabelings(4, 4) == 70);
    CHECK(count_relabelings(3, 5) == 56);
    CHECK(count_relabelings(27, 22) == 49699896548176ULL);
    CHECK(count_relabelings(100, 100) == (std::uint64_t{1} << 63));
}

TEST_CASE("exhaustive p-values equal brute-force enumeration") {
    for (auto [na, nb] : {std::pair<std::size_t, std::size_t>{4, 4}, {3, 5}, {5, 3}}) {
        const auto a = random_curves(na, 12, 2.5, 3, 8, 1 + na);
        const auto b = random_curves(nb, 12, 0.0, 0, 0, 50 + nb);
        ClusterOptions o;
        o.n_perm = 10;
        o.exhaustive = true;
        const auto res = temporal_cluster_test(as_tmifs(a), as_tmifs(b), o);
        CHECK(res.exhaustive);
        CHECK(res.n_permutations == static_cast<int>(count_relabelings(na, nb)) - 1);
        const auto ref = oracle::brute_force_p(a, b, 0.05);
        REQUIRE(res.clusters.size() == ref.size());
        REQUIRE_FALSE(ref.empty());
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(res.clusters[i].p_value == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("exhaustive mode switches on when permutations cover every relabeling") {
    const auto a = random_curves(4, 10, 2.0, 2, 6, 3), b = random_curves(4, 10, 0.0, 0, 0, 4);
    ClusterOptions o;
    o.n_perm = 69;
    CHECK(temporal_cluster_test(as_tmifs(a), as_tmifs(b), o).exhaustive);
    o.n_perm = 68;
    CHECK_FALSE(temporal_cluster_test(as_tmifs(a), as_tmifs(b), o).exhaustive);
    o.exhaustive = true;
    CHECK_THROWS_AS(temporal_cluster_test(as_tmifs(random_curves(15, 4, 0, 0, 0, 1)),
                                          as_tmifs(random_curves(15, 4, 0, 0, 0, 2)), o),
                    InvalidInput);
}

TEST_CASE("cluster structure") {
    const auto a = random_curves(10, 40, 1.5, 10, 20, 7), b = random_curves(12, 40, 0.0, 0, 0, 8);
    ClusterOptions o;
    o.n_perm = 300;
    o.seed = 5;
    const auto res = temporal_cluster_test(as_tmifs(a), as_tmifs(b), o);
    REQUIRE_FALSE(res.clusters.empty());
    for (std::size_t i = 0; i < res.clusters.size(); ++i) {
        const auto& c = res.clusters[i];
        double mass = 0.0;
        for (std::size_t m = 0; m < c.members.size(); ++m) {
            const double t = res.t_values(0, static_cast<Eigen::Index>(c.members[m].lag_index));
            CHECK((t > 0) == (c.sign > 0));
            mass += t;
            if (m > 0) CHECK(c.members[m].lag_index == c.members[m - 1].lag_index + 1);
        }
        CHECK(c.mass == doctest::Approx(mass));
        CHECK(c.p_value > 0.0);
        CHECK(c.p_value <= 1.0);
        if (i > 0) CHECK(std::abs(c.mass) <= std::abs(res.clusters[i - 1].mass));
    }
    CHECK(res.clusters.front().sign == 1);
    CHECK(res.clusters.front().p_value < 0.01);
    CHECK(res.null_max.size() == 300);
}

TEST_CASE("permutation invariances") {
    const auto a = random_curves(6, 30, 1.2, 5, 15, 11), b = random_curves(6, 30, 0.0, 0, 0, 12);
    ClusterOptions o;
    o.n_perm = 200;
    o.seed = 9;
    const auto ab = temporal_cluster_test(as_tmifs(a), as_tmifs(b), o);

    SUBCASE("swapping the groups negates t and keeps p") {
        const auto ba = temporal_cluster_test(as_tmifs(b), as_tmifs(a), o);
        CHECK(ba.t_values.isApprox(-ab.t_values));
        REQUIRE(ba.clusters.size() == ab.clusters.size());
        for (std::size_t i = 0; i < ab.clusters.size(); ++i) {
            CHECK(ba.clusters[i].p_value == ab.clusters[i].p_value);
            CHECK(ba.clusters[i].sign == -ab.clusters[i].sign);
        }
    }
    SUBCASE("subject order within a group does not matter") {
        auto a2 = a;
        std::reverse(a2.begin(), a2.end());
        const auto r = temporal_cluster_test(as_tmifs(a2), as_tmifs(b), o);
        CHECK(r.null_max == ab.null_max);
    }
    SUBCASE("jobs and reruns are deterministic") {
        auto par = o;
        par.jobs = 4;
        CHECK(temporal_cluster_test(as_tmifs(a), as_tmifs(b), par).null_max == ab.null_max);
    }
    SUBCASE("a common offset changes nothing") {
        auto a2 = a, b2 = b;
        for (auto* g : {&a2, &b2})
            for (auto& s : *g)
                for (auto& v : s) v += 3.0;
        const auto r = temporal_cluster_test(as_tmifs(a2), as_tmifs(b2), o);
        REQUIRE(r.clusters.size() == ab.clusters.size());
        for (std::size_t i = 0; i < r.clusters.size(); ++i)
            CHECK(r.clusters[i].p_value == doctest::Approx(ab.clusters[i].p_value));
    }
}

TEST_CASE("one-sided tails") {
    const auto a = random_curves(8, 20, -2.0, 5, 10, 21), b = random_curves(8, 20, 0.0, 0, 0, 22);
    ClusterOptions o;
    o.n_perm = 200;
    o.tail = Tail::positive;
    CHECK(temporal_cluster_test(as_tmifs(a), as_tmifs(b), o).clusters.empty());
    o.tail = Tail::negative;
    const auto neg = temporal_cluster_test(as_tmifs(a), as_tmifs(b), o);
    REQUIRE_FALSE(neg.clusters.empty());
    for (const auto& c : neg.clusters) CHECK(c.sign == -1);
    CHECK(parse_tail("negative") == Tail::negative);
    CHECK_THROWS_AS(parse_tail("left"), InvalidInput);
}

TEST_CASE("adjacency construction") {
    Layout grid;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) grid.push_back({"e" + std::to_string(3 * r + c), double(c), double(r)});
    const auto rook = build_adjacency_radius(grid, 1.0);
    CHECK(rook.edges().size() == 12);
    CHECK(rook.connected(4, 1));
    CHECK_FALSE(rook.connected(4, 0));
    const auto knn = build_adjacency(grid, 4);
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(knn.neighbors(i).size() >= 4);
        for (std::size_t j : knn.neighbors(i)) CHECK(knn.connected(j, i));
    }
    CHECK(knn.neighbors(4).size() >= 4);
    for (std::size_t j : {1u, 3u, 5u, 7u}) CHECK(knn.connected(4, j));

    const auto sub = rook.restricted({"e4", "e0", "e1"});
    CHECK(sub.connected(0, 2));
    CHECK(sub.connected(1, 2));
    CHECK_FALSE(sub.connected(0, 1));
    CHECK_THROWS_AS(rook.restricted({"zz"}), InvalidInput);
    grid.push_back({"dup", 0.0, 0.0});
    CHECK_THROWS_AS(build_adjacency(grid, 2), InvalidInput);

    const auto cap = build_adjacency(subset_layout(biosemi64_layout(), default_channel_selection()), 4);
    for (std::size_t i = 0; i < cap.channels().size(); ++i) CHECK(cap.neighbors(i).size() >= 4);
}

TEST_CASE("spatio-temporal clusters follow the adjacency") {
    const std::size_t L = 20;
    std::vector<Tmif> a, b;
    for (std::size_t s = 0; s < 8; ++s) {
        for (auto* g : {&a, &b}) {
            Tmif t;
            t.grid = LagGrid::from_lags(128.0, 0, static_cast<int>(L) - 1);
            t.rows = {"x", "y", "z"};
            t.values = testutil::gaussian(3, static_cast<Eigen::Index>(L), s * 7 + (g == &a ? 1 : 2));
            if (g == &a) t.values.block(0, 5, 2, 6).array() += 3.0;  // channels x and y
            g->push_back(t);
        }
    }
    ClusterOptions o;
    o.n_perm = 100;
    auto separate = spatiotemporal_cluster_test(a, b, Adjacency::empty({"x", "y", "z"}), o);
    auto joined = spatiotemporal_cluster_test(a, b, Adjacency::full({"z", "y", "x"}), o);
    auto spans = [](const Cluster& c) {
        std::set<std::size_t> ch;
        for (const auto& m : c.members) ch.insert(m.channel);
        return ch.size();
    };
    REQUIRE_FALSE(separate.clusters.empty());
    REQUIRE_FALSE(joined.clusters.empty());
    for (const auto& c : separate.clusters) CHECK(spans(c) == 1);
    CHECK(spans(joined.clusters.front()) >= 2);
    CHECK(joined.clusters.front().mass > separate.clusters.front().mass);
}

TEST_CASE("input validation") {
    ClusterOptions o;
    o.n_perm = 10;
    const auto a = as_tmifs(random_curves(3, 10, 0, 0, 0, 1));
    CHECK_THROWS_AS(temporal_cluster_test(a, {a.front()}, o), InvalidInput);
    auto b = as_tmifs(random_curves(3, 11, 0, 0, 0, 2));
    CHECK_THROWS_AS(temporal_cluster_test(a, b, o), InvalidInput);
    o.cluster_alpha = 1.5;
    CHECK_THROWS_AS(temporal_cluster_test(a, a, o), InvalidInput);
}
