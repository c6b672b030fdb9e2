#pragma once

// Cluster-based permutation tests for group differences in TMIFs.
//
// Each lag (or lag x channel) sample gets a Welch t statistic; samples whose two-sided
// p-value falls below cluster_alpha are grouped into sign-homogeneous connected clusters
// and scored by their summed t ("mass"). The null distribution holds, for every random
// relabeling of subjects into groups of the original sizes, the largest cluster mass.

#include "envtrack/core.hpp"
#include "envtrack/layout.hpp"

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace envtrack::clusterstats {

/// Undirected channel graph without self-edges.
class Adjacency {
public:
    Adjacency() = default;
    explicit Adjacency(std::vector<std::string> channels);

    void connect(std::size_t a, std::size_t b);
    bool connected(std::size_t a, std::size_t b) const;
    const std::vector<std::string>& channels() const { return channels_; }
    const std::vector<std::size_t>& neighbors(std::size_t i) const { return neighbors_.at(i); }
    /// Edges as (i, j) with i < j.
    std::set<std::pair<std::size_t, std::size_t>> edges() const;
    std::size_t index_of(const std::string& channel) const;

    /// The induced graph on `channels` (in that order); throws if any is missing.
    Adjacency restricted(const std::vector<std::string>& channels) const;

    static Adjacency empty(std::vector<std::string> channels) { return Adjacency(std::move(channels)); }
    static Adjacency full(std::vector<std::string> channels);

private:
    std::vector<std::string> channels_;
    std::vector<std::vector<std::size_t>> neighbors_;
};

/// Symmetrized k-nearest-neighbour graph (union: an edge if either end lists the other).
/// Distance ties are broken by layout order. Throws on duplicate positions.
Adjacency build_adjacency(const Layout& layout, int k = 4);
/// Edges between channels closer than `radius` (inclusive, up to 1e-9 slack).
Adjacency build_adjacency_radius(const Layout& layout, double radius);

enum class Tail { two, positive, negative };
Tail parse_tail(std::string_view text);
std::string_view to_string(Tail tail);

struct ClusterOptions {
    int n_perm = 5000;
    double cluster_alpha = 0.05;
    Tail tail = Tail::two;
    std::uint64_t seed = 0;
    /// Enumerate all relabelings even if n_perm is smaller.
    bool exhaustive = false;
    int jobs = 1;
};

struct WelchT {
    double t = 0.0;
    double df = 0.0;
};

/// Welch two-sample t of mean(a) - mean(b). Zero spread in both groups gives t = 0 for
/// equal means and +-infinity otherwise.
WelchT welch_t(std::span<const double> a, std::span<const double> b);

/// Two-sided (or one-sided in the direction of `tail`) p-value of a Welch t.
double welch_p(const WelchT& w, Tail tail = Tail::two);

struct ClusterSample {
    std::size_t channel = 0;
    std::size_t lag_index = 0;
    bool operator==(const ClusterSample&) const = default;
};

struct Cluster {
    std::vector<ClusterSample> members;  // sorted by (channel, lag)
    double mass = 0.0;                   // sum of t over members
    double p_value = 1.0;
    int sign = +1;
};

struct ClusterResult {
    LagGrid grid = LagGrid::default_grid();
    std::vector<std::string> channels;  // {"multivariate"} for the temporal test
    Eigen::MatrixXd t_values;           // channels x lags
    std::vector<Cluster> clusters;      // sorted by decreasing |mass|
    std::vector<double> null_max;       // largest mass per relabeling
    int n_permutations = 0;
    bool exhaustive = false;
    double cluster_alpha = 0.05;
    Tail tail = Tail::two;
};

/// Temporal test on multivariate (single-row) TMIFs.
ClusterResult temporal_cluster_test(const std::vector<Tmif>& group_a, const std::vector<Tmif>& group_b,
                                    const ClusterOptions& opts = {});

/// Spatio-temporal test on single-channel TMIFs. Samples connect when they are lag
/// neighbours on the same channel, or share a lag on adjacent channels.
ClusterResult spatiotemporal_cluster_test(const std::vector<Tmif>& group_a,
                                          const std::vector<Tmif>& group_b,
                                          const Adjacency& adjacency, const ClusterOptions& opts = {});

/// Number of distinct relabelings C(n_a + n_b, min(n_a, n_b)), saturating at 2^63.
std::uint64_t count_relabelings(std::size_t n_a, std::size_t n_b);

}  // namespace envtrack::clusterstats
