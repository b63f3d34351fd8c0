#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "flowforest/error.hpp"
#include "flowforest/feature_analysis.hpp"
#include "flowforest/rng.hpp"

using namespace flowforest;

namespace {

// Matrix with the given leading columns defined and everything else not.
FeatureMatrix matrix_with(const std::vector<std::vector<uint64_t>>& columns) {
    FeatureMatrix m;
    m.n_rows = columns[0].size();
    m.values.assign(m.n_rows * kNumFeatures, 0);
    m.labels.assign(m.n_rows, 0);
    for (size_t c = 0; c < columns.size(); ++c) {
        m.defined[c] = true;
        for (size_t r = 0; r < m.n_rows; ++r) m.values[r * kNumFeatures + c] = columns[c][r];
    }
    return m;
}

// Exact plug-in oracle over small discrete data (one value per bin).
double exact_distance(const std::vector<uint64_t>& x, const std::vector<uint64_t>& y) {
    std::map<uint64_t, size_t> cx, cy;
    std::map<std::pair<uint64_t, uint64_t>, size_t> cxy;
    for (size_t i = 0; i < x.size(); ++i) {
        ++cx[x[i]];
        ++cy[y[i]];
        ++cxy[{x[i], y[i]}];
    }
    double n = static_cast<double>(x.size());
    auto entropy = [&](const auto& counts) {
        double h = 0;
        for (const auto& [k, c] : counts) {
            double p = static_cast<double>(c) / n;
            h -= p * std::log2(p);
        }
        return h;
    };
    double hx = entropy(cx), hy = entropy(cy), hxy = entropy(cxy);
    if (hx == 0 || hy == 0 || hxy == 0) return 1.0;
    return 1.0 - (hx + hy - hxy) / hxy;
}

DistanceMatrix planted_matrix(const std::vector<std::vector<size_t>>& clusters, double intra,
                              double inter) {
    DistanceMatrix d;
    size_t n = 0;
    for (const auto& c : clusters) n += c.size();
    d.features.resize(n);
    std::vector<size_t> cluster_of(n);
    for (size_t ci = 0; ci < clusters.size(); ++ci)
        for (size_t i : clusters[ci]) {
            d.features[i] = static_cast<FeatureId>(i);
            cluster_of[i] = ci;
        }
    d.d.assign(n * n, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j)
            if (i != j) d.d[i * n + j] = cluster_of[i] == cluster_of[j] ? intra : inter;
    return d;
}

// Brute-force oracle, valid for min_pts = 1: connected components of the
// "distance <= eps" graph.
std::vector<std::vector<FeatureId>> components(const DistanceMatrix& d, double eps) {
    size_t n = d.size();
    std::vector<int> comp(n, -1);
    int next = 0;
    for (size_t i = 0; i < n; ++i) {
        if (comp[i] >= 0) continue;
        std::vector<size_t> stack{i};
        comp[i] = next;
        while (!stack.empty()) {
            size_t p = stack.back();
            stack.pop_back();
            for (size_t q = 0; q < n; ++q)
                if (comp[q] < 0 && d.at(p, q) <= eps) {
                    comp[q] = next;
                    stack.push_back(q);
                }
        }
        ++next;
    }
    std::vector<std::vector<FeatureId>> out(static_cast<size_t>(next));
    for (size_t i = 0; i < n; ++i) out[static_cast<size_t>(comp[i])].push_back(d.features[i]);
    return out;
}

} // namespace

TEST_CASE("duplicated and bijective columns have distance zero") {
    rng64 rng(3);
    std::vector<uint64_t> base;
    for (int i = 0; i < 512; ++i) base.push_back(rng.below(64));
    std::vector<uint64_t> doubled;
    for (uint64_t v : base) doubled.push_back(2 * v);

    FeatureMatrix m = matrix_with({base, base, doubled});
    DistanceMatrix d = mi_distance_matrix(m);
    REQUIRE(d.size() == 3);
    CHECK(d.at(0, 1) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(d.at(0, 2) == doctest::Approx(0.0).epsilon(1e-9));

    for (size_t i = 0; i < 3; ++i) {
        CHECK(d.at(i, i) == 0.0);
        for (size_t j = 0; j < 3; ++j) CHECK(d.at(i, j) == d.at(j, i));
    }

    // exact oracle agreement on the small discrete data
    CHECK(d.at(0, 2) == doctest::Approx(exact_distance(base, doubled)).epsilon(1e-9));
}

TEST_CASE("independent columns approach distance one") {
    rng64 rng(5);
    std::vector<uint64_t> x, y;
    for (int i = 0; i < 10000; ++i) {
        x.push_back(rng.below(1000000));
        y.push_back(rng.below(1000000));
    }
    DistanceMatrix d = mi_distance_matrix(matrix_with({x, y}));
    CHECK(d.at(0, 1) > 0.9);
}

TEST_CASE("constant columns sit at distance one from everything") {
    std::vector<uint64_t> constant(100, 42), varying;
    rng64 rng(9);
    for (int i = 0; i < 100; ++i) varying.push_back(rng.below(50));
    DistanceMatrix d = mi_distance_matrix(matrix_with({constant, varying}));
    CHECK(d.at(0, 1) == 1.0);
    CHECK(d.at(0, 0) == 0.0);
}

TEST_CASE("insufficient samples are rejected") {
    FeatureMatrix m = matrix_with({{1}});
    CHECK_THROWS_AS(mi_distance_matrix(m), error);
}

TEST_CASE("dbscan groups duplicates and isolates distance-1 points") {
    DistanceMatrix dup = planted_matrix({{0, 1}}, 0.0, 1.0);
    FeatureGroups g = dbscan_cluster(dup, 0.3, 1);
    REQUIRE(g.groups.size() == 1);
    CHECK(g.groups[0].size() == 2);

    DistanceMatrix apart = planted_matrix({{0}, {1}, {2}}, 0.0, 1.0);
    FeatureGroups singles = dbscan_cluster(apart, 0.3, 1);
    CHECK(singles.groups.size() == 3);
}

TEST_CASE("dbscan with min_pts=1 equals threshold-graph components") {
    DistanceMatrix d = planted_matrix({{0, 3, 5}, {1, 2}, {4, 6, 7}}, 0.05, 0.95);
    FeatureGroups g = dbscan_cluster(d, 0.2, 1);
    auto oracle = components(d, 0.2);
    REQUIRE(g.groups.size() == oracle.size());
    auto sorted_groups = [](std::vector<std::vector<FeatureId>> gs) {
        for (auto& group : gs) std::sort(group.begin(), group.end());
        std::sort(gs.begin(), gs.end());
        return gs;
    };
    CHECK(sorted_groups(g.groups) == sorted_groups(oracle));
    CHECK(g.groups.size() == 3);
}

TEST_CASE("dbscan respects min_pts for core points") {
    // chain 0-1-2: only the middle point has 3 neighbors within eps.
    DistanceMatrix d;
    d.features = {FeatureId::iat_min, FeatureId::iat_max, FeatureId::iat_avg};
    d.d = {0.0, 0.1, 0.9, 0.1, 0.0, 0.1, 0.9, 0.1, 0.0};
    FeatureGroups g = dbscan_cluster(d, 0.2, 3);
    REQUIRE(g.groups.size() == 1);
    CHECK(g.groups[0].size() == 3); // 0 and 2 join as border points
}

TEST_CASE("trade-off metrics match the planning table") {
    TradeoffMetrics port = tradeoff_metrics(FeatureId::src_port,
                                            feature_planning_bits(FeatureId::src_port), false);
    CHECK(port.m_m == 0.0);
    CHECK(port.m_c == 1.0);

    TradeoffMetrics avg_iat = tradeoff_metrics(FeatureId::iat_avg,
                                               feature_planning_bits(FeatureId::iat_avg), false);
    CHECK(avg_iat.m_c == 3.0);
    CHECK(avg_iat.m_d == 1.0);
    CHECK(avg_iat.m_m == 34.0); // 32-bit field + 2 average bits

    TradeoffMetrics ack = tradeoff_metrics(FeatureId::ack_count,
                                           feature_planning_bits(FeatureId::ack_count), false);
    CHECK(ack.m_m == 7.0);

    TradeoffMetrics len_avg = tradeoff_metrics(FeatureId::len_avg,
                                               feature_planning_bits(FeatureId::len_avg), true);
    CHECK(len_avg.m_c == 2.0);
    CHECK(len_avg.m_d == 0.0);
}

TEST_CASE("representative selection hand-evaluates the weighted sum") {
    FeatureGroups groups;
    groups.groups.push_back({FeatureId::iat_avg}); // singleton
    FeatureGroups pair;
    pair.groups.push_back({FeatureId::iat_min, FeatureId::iat_avg});

    TradeoffWeights w = weight_schedule(0, 10);
    auto single = select_representatives(groups, w, {});
    CHECK(single == std::vector<FeatureId>{FeatureId::iat_avg});

    // iat_avg: m_m=34, m_c=3; iat_min: m_m=32, m_c=2. Normalized within the
    // group iat_min scores 0 and iat_avg w_m+w_c; iat_min wins.
    auto rep = select_representatives(pair, w, {});
    CHECK(rep == std::vector<FeatureId>{FeatureId::iat_min});

    // m_d dominance: same m_m/m_c, only one previously used.
    FeatureGroups flags;
    flags.groups.push_back({FeatureId::syn_count, FeatureId::ack_count});
    auto used = select_representatives(flags, w, {FeatureId::ack_count});
    CHECK(used == std::vector<FeatureId>{FeatureId::ack_count});
}

TEST_CASE("weight schedule decays linearly to zero") {
    TradeoffWeights w0 = weight_schedule(0, 10);
    CHECK(w0.w_m == 1.0);
    CHECK(w0.w_c == 1.0);
    CHECK(w0.w_d == 0.5);

    TradeoffWeights w5 = weight_schedule(5, 10);
    CHECK(w5.w_m == 0.5);
    CHECK(w5.w_c == 0.5);
    CHECK(w5.w_d == 0.25);

    TradeoffWeights w10 = weight_schedule(10, 10);
    CHECK(w10.w_m == 0.0);
    CHECK(w10.w_d == 0.0);

    TradeoffWeights past = weight_schedule(15, 10);
    CHECK(past.w_m == 0.0);
}

TEST_CASE("column permutation permutes groups identically") {
    rng64 rng(17);
    std::vector<uint64_t> a, b;
    for (int i = 0; i < 400; ++i) {
        uint64_t v = rng.below(32);
        a.push_back(v);
        b.push_back(rng.below(100000)); // independent
    }
    DistanceMatrix d1 = mi_distance_matrix(matrix_with({a, a, b}));
    DistanceMatrix d2 = mi_distance_matrix(matrix_with({b, a, a}));
    FeatureGroups g1 = dbscan_cluster(d1, 0.3, 1);
    FeatureGroups g2 = dbscan_cluster(d2, 0.3, 1);

    auto sizes = [](const FeatureGroups& g) {
        std::vector<size_t> s;
        for (const auto& group : g.groups) s.push_back(group.size());
        std::sort(s.begin(), s.end());
        return s;
    };
    CHECK(sizes(g1) == sizes(g2));
    CHECK(sizes(g1) == std::vector<size_t>{1, 2});
}

TEST_CASE("restrict_groups drops undefined features and empty groups") {
    FeatureGroups g;
    g.groups.push_back({FeatureId::iat_min, FeatureId::len_min});
    g.groups.push_back({FeatureId::iat_avg});
    std::array<bool, kNumFeatures> defined{};
    defined[static_cast<size_t>(FeatureId::len_min)] = true;
    FeatureGroups r = restrict_groups(g, defined);
    REQUIRE(r.groups.size() == 1);
    CHECK(r.groups[0] == std::vector<FeatureId>{FeatureId::len_min});
}

TEST_CASE("representative is always a member of its group") {
    rng64 rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        FeatureGroups g;
        std::vector<FeatureId> pool;
        for (size_t f = 0; f < kNumFeatures; ++f) pool.push_back(static_cast<FeatureId>(f));
        for (size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.below(i)]);
        size_t used = 0;
        while (used < 10) {
            size_t take = 1 + rng.below(3);
            take = std::min(take, pool.size() - used);
            g.groups.push_back(std::vector<FeatureId>(pool.begin() + used,
                                                      pool.begin() + used + take));
            used += take;
        }
        std::set<FeatureId> prior{pool[0]};
        auto reps = select_representatives(g, weight_schedule(rng.below(12), 10), prior);
        REQUIRE(reps.size() == g.groups.size());
        for (FeatureId rep : reps) {
            bool member = false;
            for (const auto& group : g.groups)
                member = member || std::find(group.begin(), group.end(), rep) != group.end();
            CHECK(member);
        }
    }
}
