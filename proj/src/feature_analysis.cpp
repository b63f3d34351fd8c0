#include "flowforest/feature_analysis.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "flowforest/error.hpp"

namespace flowforest {

namespace {

// Bin assignment: exact integer arithmetic over the observed range so results
// do not depend on floating-point rounding.
std::vector<uint32_t> bin_column(const FeatureMatrix& m, FeatureId f) {
    size_t n = m.n_rows;
    uint64_t lo = m.at(0, f), hi = m.at(0, f);
    for (size_t r = 1; r < n; ++r) {
        uint64_t v = m.at(r, f);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::vector<uint32_t> bins(n, 0);
    if (hi == lo) return bins; // constant column: one bin
    unsigned __int128 span = static_cast<unsigned __int128>(hi - lo) + 1;
    for (size_t r = 0; r < n; ++r) {
        unsigned __int128 off = m.at(r, f) - lo;
        bins[r] = static_cast<uint32_t>(off * kMiBins / span);
    }
    return bins;
}

double entropy_from_counts(const std::vector<uint32_t>& counts, size_t n) {
    double h = 0.0;
    for (uint32_t c : counts) {
        if (c == 0) continue;
        double p = static_cast<double>(c) / static_cast<double>(n);
        h -= p * std::log2(p);
    }
    return h;
}

double marginal_entropy(const std::vector<uint32_t>& bins, size_t n) {
    std::vector<uint32_t> counts(kMiBins, 0);
    for (uint32_t b : bins) ++counts[b];
    return entropy_from_counts(counts, n);
}

// d(f_i, f_j) = 1 - I/H_joint with I = H_i + H_j - H_joint.
double pair_distance(const std::vector<uint32_t>& bi, const std::vector<uint32_t>& bj,
                     double hi, double hj, size_t n) {
    if (hi == 0.0 || hj == 0.0) return 1.0; // constant column carries no information
    std::vector<uint32_t> joint(kMiBins * kMiBins, 0);
    for (size_t r = 0; r < n; ++r) ++joint[bi[r] * kMiBins + bj[r]];
    double h_joint = entropy_from_counts(joint, n);
    if (h_joint == 0.0) return 1.0;
    double mi = hi + hj - h_joint;
    double d = 1.0 - mi / h_joint;
    return std::clamp(d, 0.0, 1.0);
}

DistanceMatrix mi_distance_impl(const FeatureMatrix& m, bool parallel) {
    if (m.n_rows < 2) throw error(errc::insufficient_samples, "need at least 2 rows");

    DistanceMatrix dm;
    for (size_t f = 0; f < kNumFeatures; ++f)
        if (m.defined[f]) dm.features.push_back(static_cast<FeatureId>(f));
    size_t k = dm.features.size();
    dm.d.assign(k * k, 0.0);

    std::vector<std::vector<uint32_t>> bins(k);
    std::vector<double> h(k);
    for (size_t i = 0; i < k; ++i) {
        bins[i] = bin_column(m, dm.features[i]);
        h[i] = marginal_entropy(bins[i], m.n_rows);
    }

    // Upper triangle as a flat list of (i, j) pairs for even OpenMP chunks.
    std::vector<std::pair<size_t, size_t>> pairs;
    for (size_t i = 0; i < k; ++i)
        for (size_t j = i + 1; j < k; ++j) pairs.emplace_back(i, j);

    auto compute = [&](size_t p) {
        auto [i, j] = pairs[p];
        double d = pair_distance(bins[i], bins[j], h[i], h[j], m.n_rows);
        dm.d[i * k + j] = d;
        dm.d[j * k + i] = d;
    };

    if (parallel) {
#pragma omp parallel for schedule(dynamic)
        for (long p = 0; p < static_cast<long>(pairs.size()); ++p) compute(static_cast<size_t>(p));
    } else {
        for (size_t p = 0; p < pairs.size(); ++p) compute(p);
    }
    return dm;
}

} // namespace

DistanceMatrix mi_distance_matrix(const FeatureMatrix& matrix) {
    return mi_distance_impl(matrix, true);
}

DistanceMatrix mi_distance_matrix_reference(const FeatureMatrix& matrix) {
    return mi_distance_impl(matrix, false);
}

FeatureGroups dbscan_cluster(const DistanceMatrix& d, double eps, size_t min_pts) {
    size_t n = d.size();
    std::vector<bool> core(n, false);
    for (size_t i = 0; i < n; ++i) {
        size_t neighbors = 0;
        for (size_t j = 0; j < n; ++j)
            if (d.at(i, j) <= eps) ++neighbors; // includes i itself
        core[i] = neighbors >= min_pts;
    }

    constexpr int kUnvisited = -1;
    std::vector<int> cluster(n, kUnvisited);
    int next_cluster = 0;
    for (size_t i = 0; i < n; ++i) {
        if (cluster[i] != kUnvisited || !core[i]) continue;
        // Expand from this core point.
        std::vector<size_t> stack{i};
        cluster[i] = next_cluster;
        while (!stack.empty()) {
            size_t p = stack.back();
            stack.pop_back();
            if (!core[p]) continue; // border points do not expand
            for (size_t q = 0; q < n; ++q) {
                if (d.at(p, q) <= eps && cluster[q] == kUnvisited) {
                    cluster[q] = next_cluster;
                    stack.push_back(q);
                }
            }
        }
        ++next_cluster;
    }

    FeatureGroups groups;
    groups.groups.resize(static_cast<size_t>(next_cluster));
    for (size_t i = 0; i < n; ++i) {
        if (cluster[i] == kUnvisited)
            groups.groups.push_back({d.features[i]}); // noise -> singleton
        else
            groups.groups[static_cast<size_t>(cluster[i])].push_back(d.features[i]);
    }
    return groups;
}

TradeoffMetrics tradeoff_metrics(FeatureId feature, size_t bits_if_stored, bool previously_used) {
    TradeoffMetrics m;
    FeatureKind kind = feature_kind(feature);
    m.m_m = kind == FeatureKind::stateless ? 0.0 : static_cast<double>(bits_if_stored);
    switch (kind) {
        case FeatureKind::stateless: m.m_c = 1.0; break;
        case FeatureKind::ewma:
            m.m_c = feature == FeatureId::iat_avg ? 3.0 : 2.0;
            break;
        default: m.m_c = static_cast<double>(feature_min_packets(feature)); break;
    }
    m.m_d = previously_used ? 0.0 : 1.0;
    return m;
}

TradeoffWeights weight_schedule(size_t model_index, size_t horizon) {
    TradeoffWeights w;
    w.model_index = model_index;
    double frac = std::max(0.0, 1.0 - static_cast<double>(model_index) / static_cast<double>(horizon));
    w.w_m = frac;
    w.w_c = frac;
    w.w_d = 0.5 * frac;
    return w;
}

namespace {

double normalized(double v, double lo, double hi) {
    if (hi <= lo) return 0.0; // constant metric within the group
    return (v - lo) / (hi - lo);
}

} // namespace

std::vector<FeatureId> select_representatives(const FeatureGroups& groups,
                                              const TradeoffWeights& weights,
                                              const std::set<FeatureId>& used_features) {
    std::vector<FeatureId> reps;
    for (const auto& group : groups.groups) {
        if (group.empty()) continue;
        std::vector<TradeoffMetrics> metrics;
        metrics.reserve(group.size());
        for (FeatureId f : group)
            metrics.push_back(
                tradeoff_metrics(f, feature_planning_bits(f), used_features.count(f) > 0));

        double mm_lo = metrics[0].m_m, mm_hi = metrics[0].m_m;
        double mc_lo = metrics[0].m_c, mc_hi = metrics[0].m_c;
        double md_lo = metrics[0].m_d, md_hi = metrics[0].m_d;
        for (const auto& m : metrics) {
            mm_lo = std::min(mm_lo, m.m_m);
            mm_hi = std::max(mm_hi, m.m_m);
            mc_lo = std::min(mc_lo, m.m_c);
            mc_hi = std::max(mc_hi, m.m_c);
            md_lo = std::min(md_lo, m.m_d);
            md_hi = std::max(md_hi, m.m_d);
        }

        size_t best = 0;
        double best_score = 0.0;
        for (size_t i = 0; i < group.size(); ++i) {
            double score = weights.w_m * normalized(metrics[i].m_m, mm_lo, mm_hi) +
                           weights.w_c * normalized(metrics[i].m_c, mc_lo, mc_hi) +
                           weights.w_d * normalized(metrics[i].m_d, md_lo, md_hi);
            bool better = i == 0 || score < best_score ||
                          (score == best_score && group[i] < group[best]);
            if (better) {
                best = i;
                best_score = score;
            }
        }
        reps.push_back(group[best]);
    }
    std::sort(reps.begin(), reps.end());
    return reps;
}

FeatureGroups restrict_groups(const FeatureGroups& groups,
                              const std::array<bool, kNumFeatures>& defined) {
    FeatureGroups out;
    for (const auto& group : groups.groups) {
        std::vector<FeatureId> kept;
        for (FeatureId f : group)
            if (defined[static_cast<size_t>(f)]) kept.push_back(f);
        if (!kept.empty()) out.groups.push_back(std::move(kept));
    }
    return out;
}

std::string analysis_debug_json(const DistanceMatrix& d, const FeatureGroups& groups) {
    nlohmann::json j;
    nlohmann::json names = nlohmann::json::array();
    for (FeatureId f : d.features) names.push_back(feature_name(f));
    j["features"] = names;
    nlohmann::json rows = nlohmann::json::array();
    for (size_t i = 0; i < d.size(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (size_t k = 0; k < d.size(); ++k) row.push_back(d.at(i, k));
        rows.push_back(row);
    }
    j["distance"] = rows;
    nlohmann::json gs = nlohmann::json::array();
    for (const auto& group : groups.groups) {
        nlohmann::json g = nlohmann::json::array();
        for (FeatureId f : group) g.push_back(feature_name(f));
        gs.push_back(g);
    }
    j["groups"] = gs;
    return j.dump(2);
}

} // namespace flowforest
