#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "flowforest/features.hpp"

namespace flowforest {

/// Symmetric information distance d = 1 - I(x;y)/H(x,y) over the matrix
/// columns listed in `features`. Entries are in [0,1], diagonal 0.
struct DistanceMatrix {
    std::vector<FeatureId> features;
    std::vector<double> d; // features.size()^2, row-major

    double at(size_t i, size_t j) const { return d[i * features.size() + j]; }
    size_t size() const { return features.size(); }
};

/// Disjoint clusters covering all analyzed features; DBSCAN noise points
/// become singleton groups.
struct FeatureGroups {
    std::vector<std::vector<FeatureId>> groups;
};

struct TradeoffWeights {
    double w_m = 1.0;
    double w_c = 1.0;
    double w_d = 0.5;
    size_t model_index = 0;
};

struct TradeoffMetrics {
    double m_m = 0.0; // feature size in bits (planning estimate)
    double m_c = 0.0; // packets until the value converges
    double m_d = 0.0; // 0 when a previous model already uses the feature
};

/// Equal-width 64-bin plug-in estimator (OpenMP over column pairs).
/// Throws errc::insufficient_samples below 2 rows.
DistanceMatrix mi_distance_matrix(const FeatureMatrix& matrix);
DistanceMatrix mi_distance_matrix_reference(const FeatureMatrix& matrix);

constexpr size_t kMiBins = 64;

/// DBSCAN over a precomputed distance matrix (neighborhood d <= eps,
/// the point itself included in the neighbor count).
FeatureGroups dbscan_cluster(const DistanceMatrix& d, double eps, size_t min_pts);

TradeoffMetrics tradeoff_metrics(FeatureId feature, size_t bits_if_stored, bool previously_used);

/// Linear decay from the initial (1, 1, 0.5) towards zero over `horizon`
/// extracted models.
TradeoffWeights weight_schedule(size_t model_index, size_t horizon);

/// Per group: min-max normalize each metric within the group, score
/// w_m*m_m + w_c*m_c + w_d*m_d, pick the argmin (ties to the smaller id).
std::vector<FeatureId> select_representatives(const FeatureGroups& groups,
                                              const TradeoffWeights& weights,
                                              const std::set<FeatureId>& used_features);

/// Drops features undefined at the given context from their groups and
/// removes groups that become empty.
FeatureGroups restrict_groups(const FeatureGroups& groups,
                              const std::array<bool, kNumFeatures>& defined);

std::string analysis_debug_json(const DistanceMatrix& d, const FeatureGroups& groups);

} // namespace flowforest
