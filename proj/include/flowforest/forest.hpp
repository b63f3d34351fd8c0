#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "flowforest/features.hpp"

namespace flowforest {

/// Decision tree node. Internal nodes route samples with value <= threshold
/// to the left child and value > threshold to the right child, the same
/// convention the table encoding uses.
struct TreeNode {
    bool is_leaf = true;

    // internal
    FeatureId feature = FeatureId::iat_min;
    double threshold = 0.0;
    std::unique_ptr<TreeNode> left;
    std::unique_ptr<TreeNode> right;

    // leaf
    int label = 0;
    double certainty = 1.0; // weighted fraction of the majority class
    double support = 0.0;   // weighted training samples in the leaf

    // split bookkeeping for MDI (not serialized)
    double node_weight = 0.0;
    double node_impurity = 0.0;
};

struct DecisionTree {
    std::unique_ptr<TreeNode> root;
    size_t depth = 0;
};

struct ForestParams {
    size_t n_trees = 16;
    size_t max_depth = 10;
    std::vector<double> class_weights; // by class id; empty = uniform
    size_t features_per_split = 0;     // 0 = ceil(sqrt(#candidate features))
    bool bootstrap = true;
    uint64_t seed = 1;
};

struct RandomForest {
    std::vector<DecisionTree> trees;
    std::vector<std::string> classes;
    std::vector<FeatureId> features; // candidate features the forest was trained on
    ForestParams params;
};

struct Prediction {
    int label = 0;
    double certainty = 0.0;
};

/// CART training with weighted Gini impurity. Split candidates are midpoints
/// between consecutive distinct values of a random feature subset.
DecisionTree train_tree(const FeatureMatrix& X, const std::vector<double>& sample_weights,
                        const std::vector<FeatureId>& candidates, const ForestParams& params,
                        uint64_t tree_seed);

/// Trains params.n_trees trees (OpenMP across trees). Each tree's RNG stream
/// derives from (seed, tree index), so this is bit-identical to the serial
/// reference below.
RandomForest train_forest(const FeatureMatrix& X, const std::vector<std::string>& classes,
                          const std::vector<FeatureId>& candidates, const ForestParams& params);

RandomForest train_forest_reference(const FeatureMatrix& X, const std::vector<std::string>& classes,
                                    const std::vector<FeatureId>& candidates,
                                    const ForestParams& params);

Prediction predict_tree(const DecisionTree& tree, const FeatureVector& x);

/// Majority vote; ties go to the smallest class id. Certainty is the mean
/// over the trees that voted for the winning label.
Prediction predict(const RandomForest& forest, const FeatureVector& x);

Prediction predict_row(const RandomForest& forest, const FeatureMatrix& X, size_t row);

std::vector<int> predict_all(const RandomForest& forest, const FeatureMatrix& X);

/// Unweighted mean of per-class F1. Classes absent from both y_true and
/// y_pred are skipped; 0/0 precision or recall counts as 0.
double f1_macro(const std::vector<int>& y_true, const std::vector<int>& y_pred, size_t n_classes);

/// Fold assignment: per class, a seeded shuffle dealt round-robin, so every
/// fold's class proportions stay within one sample of the global ones.
std::vector<size_t> stratified_folds(const std::vector<int>& labels, size_t k, uint64_t seed);

/// Mean F1-macro over stratified folds. k shrinks to the smallest class size
/// when a class has fewer than k samples; throws errc::too_few_samples when
/// any class has fewer than 2.
double stratified_cv(const FeatureMatrix& X, const std::vector<std::string>& classes,
                     const std::vector<FeatureId>& candidates, const ForestParams& params,
                     size_t k = 6);

struct GridSearchResult {
    RandomForest forest; // winner retrained on all data
    double cv_score = 0.0;
    size_t grid_index = 0;
};

GridSearchResult grid_search(const FeatureMatrix& X, const std::vector<std::string>& classes,
                             const std::vector<FeatureId>& candidates,
                             const std::vector<ForestParams>& grid, size_t k = 6);

/// Mean-decrease-in-impurity ranking, normalized to sum 1; descending, ties
/// by feature id.
std::vector<std::pair<FeatureId, double>> mdi_importance(const RandomForest& forest);

struct FeatureSelection {
    std::vector<FeatureId> features;
    RandomForest forest;
    double score = 0.0;
    bool reached_threshold = false;
};

/// Scans prefixes of the importance ranking until the CV score reaches thrS;
/// returns the full set with reached_threshold=false when no prefix does.
FeatureSelection select_min_features(const FeatureMatrix& X, const std::vector<std::string>& classes,
                                     const ForestParams& params,
                                     const std::vector<std::pair<FeatureId, double>>& ranking,
                                     double thrS, size_t k = 6);

// JSON (de)serialization; stable field order via sorted keys.
std::string forest_to_json(const RandomForest& forest);
RandomForest forest_from_json(const std::string& text);

} // namespace flowforest
