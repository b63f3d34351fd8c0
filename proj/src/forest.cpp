#include "flowforest/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "flowforest/error.hpp"
#include "flowforest/rng.hpp"
#include "json_io.hpp"

namespace flowforest {

namespace {

using json = nlohmann::json;

double gini(const std::vector<double>& class_weights, double total) {
    if (total <= 0.0) return 0.0;
    double sum_sq = 0.0;
    for (double w : class_weights) {
        double p = w / total;
        sum_sq += p * p;
    }
    return 1.0 - sum_sq;
}

struct SplitChoice {
    bool found = false;
    FeatureId feature = FeatureId::iat_min;
    double threshold = 0.0;
    double child_impurity = 0.0; // weighted mean of child Ginis
};

class TreeBuilder {
public:
    TreeBuilder(const FeatureMatrix& X, const std::vector<double>& weights,
                const std::vector<FeatureId>& candidates, const ForestParams& params,
                uint64_t seed)
        : X_(X), weights_(weights), candidates_(candidates), params_(params), rng_(seed) {
        n_classes_ = 0;
        for (int label : X.labels) n_classes_ = std::max(n_classes_, static_cast<size_t>(label) + 1);
        per_split_ = params.features_per_split
                         ? std::min(params.features_per_split, candidates.size())
                         : static_cast<size_t>(
                               std::ceil(std::sqrt(static_cast<double>(candidates.size()))));
    }

    DecisionTree build() {
        std::vector<size_t> rows;
        size_t n = X_.n_rows;
        if (params_.bootstrap) {
            rows.reserve(n);
            for (size_t i = 0; i < n; ++i) rows.push_back(rng_.below(n));
            std::sort(rows.begin(), rows.end()); // canonical order for determinism
        } else {
            rows.resize(n);
            std::iota(rows.begin(), rows.end(), size_t{0});
        }
        DecisionTree tree;
        tree.root = build_node(rows, 0, tree.depth);
        return tree;
    }

private:
    std::vector<double> class_sums(const std::vector<size_t>& rows) const {
        std::vector<double> sums(n_classes_, 0.0);
        for (size_t r : rows) sums[static_cast<size_t>(X_.labels[r])] += weights_[r];
        return sums;
    }

    std::unique_ptr<TreeNode> make_leaf(const std::vector<double>& sums, double total,
                                        double impurity) const {
        auto node = std::make_unique<TreeNode>();
        node->is_leaf = true;
        size_t best = 0;
        for (size_t c = 1; c < sums.size(); ++c)
            if (sums[c] > sums[best]) best = c;
        node->label = static_cast<int>(best);
        node->certainty = total > 0.0 ? sums[best] / total : 1.0;
        node->support = total;
        node->node_weight = total;
        node->node_impurity = impurity;
        return node;
    }

    SplitChoice best_split(const std::vector<size_t>& rows, const std::vector<double>& sums,
                           double total) {
        // Draw the per-split feature subset.
        std::vector<FeatureId> pool = candidates_;
        for (size_t i = 0; i < per_split_ && i + 1 < pool.size(); ++i) {
            size_t j = i + static_cast<size_t>(rng_.below(pool.size() - i));
            std::swap(pool[i], pool[j]);
        }
        size_t subset = std::min(per_split_, pool.size());

        SplitChoice best;
        std::vector<std::pair<uint64_t, size_t>> order;
        order.reserve(rows.size());
        std::vector<double> left(n_classes_);

        for (size_t fi = 0; fi < subset; ++fi) {
            FeatureId f = pool[fi];
            order.clear();
            for (size_t r : rows) order.emplace_back(X_.at(r, f), r);
            std::sort(order.begin(), order.end());

            std::fill(left.begin(), left.end(), 0.0);
            double left_total = 0.0;
            for (size_t i = 0; i + 1 < order.size(); ++i) {
                size_t r = order[i].second;
                left[static_cast<size_t>(X_.labels[r])] += weights_[r];
                left_total += weights_[r];
                if (order[i].first == order[i + 1].first) continue;

                double right_total = total - left_total;
                double gl = gini(left, left_total);
                std::vector<double> right(n_classes_);
                for (size_t c = 0; c < n_classes_; ++c) right[c] = sums[c] - left[c];
                double gr = gini(right, right_total);
                double child = (left_total * gl + right_total * gr) / total;
                if (!best.found || child < best.child_impurity) {
                    best.found = true;
                    best.feature = f;
                    best.threshold =
                        (static_cast<double>(order[i].first) + static_cast<double>(order[i + 1].first)) * 0.5;
                    best.child_impurity = child;
                }
            }
        }
        return best;
    }

    std::unique_ptr<TreeNode> build_node(const std::vector<size_t>& rows, size_t depth,
                                         size_t& max_depth_seen) {
        max_depth_seen = std::max(max_depth_seen, depth);
        std::vector<double> sums = class_sums(rows);
        double total = std::accumulate(sums.begin(), sums.end(), 0.0);
        double impurity = gini(sums, total);

        bool pure = std::count_if(sums.begin(), sums.end(), [](double w) { return w > 0.0; }) <= 1;
        if (depth >= params_.max_depth || pure || rows.size() < 2)
            return make_leaf(sums, total, impurity);

        SplitChoice split = best_split(rows, sums, total);
        if (!split.found) return make_leaf(sums, total, impurity);

        std::vector<size_t> left_rows, right_rows;
        for (size_t r : rows) {
            if (static_cast<double>(X_.at(r, split.feature)) <= split.threshold)
                left_rows.push_back(r);
            else
                right_rows.push_back(r);
        }

        auto node = std::make_unique<TreeNode>();
        node->is_leaf = false;
        node->feature = split.feature;
        node->threshold = split.threshold;
        node->node_weight = total;
        node->node_impurity = impurity;
        node->left = build_node(left_rows, depth + 1, max_depth_seen);
        node->right = build_node(right_rows, depth + 1, max_depth_seen);
        return node;
    }

    const FeatureMatrix& X_;
    const std::vector<double>& weights_;
    const std::vector<FeatureId>& candidates_;
    const ForestParams& params_;
    rng64 rng_;
    size_t n_classes_ = 0;
    size_t per_split_ = 1;
};

std::vector<double> row_weights(const FeatureMatrix& X, const ForestParams& params) {
    std::vector<double> w(X.n_rows, 1.0);
    if (!params.class_weights.empty()) {
        for (size_t r = 0; r < X.n_rows; ++r) {
            size_t c = static_cast<size_t>(X.labels[r]);
            w[r] = c < params.class_weights.size() ? params.class_weights[c] : 1.0;
        }
    }
    return w;
}

RandomForest train_forest_impl(const FeatureMatrix& X, const std::vector<std::string>& classes,
                               const std::vector<FeatureId>& candidates, const ForestParams& params,
                               bool parallel) {
    if (X.n_rows == 0) throw error(errc::empty_input, "cannot train on an empty matrix");
    for (FeatureId f : candidates)
        if (!X.defined[static_cast<size_t>(f)])
            throw error(errc::undefined_feature,
                        std::string("candidate feature undefined at this context: ") + feature_name(f));

    RandomForest forest;
    forest.classes = classes;
    forest.features = candidates;
    forest.params = params;
    forest.trees.resize(params.n_trees);

    std::vector<double> weights = row_weights(X, params);
    auto build_one = [&](size_t t) {
        TreeBuilder builder(X, weights, candidates, params, substream_seed(params.seed, t));
        forest.trees[t] = builder.build();
    };

    if (parallel) {
        std::exception_ptr err = nullptr;
#pragma omp parallel for schedule(dynamic)
        for (long t = 0; t < static_cast<long>(params.n_trees); ++t) {
            try {
                build_one(static_cast<size_t>(t));
            } catch (...) {
#pragma omp critical
                if (!err) err = std::current_exception();
            }
        }
        if (err) std::rethrow_exception(err);
    } else {
        for (size_t t = 0; t < params.n_trees; ++t) build_one(t);
    }
    return forest;
}

} // namespace

DecisionTree train_tree(const FeatureMatrix& X, const std::vector<double>& sample_weights,
                        const std::vector<FeatureId>& candidates, const ForestParams& params,
                        uint64_t tree_seed) {
    if (X.n_rows == 0) throw error(errc::empty_input, "cannot train on an empty matrix");
    TreeBuilder builder(X, sample_weights, candidates, params, tree_seed);
    return builder.build();
}

RandomForest train_forest(const FeatureMatrix& X, const std::vector<std::string>& classes,
                          const std::vector<FeatureId>& candidates, const ForestParams& params) {
    return train_forest_impl(X, classes, candidates, params, true);
}

RandomForest train_forest_reference(const FeatureMatrix& X, const std::vector<std::string>& classes,
                                    const std::vector<FeatureId>& candidates,
                                    const ForestParams& params) {
    return train_forest_impl(X, classes, candidates, params, false);
}

Prediction predict_tree(const DecisionTree& tree, const FeatureVector& x) {
    const TreeNode* node = tree.root.get();
    while (!node->is_leaf) {
        if (!x.is_defined(node->feature))
            throw error(errc::undefined_feature,
                        std::string("undefined feature in prediction: ") + feature_name(node->feature));
        double v = static_cast<double>(x[node->feature]);
        node = v <= node->threshold ? node->left.get() : node->right.get();
    }
    return Prediction{node->label, node->certainty};
}

Prediction predict(const RandomForest& forest, const FeatureVector& x) {
    size_t n_classes = forest.classes.size();
    std::vector<size_t> votes(n_classes, 0);
    std::vector<Prediction> outs;
    outs.reserve(forest.trees.size());
    for (const auto& tree : forest.trees) {
        Prediction p = predict_tree(tree, x);
        outs.push_back(p);
        ++votes[static_cast<size_t>(p.label)];
    }
    size_t winner = 0;
    for (size_t c = 1; c < n_classes; ++c)
        if (votes[c] > votes[winner]) winner = c;

    double cert_sum = 0.0;
    size_t cert_n = 0;
    for (const auto& p : outs) {
        if (static_cast<size_t>(p.label) == winner) {
            cert_sum += p.certainty;
            ++cert_n;
        }
    }
    return Prediction{static_cast<int>(winner), cert_n ? cert_sum / static_cast<double>(cert_n) : 0.0};
}

Prediction predict_row(const RandomForest& forest, const FeatureMatrix& X, size_t row) {
    FeatureVector x;
    for (size_t f = 0; f < kNumFeatures; ++f) {
        x.values[f] = X.at(row, f);
        x.defined[f] = X.defined[f];
    }
    return predict(forest, x);
}

std::vector<int> predict_all(const RandomForest& forest, const FeatureMatrix& X) {
    std::vector<int> out(X.n_rows);
    for (size_t r = 0; r < X.n_rows; ++r) out[r] = predict_row(forest, X, r).label;
    return out;
}

double f1_macro(const std::vector<int>& y_true, const std::vector<int>& y_pred, size_t n_classes) {
    if (y_true.size() != y_pred.size())
        throw error(errc::length_mismatch, "y_true and y_pred differ in length");
    std::vector<size_t> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);
    for (size_t i = 0; i < y_true.size(); ++i) {
        size_t t = static_cast<size_t>(y_true[i]);
        size_t p = static_cast<size_t>(y_pred[i]);
        if (t == p)
            ++tp[t];
        else {
            ++fp[p];
            ++fn[t];
        }
    }
    double sum = 0.0;
    size_t included = 0;
    for (size_t c = 0; c < n_classes; ++c) {
        if (tp[c] + fp[c] + fn[c] == 0) continue; // absent from both truth and predictions
        double precision = tp[c] + fp[c] ? static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fp[c]) : 0.0;
        double recall = tp[c] + fn[c] ? static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fn[c]) : 0.0;
        double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        sum += f1;
        ++included;
    }
    return included ? sum / static_cast<double>(included) : 0.0;
}

namespace {

FeatureMatrix take_rows(const FeatureMatrix& X, const std::vector<size_t>& rows) {
    FeatureMatrix out;
    out.n_rows = rows.size();
    out.defined = X.defined;
    out.values.reserve(rows.size() * kNumFeatures);
    out.labels.reserve(rows.size());
    for (size_t r : rows) {
        out.values.insert(out.values.end(), X.values.begin() + static_cast<long>(r * kNumFeatures),
                          X.values.begin() + static_cast<long>((r + 1) * kNumFeatures));
        out.labels.push_back(X.labels[r]);
    }
    return out;
}

} // namespace

std::vector<size_t> stratified_folds(const std::vector<int>& labels, size_t k, uint64_t seed) {
    size_t n_classes = 0;
    for (int label : labels) n_classes = std::max(n_classes, static_cast<size_t>(label) + 1);
    std::vector<std::vector<size_t>> by_class(n_classes);
    for (size_t r = 0; r < labels.size(); ++r)
        by_class[static_cast<size_t>(labels[r])].push_back(r);

    std::vector<size_t> fold_of(labels.size(), 0);
    for (size_t c = 0; c < n_classes; ++c) {
        auto rows = by_class[c];
        rng64 rng(substream_seed(seed, 0xf01d0000 + c));
        for (size_t i = rows.size(); i > 1; --i)
            std::swap(rows[i - 1], rows[rng.below(i)]);
        for (size_t i = 0; i < rows.size(); ++i) fold_of[rows[i]] = i % k;
    }
    return fold_of;
}

double stratified_cv(const FeatureMatrix& X, const std::vector<std::string>& classes,
                     const std::vector<FeatureId>& candidates, const ForestParams& params,
                     size_t k) {
    size_t n_classes = classes.size();
    std::vector<size_t> class_count(n_classes, 0);
    for (int label : X.labels) ++class_count[static_cast<size_t>(label)];

    size_t min_count = X.n_rows;
    for (size_t count : class_count)
        if (count) min_count = std::min(min_count, count);
    for (size_t count : class_count)
        if (count == 1) throw error(errc::too_few_samples, "a class has fewer than 2 samples");
    size_t k_eff = std::min(k, min_count);

    std::vector<size_t> fold_of = stratified_folds(X.labels, k_eff, params.seed);

    double total = 0.0;
    for (size_t fold = 0; fold < k_eff; ++fold) {
        std::vector<size_t> train_rows, test_rows;
        for (size_t r = 0; r < X.n_rows; ++r)
            (fold_of[r] == fold ? test_rows : train_rows).push_back(r);
        FeatureMatrix train = take_rows(X, train_rows);
        ForestParams fold_params = params;
        fold_params.seed = substream_seed(params.seed, 0xcf000000 + fold);
        RandomForest forest = train_forest(train, classes, candidates, fold_params);

        std::vector<int> y_true, y_pred;
        y_true.reserve(test_rows.size());
        y_pred.reserve(test_rows.size());
        for (size_t r : test_rows) {
            y_true.push_back(X.labels[r]);
            y_pred.push_back(predict_row(forest, X, r).label);
        }
        total += f1_macro(y_true, y_pred, n_classes);
    }
    return total / static_cast<double>(k_eff);
}

GridSearchResult grid_search(const FeatureMatrix& X, const std::vector<std::string>& classes,
                             const std::vector<FeatureId>& candidates,
                             const std::vector<ForestParams>& grid, size_t k) {
    if (grid.empty()) throw error(errc::empty_input, "empty parameter grid");
    GridSearchResult result;
    double best = -1.0;
    size_t best_i = 0;
    for (size_t i = 0; i < grid.size(); ++i) {
        double score = stratified_cv(X, classes, candidates, grid[i], k);
        if (score > best) {
            best = score;
            best_i = i;
        }
    }
    result.forest = train_forest(X, classes, candidates, grid[best_i]);
    result.cv_score = best;
    result.grid_index = best_i;
    return result;
}

namespace {

void accumulate_mdi(const TreeNode* node, double root_weight, std::vector<double>& acc) {
    if (node->is_leaf) return;
    double drop = node->node_weight * node->node_impurity -
                  node->left->node_weight * node->left->node_impurity -
                  node->right->node_weight * node->right->node_impurity;
    acc[static_cast<size_t>(node->feature)] += drop / root_weight;
    accumulate_mdi(node->left.get(), root_weight, acc);
    accumulate_mdi(node->right.get(), root_weight, acc);
}

} // namespace

std::vector<std::pair<FeatureId, double>> mdi_importance(const RandomForest& forest) {
    std::vector<double> acc(kNumFeatures, 0.0);
    for (const auto& tree : forest.trees) {
        std::vector<double> tree_acc(kNumFeatures, 0.0);
        if (tree.root && tree.root->node_weight > 0.0)
            accumulate_mdi(tree.root.get(), tree.root->node_weight, tree_acc);
        for (size_t f = 0; f < kNumFeatures; ++f) acc[f] += tree_acc[f];
    }
    for (double& v : acc) v /= static_cast<double>(forest.trees.size());

    double total = std::accumulate(acc.begin(), acc.end(), 0.0);
    std::vector<std::pair<FeatureId, double>> ranked;
    for (FeatureId f : forest.features)
        ranked.emplace_back(f, total > 0.0 ? acc[static_cast<size_t>(f)] / total : 0.0);
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return ranked;
}

FeatureSelection select_min_features(const FeatureMatrix& X, const std::vector<std::string>& classes,
                                     const ForestParams& params,
                                     const std::vector<std::pair<FeatureId, double>>& ranking,
                                     double thrS, size_t k) {
    FeatureSelection sel;
    double last_score = 0.0;
    for (size_t m = 1; m <= ranking.size(); ++m) {
        std::vector<FeatureId> prefix;
        prefix.reserve(m);
        for (size_t i = 0; i < m; ++i) prefix.push_back(ranking[i].first);
        ForestParams p = params;
        p.features_per_split = 0; // re-derive sqrt rule for the smaller set
        last_score = stratified_cv(X, classes, prefix, p, k);
        if (last_score >= thrS) {
            sel.features = prefix;
            sel.forest = train_forest(X, classes, prefix, p);
            sel.score = last_score;
            sel.reached_threshold = true;
            return sel;
        }
    }
    // No prefix reached the threshold: fall back to the full ranking.
    std::vector<FeatureId> full;
    for (const auto& [f, imp] : ranking) full.push_back(f);
    ForestParams p = params;
    p.features_per_split = 0;
    sel.features = full;
    sel.forest = train_forest(X, classes, full, p);
    sel.score = last_score;
    sel.reached_threshold = false;
    return sel;
}

namespace {

json node_to_json(const TreeNode* node) {
    json j;
    if (node->is_leaf) {
        j["label"] = node->label;
        j["certainty"] = node->certainty;
        j["support"] = node->support;
    } else {
        j["feature"] = static_cast<int>(node->feature);
        j["threshold"] = node->threshold;
        j["left"] = node_to_json(node->left.get());
        j["right"] = node_to_json(node->right.get());
    }
    return j;
}

std::unique_ptr<TreeNode> node_from_json(const json& j, size_t depth, size_t& max_depth) {
    max_depth = std::max(max_depth, depth);
    auto node = std::make_unique<TreeNode>();
    if (j.contains("feature")) {
        node->is_leaf = false;
        node->feature = static_cast<FeatureId>(j.at("feature").get<int>());
        node->threshold = j.at("threshold").get<double>();
        node->left = node_from_json(j.at("left"), depth + 1, max_depth);
        node->right = node_from_json(j.at("right"), depth + 1, max_depth);
    } else {
        node->is_leaf = true;
        node->label = j.at("label").get<int>();
        node->certainty = j.at("certainty").get<double>();
        node->support = j.at("support").get<double>();
    }
    return node;
}

json params_to_json(const ForestParams& p) {
    json j;
    j["n_trees"] = p.n_trees;
    j["max_depth"] = p.max_depth;
    j["class_weights"] = p.class_weights;
    j["features_per_split"] = p.features_per_split;
    j["bootstrap"] = p.bootstrap;
    j["seed"] = p.seed;
    return j;
}

ForestParams params_from_json(const json& j) {
    ForestParams p;
    p.n_trees = j.at("n_trees").get<size_t>();
    p.max_depth = j.at("max_depth").get<size_t>();
    p.class_weights = j.at("class_weights").get<std::vector<double>>();
    p.features_per_split = j.at("features_per_split").get<size_t>();
    p.bootstrap = j.at("bootstrap").get<bool>();
    p.seed = j.at("seed").get<uint64_t>();
    return p;
}

} // namespace

json forest_to_json_obj(const RandomForest& forest) {
    json j;
    j["classes"] = forest.classes;
    std::vector<int> feats;
    for (FeatureId f : forest.features) feats.push_back(static_cast<int>(f));
    j["features"] = feats;
    j["params"] = params_to_json(forest.params);
    json trees = json::array();
    for (const auto& tree : forest.trees) trees.push_back(node_to_json(tree.root.get()));
    j["trees"] = trees;
    return j;
}

RandomForest forest_from_json_obj(const json& j) {
    RandomForest forest;
    forest.classes = j.at("classes").get<std::vector<std::string>>();
    for (int f : j.at("features").get<std::vector<int>>())
        forest.features.push_back(static_cast<FeatureId>(f));
    forest.params = params_from_json(j.at("params"));
    for (const auto& tj : j.at("trees")) {
        DecisionTree tree;
        size_t depth = 0;
        tree.root = node_from_json(tj, 0, depth);
        tree.depth = depth;
        forest.trees.push_back(std::move(tree));
    }
    return forest;
}

std::string forest_to_json(const RandomForest& forest) { return forest_to_json_obj(forest).dump(2); }

RandomForest forest_from_json(const std::string& text) {
    json j = json::parse(text, nullptr, true);
    return forest_from_json_obj(j);
}

} // namespace flowforest
