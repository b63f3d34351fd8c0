#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "flowforest/feature_analysis.hpp"
#include "flowforest/features.hpp"
#include "flowforest/forest.hpp"

namespace flowforest {

/// Feature matrices for a list of packet-count contexts plus the
/// completed-flow matrix used for redundancy grouping.
struct ContextSlice {
    size_t packets = 0;
    FeatureMatrix matrix;
    std::vector<size_t> row_to_flow;
};

struct ContextDataset {
    std::vector<ContextSlice> contexts; // ascending packet counts
    FeatureMatrix full;                 // features of completed flows
    std::vector<std::string> classes;
    size_t n_flows = 0;
    std::vector<int> flow_labels;
    std::vector<size_t> flow_lengths;
};

/// Builds per-context matrices from packets. Contexts where no flow is long
/// enough are dropped.
ContextDataset build_context_dataset(const LabeledDataset& dataset,
                                     const std::vector<size_t>& packet_counts);

/// Builds the dataset from per-context feature CSVs (no packets). All CSVs
/// must agree on row count and labels; the highest context doubles as the
/// completed-flow matrix.
ContextDataset build_context_dataset_from_csv(const std::vector<std::pair<size_t, std::string>>& csvs);

struct TrainerConfig {
    std::vector<size_t> packet_counts; // default 1..20
    double thrS = 0.9;
    double thrC = 0.5;
    std::vector<size_t> grid_trees{4, 16};
    std::vector<size_t> grid_depths{4, 10};
    bool grid_balanced_weights = true; // adds inverse-frequency class weights
    size_t cv_folds = 6;
    size_t weight_horizon = 10;
    double dbscan_eps = 0.3;
    size_t dbscan_min_pts = 1;
    uint64_t seed = 1;

    TrainerConfig() {
        for (size_t p = 1; p <= 20; ++p) packet_counts.push_back(p);
    }
};

/// One accepted model: a forest active from `activation_count` packets on.
/// Reused models share the forest of an earlier entry.
struct ContextModel {
    size_t activation_count = 0;
    std::shared_ptr<const RandomForest> forest;
    std::vector<FeatureId> features;
    double score_at_extraction = 0.0;
    std::optional<size_t> reuse_of; // index of the originally extracted model
};

struct Classifier {
    std::vector<ContextModel> models; // strictly increasing activation counts
    double thrS = 0.0;
    double thrC = 0.0;
    std::vector<std::string> classes;

    /// Index of the model active at the given packet count, if any.
    std::optional<size_t> active_model(size_t packet_count) const;
};

struct ReportEntry {
    size_t packets = 0;
    std::string action; // extracted | reused | reapplied | searched | no_model
    double score = 0.0;
    std::optional<double> reapply_score;  // score that triggered the drop
    std::optional<double> best_old_score; // BestOldRF outcome at this context
    std::vector<FeatureId> features;
    TradeoffWeights weights;
};

struct TrainingReport {
    std::vector<ReportEntry> entries; // one per analyzed packet count
    FeatureGroups groups;
    bool no_model_found = false;
};

struct TrainResult {
    Classifier classifier;
    TrainingReport report;
};

/// Greedy extraction of context-dependent forests: group redundant features
/// once on completed flows, then alternate model search, feature
/// minimization, and longest-possible reapplication with fallback to the
/// best previously extracted model.
TrainResult train_classifier(const ContextDataset& data, const TrainerConfig& config);

/// Scores every previously extracted model on the given context, each on its
/// own feature set; undefined features score a model 0. Ties go to the
/// earliest extraction.
std::pair<size_t, double> best_old_rf(const std::vector<ContextModel>& extracted,
                                      const FeatureMatrix& context);

/// Training-set F1 of one model on a context matrix (0 when the model uses a
/// feature the context does not define).
double score_model(const RandomForest& forest, const FeatureMatrix& context, size_t n_classes);

struct ContextEval {
    size_t packets = 0;
    size_t classified_here = 0;
    size_t classified_cumulative = 0;
    double cumulative_f1 = 0.0; // over flows classified so far
};

struct EvaluationSummary {
    std::vector<ContextEval> contexts;
    size_t n_flows = 0;
    size_t classified_total = 0;
    double f1_classified = 0.0;
    size_t too_short = 0; // flows shorter than the first activation count
    size_t short_classified = 0;
};

/// Replays the acceptance rule over the dataset: each context attempts to
/// classify still-pending flows with the active model, accepting when the
/// certainty reaches thrC. With classify_short_flows the earliest model is
/// applied unconditionally to flows that end before its activation count.
EvaluationSummary evaluate_classifier(const Classifier& classifier, const ContextDataset& data,
                                      double thrC, bool classify_short_flows = false);

std::string classifier_to_json(const Classifier& classifier);
Classifier classifier_from_json(const std::string& text);

std::string report_to_json(const TrainingReport& report);
std::string report_to_csv(const TrainingReport& report);

} // namespace flowforest
