#include "flowforest/context_trainer.hpp"

#include <algorithm>
#include <deque>
#include <set>

#include <nlohmann/json.hpp>

#include "flowforest/error.hpp"
#include "flowforest/rng.hpp"
#include "json_io.hpp"

namespace flowforest {

namespace {

using json = nlohmann::json;

std::vector<int> dataset_labels(const LabeledDataset& dataset) {
    std::vector<int> labels;
    labels.reserve(dataset.flows.size());
    for (const auto& flow : dataset.flows) labels.push_back(class_id(dataset, *flow.label));
    return labels;
}

} // namespace

ContextDataset build_context_dataset(const LabeledDataset& dataset,
                                     const std::vector<size_t>& packet_counts) {
    ContextDataset out;
    out.classes = dataset.classes;
    out.n_flows = dataset.flows.size();
    out.flow_labels = dataset_labels(dataset);
    for (const auto& flow : dataset.flows) out.flow_lengths.push_back(flow.packets.size());

    for (size_t p : packet_counts) {
        try {
            ExtractResult res = extract_dataset(dataset, p);
            out.contexts.push_back(
                ContextSlice{p, std::move(res.matrix), std::move(res.row_to_flow)});
        } catch (const error& e) {
            if (e.code() != errc::empty_context) throw;
            // nothing reaches this packet count; ignore the context
        }
    }

    // Completed-flow matrix: fold every flow to its end. A column counts as
    // defined only when every flow defines it.
    FeatureMatrix& full = out.full;
    full.n_rows = dataset.flows.size();
    full.values.resize(full.n_rows * kNumFeatures);
    full.labels = out.flow_labels;
    std::array<bool, kNumFeatures> all_defined{};
    all_defined.fill(true);
    for (size_t i = 0; i < dataset.flows.size(); ++i) {
        const Flow& flow = dataset.flows[i];
        FeatureVector v = subflow_features(flow, flow.packets.size());
        for (size_t f = 0; f < kNumFeatures; ++f) {
            full.values[i * kNumFeatures + f] = v.values[f];
            if (!v.defined[f]) all_defined[f] = false;
        }
    }
    full.defined = all_defined;
    return out;
}

ContextDataset build_context_dataset_from_csv(
    const std::vector<std::pair<size_t, std::string>>& csvs) {
    if (csvs.empty()) throw error(errc::empty_input, "no feature CSVs given");
    ContextDataset out;

    std::vector<std::pair<size_t, FeatureCsv>> parsed;
    for (const auto& [p, text] : csvs) parsed.emplace_back(p, read_feature_csv(text, p));
    std::sort(parsed.begin(), parsed.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    const auto& first_labels = parsed.front().second.row_labels;
    for (const auto& [p, csv] : parsed) {
        if (csv.row_labels != first_labels)
            throw error(errc::malformed_csv,
                        "feature CSVs must cover the same flows in the same order");
    }

    std::vector<std::string> classes = first_labels;
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    out.classes = classes;
    out.n_flows = first_labels.size();
    size_t max_p = parsed.back().first;
    out.flow_lengths.assign(out.n_flows, max_p);

    auto label_id = [&](const std::string& s) {
        return static_cast<int>(std::lower_bound(classes.begin(), classes.end(), s) -
                                classes.begin());
    };
    for (const auto& s : first_labels) out.flow_labels.push_back(label_id(s));

    std::vector<size_t> identity(out.n_flows);
    for (size_t i = 0; i < identity.size(); ++i) identity[i] = i;

    for (auto& [p, csv] : parsed) {
        csv.matrix.labels = out.flow_labels;
        out.contexts.push_back(ContextSlice{p, std::move(csv.matrix), identity});
    }
    out.full = out.contexts.back().matrix; // highest context stands in for completed flows
    return out;
}

std::optional<size_t> Classifier::active_model(size_t packet_count) const {
    std::optional<size_t> active;
    for (size_t i = 0; i < models.size(); ++i)
        if (models[i].activation_count <= packet_count) active = i;
    return active;
}

double score_model(const RandomForest& forest, const FeatureMatrix& context, size_t n_classes) {
    for (FeatureId f : forest.features)
        if (!context.defined[static_cast<size_t>(f)]) return 0.0;
    std::vector<int> pred = predict_all(forest, context);
    return f1_macro(context.labels, pred, n_classes);
}

std::pair<size_t, double> best_old_rf(const std::vector<ContextModel>& extracted,
                                      const FeatureMatrix& context) {
    size_t best = 0;
    double best_score = -1.0;
    for (size_t i = 0; i < extracted.size(); ++i) {
        if (extracted[i].reuse_of) continue; // judge each distinct forest once
        double s = score_model(*extracted[i].forest, context,
                               extracted[i].forest->classes.size());
        if (s > best_score) {
            best_score = s;
            best = i;
        }
    }
    return {best, best_score};
}

namespace {

std::vector<double> balanced_weights(const FeatureMatrix& X, size_t n_classes) {
    std::vector<double> counts(n_classes, 0.0);
    for (int label : X.labels) counts[static_cast<size_t>(label)] += 1.0;
    std::vector<double> w(n_classes, 1.0);
    for (size_t c = 0; c < n_classes; ++c)
        if (counts[c] > 0.0)
            w[c] = static_cast<double>(X.n_rows) / (static_cast<double>(n_classes) * counts[c]);
    return w;
}

std::vector<ForestParams> make_grid(const TrainerConfig& config, const FeatureMatrix& X,
                                    size_t n_classes, size_t context_packets) {
    std::vector<ForestParams> grid;
    std::vector<std::vector<double>> weight_sets{{}};
    if (config.grid_balanced_weights) weight_sets.push_back(balanced_weights(X, n_classes));
    size_t gi = 0;
    for (size_t trees : config.grid_trees) {
        for (size_t depth : config.grid_depths) {
            for (const auto& weights : weight_sets) {
                ForestParams p;
                p.n_trees = trees;
                p.max_depth = depth;
                p.class_weights = weights;
                p.bootstrap = true;
                p.seed = substream_seed(config.seed, context_packets * 1024 + gi);
                grid.push_back(std::move(p));
                ++gi;
            }
        }
    }
    return grid;
}

// Groups restricted to this context, plus singletons for features that are
// defined here but were undefined on some completed flow (and therefore
// missing from the grouping).
FeatureGroups context_groups(const FeatureGroups& base,
                             const std::array<bool, kNumFeatures>& defined) {
    FeatureGroups g = restrict_groups(base, defined);
    std::set<FeatureId> covered;
    for (const auto& group : g.groups)
        for (FeatureId f : group) covered.insert(f);
    for (size_t f = 0; f < kNumFeatures; ++f) {
        FeatureId id = static_cast<FeatureId>(f);
        if (defined[f] && !covered.count(id)) g.groups.push_back({id});
    }
    return g;
}

ReportEntry* entry_for(TrainingReport& report, size_t packets) {
    for (auto& e : report.entries)
        if (e.packets == packets) return &e;
    report.entries.push_back(ReportEntry{});
    report.entries.back().packets = packets;
    return &report.entries.back();
}

} // namespace

TrainResult train_classifier(const ContextDataset& data, const TrainerConfig& config) {
    TrainResult result;
    Classifier& clf = result.classifier;
    TrainingReport& report = result.report;
    clf.thrS = config.thrS;
    clf.thrC = config.thrC;
    clf.classes = data.classes;
    size_t n_classes = data.classes.size();

    DistanceMatrix dist = mi_distance_matrix(data.full);
    report.groups = dbscan_cluster(dist, config.dbscan_eps, config.dbscan_min_pts);

    std::deque<size_t> pending; // indices into data.contexts
    for (size_t i = 0; i < data.contexts.size(); ++i) pending.push_back(i);

    std::set<FeatureId> used_features;

    while (!pending.empty()) {
        // ----- model search -----
        double s = 0.0;
        GridSearchResult search;
        const ContextSlice* ctx = nullptr;
        while (!pending.empty() && s <= config.thrS) {
            ctx = &data.contexts[pending.front()];
            pending.pop_front();

            TradeoffWeights weights = weight_schedule(clf.models.size(), config.weight_horizon);
            FeatureGroups groups = context_groups(report.groups, ctx->matrix.defined);
            std::vector<FeatureId> reps = select_representatives(groups, weights, used_features);

            std::vector<ForestParams> grid = make_grid(config, ctx->matrix, n_classes, ctx->packets);
            search = grid_search(ctx->matrix, data.classes, reps, grid, config.cv_folds);
            s = search.cv_score;

            ReportEntry* e = entry_for(report, ctx->packets);
            e->action = "searched";
            e->score = s;
            e->features = reps;
            e->weights = weights;
        }
        if (s <= config.thrS) {
            // packet counts exhausted before any model cleared the threshold
            if (ctx) entry_for(report, ctx->packets)->action = "no_model";
            break;
        }

        // ----- model optimization -----
        auto ranking = mdi_importance(search.forest);
        FeatureSelection sel = select_min_features(ctx->matrix, data.classes,
                                                   search.forest.params, ranking, config.thrS,
                                                   config.cv_folds);
        ContextModel model;
        model.activation_count = ctx->packets;
        if (sel.reached_threshold) {
            model.forest = std::make_shared<RandomForest>(std::move(sel.forest));
            model.features = sel.features;
            model.score_at_extraction = sel.score;
        } else {
            // keep the grid-search winner; it is the one that cleared thrS
            model.forest = std::make_shared<RandomForest>(std::move(search.forest));
            model.features = model.forest->features;
            model.score_at_extraction = s;
        }
        used_features.insert(model.features.begin(), model.features.end());
        s = model.score_at_extraction;

        ReportEntry* e = entry_for(report, ctx->packets);
        e->action = "extracted";
        e->score = s;
        e->features = model.features;
        clf.models.push_back(std::move(model));

        // ----- longest-possible model reapplication -----
        while (!pending.empty() && s > config.thrS) {
            size_t idx = pending.front();
            pending.pop_front();
            const ContextSlice& next = data.contexts[idx];
            const ContextModel& current = clf.models.back();
            s = score_model(*current.forest, next.matrix, n_classes);

            ReportEntry* re = entry_for(report, next.packets);
            if (s > config.thrS) {
                re->action = "reapplied";
                re->score = s;
                re->features = current.features;
                continue;
            }
            re->reapply_score = s;

            auto [old_idx, old_score] = best_old_rf(clf.models, next.matrix);
            re->best_old_score = old_score;
            if (old_score > config.thrS) {
                ContextModel reused;
                reused.activation_count = next.packets;
                reused.forest = clf.models[old_idx].forest;
                reused.features = clf.models[old_idx].features;
                reused.score_at_extraction = old_score;
                reused.reuse_of = old_idx;
                clf.models.push_back(std::move(reused));
                s = old_score; // keep reapplying the reused model
                re->action = "reused";
                re->score = old_score;
                re->features = clf.models.back().features;
            } else {
                pending.push_front(idx); // back to model search at this context
                break;
            }
        }
    }

    report.no_model_found = clf.models.empty();
    return result;
}

EvaluationSummary evaluate_classifier(const Classifier& classifier, const ContextDataset& data,
                                      double thrC, bool classify_short_flows) {
    EvaluationSummary summary;
    summary.n_flows = data.n_flows;
    size_t n_classes = data.classes.size();

    std::vector<int> assigned(data.n_flows, -1);
    size_t cumulative = 0;
    std::vector<int> y_true_cls, y_pred_cls;

    for (const auto& ctx : data.contexts) {
        auto active = classifier.active_model(ctx.packets);
        size_t here = 0;
        if (active) {
            const ContextModel& model = classifier.models[*active];
            for (size_t r = 0; r < ctx.matrix.n_rows; ++r) {
                size_t flow = ctx.row_to_flow[r];
                if (assigned[flow] >= 0) continue;
                Prediction p = predict_row(*model.forest, ctx.matrix, r);
                if (p.certainty >= thrC) {
                    assigned[flow] = p.label;
                    ++here;
                    y_true_cls.push_back(data.flow_labels[flow]);
                    y_pred_cls.push_back(p.label);
                }
            }
        }
        cumulative += here;
        ContextEval e;
        e.packets = ctx.packets;
        e.classified_here = here;
        e.classified_cumulative = cumulative;
        e.cumulative_f1 = y_true_cls.empty() ? 0.0 : f1_macro(y_true_cls, y_pred_cls, n_classes);
        summary.contexts.push_back(e);
    }

    if (!classifier.models.empty()) {
        size_t first_activation = classifier.models.front().activation_count;
        for (size_t i = 0; i < data.n_flows; ++i)
            if (data.flow_lengths[i] < first_activation) ++summary.too_short;

        if (classify_short_flows) {
            const ContextModel& first = classifier.models.front();
            for (const auto& ctx : data.contexts) {
                if (ctx.packets >= first_activation) break;
                bool usable = true;
                for (FeatureId f : first.features)
                    if (!ctx.matrix.defined[static_cast<size_t>(f)]) usable = false;
                if (!usable) continue;
                for (size_t r = 0; r < ctx.matrix.n_rows; ++r) {
                    size_t flow = ctx.row_to_flow[r];
                    // only flows that ended exactly here and were never classified
                    if (assigned[flow] >= 0 || data.flow_lengths[flow] != ctx.packets) continue;
                    Prediction p = predict_row(*first.forest, ctx.matrix, r);
                    assigned[flow] = p.label;
                    ++summary.short_classified;
                    y_true_cls.push_back(data.flow_labels[flow]);
                    y_pred_cls.push_back(p.label);
                }
            }
        }
    }

    summary.classified_total = 0;
    for (int a : assigned)
        if (a >= 0) ++summary.classified_total;
    summary.f1_classified =
        y_true_cls.empty() ? 0.0 : f1_macro(y_true_cls, y_pred_cls, n_classes);
    return summary;
}

namespace {

json model_to_json(const ContextModel& m) {
    json j;
    j["activation_count"] = m.activation_count;
    std::vector<int> feats;
    for (FeatureId f : m.features) feats.push_back(static_cast<int>(f));
    j["features"] = feats;
    j["score"] = m.score_at_extraction;
    if (m.reuse_of)
        j["reuse_of"] = *m.reuse_of;
    else
        j["forest"] = forest_to_json_obj(*m.forest);
    return j;
}

} // namespace

std::string classifier_to_json(const Classifier& classifier) {
    json j;
    j["schema_version"] = 1;
    j["thrS"] = classifier.thrS;
    j["thrC"] = classifier.thrC;
    j["classes"] = classifier.classes;
    json models = json::array();
    for (const auto& m : classifier.models) models.push_back(model_to_json(m));
    j["models"] = models;
    return j.dump(2) + "\n";
}

Classifier classifier_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw error(errc::malformed_config, std::string("bad classifier JSON: ") + e.what());
    }
    try {
        Classifier clf;
        clf.thrS = j.at("thrS").get<double>();
        clf.thrC = j.at("thrC").get<double>();
        clf.classes = j.at("classes").get<std::vector<std::string>>();
        for (const auto& mj : j.at("models")) {
            ContextModel m;
            m.activation_count = mj.at("activation_count").get<size_t>();
            for (int f : mj.at("features").get<std::vector<int>>())
                m.features.push_back(static_cast<FeatureId>(f));
            m.score_at_extraction = mj.at("score").get<double>();
            if (mj.contains("reuse_of")) {
                size_t src = mj.at("reuse_of").get<size_t>();
                if (src >= clf.models.size())
                    throw error(errc::malformed_config, "reuse_of points past the model list");
                m.reuse_of = src;
                m.forest = clf.models[src].forest;
            } else {
                m.forest = std::make_shared<RandomForest>(forest_from_json_obj(mj.at("forest")));
            }
            clf.models.push_back(std::move(m));
        }
        return clf;
    } catch (const json::exception& e) {
        throw error(errc::malformed_config, std::string("bad classifier JSON: ") + e.what());
    }
}

namespace {

json entry_to_json(const ReportEntry& e) {
    json j;
    j["packets"] = e.packets;
    j["action"] = e.action;
    j["score"] = e.score;
    if (e.reapply_score) j["reapply_score"] = *e.reapply_score;
    if (e.best_old_score) j["best_old_score"] = *e.best_old_score;
    json feats = json::array();
    for (FeatureId f : e.features) feats.push_back(feature_name(f));
    j["features"] = feats;
    j["weights"] = {{"w_m", e.weights.w_m}, {"w_c", e.weights.w_c}, {"w_d", e.weights.w_d}};
    return j;
}

} // namespace

std::string report_to_json(const TrainingReport& report) {
    json j;
    j["schema_version"] = 1;
    j["no_model_found"] = report.no_model_found;
    json entries = json::array();
    for (const auto& e : report.entries) entries.push_back(entry_to_json(e));
    j["contexts"] = entries;
    json groups = json::array();
    for (const auto& g : report.groups.groups) {
        json names = json::array();
        for (FeatureId f : g) names.push_back(feature_name(f));
        groups.push_back(names);
    }
    j["groups"] = groups;
    return j.dump(2) + "\n";
}

std::string report_to_csv(const TrainingReport& report) {
    std::string out = "packets,action,score,reapply_score,best_old_score,features,w_m,w_c,w_d\n";
    for (const auto& e : report.entries) {
        out += std::to_string(e.packets) + ',' + e.action + ',' + std::to_string(e.score) + ',';
        if (e.reapply_score) out += std::to_string(*e.reapply_score);
        out += ',';
        if (e.best_old_score) out += std::to_string(*e.best_old_score);
        out += ',';
        for (size_t i = 0; i < e.features.size(); ++i) {
            if (i) out += '|';
            out += feature_name(e.features[i]);
        }
        out += ',' + std::to_string(e.weights.w_m) + ',' + std::to_string(e.weights.w_c) + ',' +
               std::to_string(e.weights.w_d) + '\n';
    }
    return out;
}

} // namespace flowforest
