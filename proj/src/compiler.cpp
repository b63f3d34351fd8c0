#include "flowforest/compiler.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "flowforest/error.hpp"

namespace flowforest {

namespace {
using json = nlohmann::json;
} // namespace

uint64_t quant_max(size_t bits) {
    return bits >= 64 ? ~uint64_t{0} : (uint64_t{1} << bits) - 1;
}

QuantSpec quantize_spec(FeatureId feature, const std::vector<double>& thresholds, double a) {
    QuantSpec spec;
    spec.feature = feature;
    if (thresholds.empty())
        throw error(errc::empty_input,
                    std::string("no thresholds for feature ") + feature_name(feature));
    spec.t_min = *std::min_element(thresholds.begin(), thresholds.end());
    spec.t_max = *std::max_element(thresholds.begin(), thresholds.end());

    double t_min = spec.t_min;
    double t_max = spec.t_max;
    if (feature_kind(feature) == FeatureKind::counter) {
        a = 1.0; // counters hold integers and must count from 1
        t_min = 1.0;
        t_max = std::max(t_max, 1.0);
    }
    if (t_min <= 0.0 || a <= 0.0) {
        // Eq-based sizing assumes strictly positive thresholds.
        spec.native = true;
        spec.bits = feature_native_bits(feature);
        spec.shift = 0;
        return spec;
    }

    double grid = t_min * 0.5 * a;
    double b = std::floor(std::log2(2.0 * t_max / grid)) + 1.0;
    spec.bits = static_cast<size_t>(std::clamp(b, 1.0, 64.0));
    spec.shift = static_cast<int>(std::floor(std::log2(grid)));
    return spec;
}

uint64_t quantize_value(uint64_t v, size_t bits, int shift) {
    uint64_t max_q = quant_max(bits);
    if (shift >= 0) {
        uint64_t q = shift >= 64 ? 0 : v >> shift;
        return std::min(q, max_q);
    }
    size_t up = static_cast<size_t>(-shift);
    if (up >= 64 || v > (max_q >> up)) return max_q;
    return v << up;
}

uint64_t quantize_value(uint64_t v, const QuantSpec& spec) {
    return quantize_value(v, spec.bits, spec.shift);
}

uint64_t quantize_threshold(double t, size_t bits, int shift) {
    uint64_t max_q = quant_max(bits);
    if (t <= 0.0) return 0;
    double scaled = std::floor(std::ldexp(t, -shift));
    if (scaled >= static_cast<double>(max_q)) return max_q;
    return static_cast<uint64_t>(scaled);
}

uint64_t quantize_threshold(double t, const QuantSpec& spec) {
    return quantize_threshold(t, spec.bits, spec.shift);
}

size_t storage_bits(const QuantSpec& spec) {
    return feature_kind(spec.feature) == FeatureKind::ewma ? spec.bits + 2 : spec.bits;
}

int storage_shift(const QuantSpec& spec) {
    return feature_kind(spec.feature) == FeatureKind::ewma ? spec.shift - 2 : spec.shift;
}

const LayoutField* BitLayout::find(FeatureId f) const {
    for (const auto& field : fields)
        if (field.feature == f) return &field;
    return nullptr;
}

BitLayout layout_features(const std::vector<QuantSpec>& specs) {
    std::vector<QuantSpec> stateful;
    for (const auto& s : specs) {
        if (feature_kind(s.feature) == FeatureKind::stateless) continue;
        if (s.feature == FeatureId::pkt_count) continue; // dedicated row field
        stateful.push_back(s);
    }
    std::sort(stateful.begin(), stateful.end(),
              [](const QuantSpec& a, const QuantSpec& b) { return a.feature < b.feature; });

    BitLayout layout;
    size_t offset = 0;
    for (const auto& s : stateful) {
        size_t width = storage_bits(s);
        layout.fields.push_back(LayoutField{s.feature, offset, width});
        offset += width;
    }
    layout.total_bits = offset;
    return layout;
}

namespace {

const QuantSpec& find_spec(const std::vector<QuantSpec>& quant, FeatureId f) {
    for (const auto& s : quant)
        if (s.feature == f) return s;
    throw error(errc::missing_entry, std::string("no quantization spec for ") + feature_name(f));
}

uint32_t certainty_q8(double certainty) {
    double v = std::lround(certainty * 255.0);
    return static_cast<uint32_t>(std::clamp(v, 0.0, 255.0));
}

struct PendingNode {
    const TreeNode* node; // nullptr for a propagated leaf
    uint32_t parent_id;
    bool side;
    int label;       // valid when node is a propagated leaf
    uint32_t cert_q; // likewise
};

} // namespace

CompiledTree compile_tree(const DecisionTree& tree, size_t model_max_depth,
                          const std::vector<QuantSpec>& quant) {
    if (tree.depth > model_max_depth)
        throw error(errc::depth_exceeded, "tree depth " + std::to_string(tree.depth) +
                                              " exceeds " + std::to_string(model_max_depth));
    CompiledTree out;
    std::vector<PendingNode> current{PendingNode{tree.root.get(), 0, false, 0, 0}};
    for (size_t level = 0; level <= model_max_depth && !current.empty(); ++level) {
        std::vector<TableEntry> entries;
        std::vector<PendingNode> next;
        for (uint32_t id = 0; id < current.size(); ++id) {
            const PendingNode& pn = current[id];
            TableEntry e;
            e.key_node = pn.parent_id;
            e.key_result = pn.side;
            e.node = id;
            bool leaf = pn.node == nullptr || pn.node->is_leaf;
            if (leaf) {
                e.is_leaf = true;
                e.label = pn.node ? pn.node->label : pn.label;
                e.certainty_q = pn.node ? certainty_q8(pn.node->certainty) : pn.cert_q;
                if (level < model_max_depth)
                    next.push_back(PendingNode{nullptr, id, false, e.label, e.certainty_q});
            } else {
                e.is_leaf = false;
                e.feature = pn.node->feature;
                const QuantSpec& spec = find_spec(quant, pn.node->feature);
                e.threshold_q =
                    quantize_threshold(pn.node->threshold, storage_bits(spec), storage_shift(spec));
                next.push_back(PendingNode{pn.node->left.get(), id, false, 0, 0});
                next.push_back(PendingNode{pn.node->right.get(), id, true, 0, 0});
            }
            entries.push_back(e);
        }
        out.levels.push_back(std::move(entries));
        current = std::move(next);
    }
    return out;
}

std::optional<size_t> DeploymentConfig::model_for(size_t packet_count) const {
    std::optional<size_t> active;
    for (const auto& [count, model] : model_switch)
        if (count <= packet_count) active = model;
    return active;
}

const QuantSpec* DeploymentConfig::spec_for(FeatureId f) const {
    for (const auto& s : quant)
        if (s.feature == f) return &s;
    return nullptr;
}

DeploymentConfig compile_classifier(const Classifier& classifier, double a, const HwLimits& hw) {
    DeploymentConfig config;
    config.accuracy = a;
    config.thrS = classifier.thrS;
    config.hw = hw;
    config.classes = classifier.classes;
    config.thrC_q = static_cast<uint32_t>(std::max(0.0, std::ceil(classifier.thrC * 255.0)));

    // Pool thresholds per feature across all models.
    std::map<FeatureId, std::vector<double>> thresholds;
    std::set<FeatureId> stateless_used;
    for (const auto& model : classifier.models) {
        const RandomForest& forest = *model.forest;
        if (forest.trees.size() > hw.max_trees)
            throw error(errc::hardware_limit_exceeded,
                        "model has " + std::to_string(forest.trees.size()) + " trees, limit " +
                            std::to_string(hw.max_trees) + " (max_trees)");
        for (const auto& tree : forest.trees) {
            if (tree.depth > hw.max_depth)
                throw error(errc::hardware_limit_exceeded,
                            "tree depth " + std::to_string(tree.depth) + " exceeds limit " +
                                std::to_string(hw.max_depth) + " (max_depth)");
            if (tree.depth + 1 > hw.stages)
                throw error(errc::hardware_limit_exceeded,
                            "tree needs " + std::to_string(tree.depth + 1) +
                                " pipeline stages, limit " + std::to_string(hw.stages) +
                                " (stages)");
            std::vector<const TreeNode*> stack{tree.root.get()};
            while (!stack.empty()) {
                const TreeNode* n = stack.back();
                stack.pop_back();
                if (n->is_leaf) continue;
                thresholds[n->feature].push_back(n->threshold);
                stack.push_back(n->left.get());
                stack.push_back(n->right.get());
            }
        }
    }

    for (const auto& [feature, values] : thresholds) {
        if (feature_kind(feature) == FeatureKind::stateless || feature == FeatureId::pkt_count) {
            QuantSpec spec;
            spec.feature = feature;
            spec.bits = feature_native_bits(feature);
            spec.shift = 0;
            spec.native = true;
            spec.t_min = *std::min_element(values.begin(), values.end());
            spec.t_max = *std::max_element(values.begin(), values.end());
            config.quant.push_back(spec);
        } else {
            config.quant.push_back(quantize_spec(feature, values, a));
        }
    }
    config.layout = layout_features(config.quant);

    for (const auto& model : classifier.models) {
        CompiledModel cm;
        cm.activation_count = model.activation_count;
        size_t model_depth = 0;
        for (const auto& tree : model.forest->trees) model_depth = std::max(model_depth, tree.depth);
        for (const auto& tree : model.forest->trees)
            cm.trees.push_back(compile_tree(tree, model_depth, config.quant));
        config.models.push_back(std::move(cm));
    }

    for (size_t i = 0; i < classifier.models.size(); ++i)
        config.model_switch.emplace_back(classifier.models[i].activation_count, i);
    return config;
}

namespace {

json entry_to_json(const TableEntry& e) {
    json j;
    j["key"] = {{"node", e.key_node}, {"result", e.key_result}};
    j["node"] = e.node;
    if (e.is_leaf) {
        j["label"] = e.label;
        j["certainty_q"] = e.certainty_q;
    } else {
        j["feature"] = static_cast<int>(e.feature);
        j["threshold_q"] = e.threshold_q;
    }
    return j;
}

TableEntry entry_from_json(const json& j) {
    TableEntry e;
    e.key_node = j.at("key").at("node").get<uint32_t>();
    e.key_result = j.at("key").at("result").get<bool>();
    e.node = j.at("node").get<uint32_t>();
    if (j.contains("label")) {
        e.is_leaf = true;
        e.label = j.at("label").get<int>();
        e.certainty_q = j.at("certainty_q").get<uint32_t>();
    } else {
        e.is_leaf = false;
        e.feature = static_cast<FeatureId>(j.at("feature").get<int>());
        e.threshold_q = j.at("threshold_q").get<uint64_t>();
    }
    return e;
}

} // namespace

std::string config_to_json(const DeploymentConfig& config) {
    json j;
    j["schema_version"] = 1;
    j["accuracy"] = config.accuracy;
    j["thrS"] = config.thrS;
    j["thrC_q"] = config.thrC_q;
    j["classes"] = config.classes;
    j["hw"] = {{"max_trees", config.hw.max_trees},
               {"max_depth", config.hw.max_depth},
               {"stages", config.hw.stages}};

    json quant = json::array();
    for (const auto& s : config.quant)
        quant.push_back(json{{"feature", static_cast<int>(s.feature)},
                             {"bits", s.bits},
                             {"shift", s.shift},
                             {"t_min", s.t_min},
                             {"t_max", s.t_max},
                             {"native", s.native}});
    j["quant"] = quant;

    json fields = json::array();
    for (const auto& f : config.layout.fields)
        fields.push_back(json{{"feature", static_cast<int>(f.feature)},
                              {"offset", f.offset},
                              {"width", f.width}});
    j["layout"] = {{"fields", fields}, {"total_bits", config.layout.total_bits}};

    json switch_table = json::array();
    for (const auto& [count, model] : config.model_switch)
        switch_table.push_back(json{{"packet_count", count}, {"model", model}});
    j["model_switch"] = switch_table;

    json models = json::array();
    for (const auto& m : config.models) {
        json trees = json::array();
        for (const auto& tree : m.trees) {
            json levels = json::array();
            for (const auto& level : tree.levels) {
                json entries = json::array();
                for (const auto& e : level) entries.push_back(entry_to_json(e));
                levels.push_back(entries);
            }
            trees.push_back(levels);
        }
        models.push_back(json{{"activation_count", m.activation_count}, {"trees", trees}});
    }
    j["models"] = models;
    return j.dump(2) + "\n";
}

DeploymentConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw error(errc::malformed_config, std::string("bad deployment JSON: ") + e.what());
    }
    try {
        DeploymentConfig config;
        config.accuracy = j.at("accuracy").get<double>();
        config.thrS = j.at("thrS").get<double>();
        config.thrC_q = j.at("thrC_q").get<uint32_t>();
        config.classes = j.at("classes").get<std::vector<std::string>>();
        config.hw.max_trees = j.at("hw").at("max_trees").get<size_t>();
        config.hw.max_depth = j.at("hw").at("max_depth").get<size_t>();
        config.hw.stages = j.at("hw").at("stages").get<size_t>();
        for (const auto& sj : j.at("quant")) {
            QuantSpec s;
            s.feature = static_cast<FeatureId>(sj.at("feature").get<int>());
            s.bits = sj.at("bits").get<size_t>();
            s.shift = sj.at("shift").get<int>();
            s.t_min = sj.at("t_min").get<double>();
            s.t_max = sj.at("t_max").get<double>();
            s.native = sj.at("native").get<bool>();
            config.quant.push_back(s);
        }
        for (const auto& fj : j.at("layout").at("fields")) {
            LayoutField f;
            f.feature = static_cast<FeatureId>(fj.at("feature").get<int>());
            f.offset = fj.at("offset").get<size_t>();
            f.width = fj.at("width").get<size_t>();
            config.layout.fields.push_back(f);
        }
        config.layout.total_bits = j.at("layout").at("total_bits").get<size_t>();
        for (const auto& sj : j.at("model_switch"))
            config.model_switch.emplace_back(sj.at("packet_count").get<size_t>(),
                                             sj.at("model").get<size_t>());
        for (const auto& mj : j.at("models")) {
            CompiledModel m;
            m.activation_count = mj.at("activation_count").get<size_t>();
            for (const auto& tj : mj.at("trees")) {
                CompiledTree tree;
                for (const auto& lj : tj) {
                    std::vector<TableEntry> level;
                    for (const auto& ej : lj) level.push_back(entry_from_json(ej));
                    tree.levels.push_back(std::move(level));
                }
                m.trees.push_back(std::move(tree));
            }
            config.models.push_back(std::move(m));
        }
        return config;
    } catch (const json::exception& e) {
        throw error(errc::malformed_config, std::string("bad deployment JSON: ") + e.what());
    }
}

std::string config_table_dump(const DeploymentConfig& config) {
    std::string out;
    for (size_t mi = 0; mi < config.models.size(); ++mi) {
        const auto& m = config.models[mi];
        out += "model " + std::to_string(mi) + " (from " + std::to_string(m.activation_count) +
               " packets)\n";
        for (size_t ti = 0; ti < m.trees.size(); ++ti) {
            out += "  tree " + std::to_string(ti) + "\n";
            const auto& tree = m.trees[ti];
            for (size_t li = 0; li < tree.levels.size(); ++li) {
                out += "    level " + std::to_string(li) + "\n";
                for (const auto& e : tree.levels[li]) {
                    out += "      (" + std::to_string(e.key_node) + ", " +
                           (e.key_result ? "T" : "F") + ") -> ";
                    if (e.is_leaf)
                        out += "label " + std::to_string(e.label) + " certainty " +
                               std::to_string(e.certainty_q);
                    else
                        out += "node " + std::to_string(e.node) + ", " +
                               feature_name(e.feature) + " > " + std::to_string(e.threshold_q);
                    out += "\n";
                }
            }
        }
    }
    return out;
}

} // namespace flowforest
