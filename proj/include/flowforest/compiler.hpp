#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flowforest/context_trainer.hpp"
#include "flowforest/features.hpp"
#include "flowforest/forest.hpp"

namespace flowforest {

/// Fixed-point storage decision for one feature: value v is stored as
/// floor(v / 2^shift) in `bits` bits. Negative shifts scale values up for
/// sub-unit threshold resolution.
struct QuantSpec {
    FeatureId feature = FeatureId::iat_min;
    size_t bits = 1;
    int shift = 0;
    double t_min = 0.0;
    double t_max = 0.0;
    bool native = false; // fallback to native width (non-positive thresholds, stateless)
};

/// Derives (bits, shift) from the smallest and largest threshold the feature
/// is compared against, at relative comparison accuracy a. Counters use
/// a = 1 and t_min = 1. Non-positive thresholds fall back to the native
/// width with shift 0.
QuantSpec quantize_spec(FeatureId feature, const std::vector<double>& thresholds, double a);

uint64_t quant_max(size_t bits);

/// clamp(floor(v / 2^shift), 0, 2^bits - 1); negative shift is a left shift.
uint64_t quantize_value(uint64_t v, size_t bits, int shift);
uint64_t quantize_value(uint64_t v, const QuantSpec& spec);

/// Same grid for thresholds so that v > t iff v_q > t_q whenever the
/// relative margin is at least a.
uint64_t quantize_threshold(double t, size_t bits, int shift);
uint64_t quantize_threshold(double t, const QuantSpec& spec);

/// EWMA fields carry 2 extra fraction bits: stored at shift-2 in bits+2.
size_t storage_bits(const QuantSpec& spec);
int storage_shift(const QuantSpec& spec);

struct LayoutField {
    FeatureId feature = FeatureId::iat_min;
    size_t offset = 0;
    size_t width = 0;
};

/// Packed order of the stateful feature fields inside a flow row. The packet
/// count lives in its own 7-bit row field and stateless features come from
/// the current packet, so neither appears here.
struct BitLayout {
    std::vector<LayoutField> fields; // ascending FeatureId, contiguous
    size_t total_bits = 0;

    const LayoutField* find(FeatureId f) const;
};

BitLayout layout_features(const std::vector<QuantSpec>& specs);

/// One match&action entry: key (previous node id, previous comparison
/// result), action either the next comparison or a leaf verdict. `node` in
/// the action is the entry's own node id, used as the key of the next level.
struct TableEntry {
    uint32_t key_node = 0;
    bool key_result = false;
    bool is_leaf = false;
    uint32_t node = 0;
    // internal
    FeatureId feature = FeatureId::iat_min;
    uint64_t threshold_q = 0;
    // leaf
    int label = 0;
    uint32_t certainty_q = 0;
};

struct CompiledTree {
    std::vector<std::vector<TableEntry>> levels; // one table per level
};

struct CompiledModel {
    size_t activation_count = 0;
    std::vector<CompiledTree> trees;
};

struct HwLimits {
    size_t max_trees = 32;
    size_t max_depth = 20;
    size_t stages = 21; // sequential tables per tree (levels)
};

struct DeploymentConfig {
    BitLayout layout;
    std::vector<QuantSpec> quant; // every feature referenced by any model
    std::vector<CompiledModel> models;
    std::vector<std::pair<size_t, size_t>> model_switch; // packet count -> model
    uint32_t thrC_q = 0;
    double accuracy = 0.01;
    double thrS = 0.0; // carried over from the classifier for reporting
    HwLimits hw;
    std::vector<std::string> classes;

    std::optional<size_t> model_for(size_t packet_count) const;
    const QuantSpec* spec_for(FeatureId f) const;

    /// 32-bit flow id + 17-bit timestamp + 7-bit packet count + features.
    size_t per_flow_bits() const { return 49 + 7 + layout.total_bits; }
    size_t flows_per_10mb() const { return 80000000ull / per_flow_bits(); }
};

/// Tables for one tree, padded with leaf-propagation entries so every path
/// exits at level model_max_depth. Throws errc::depth_exceeded.
CompiledTree compile_tree(const DecisionTree& tree, size_t model_max_depth,
                          const std::vector<QuantSpec>& quant);

/// Whole-classifier compilation: thresholds are pooled per feature across
/// all models before sizing the fields. Throws errc::hardware_limit_exceeded
/// naming the violated dimension.
DeploymentConfig compile_classifier(const Classifier& classifier, double a, const HwLimits& hw);

std::string config_to_json(const DeploymentConfig& config);
DeploymentConfig config_from_json(const std::string& text); // errc::malformed_config

/// Human-readable table dump for debugging.
std::string config_table_dump(const DeploymentConfig& config);

} // namespace flowforest
