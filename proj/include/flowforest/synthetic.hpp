#pragma once

#include <cstdint>
#include <unordered_map>

#include "flowforest/context_trainer.hpp"
#include "flowforest/packet.hpp"

namespace flowforest {

/// Feature-level dataset with phase-dependent informative features: one
/// feature separates the classes per phase (packet length average, then
/// minimum inter-arrival time, then duration, then the length average
/// again), plus four columns statistically independent of the labels.
struct PhaseDatasetConfig {
    size_t flows_per_class = 200;
    size_t classes = 3;
    size_t contexts = 9;
    uint64_t seed = 7;
};

ContextDataset synthetic_phase_dataset(const PhaseDatasetConfig& config);

/// The four label-independent columns of the phase dataset.
const std::vector<FeatureId>& phase_dataset_noise_features();

/// Packet-level two-class trace: classes differ by inter-arrival time and
/// packet length distributions with wide margins.
struct TraceConfig {
    size_t flows = 5000;
    size_t min_packets = 8;
    size_t max_packets = 12;
    uint64_t span_us = 60000000; // flow start times spread over this window
    uint64_t seed = 7;
};

struct SyntheticTrace {
    std::vector<PacketRecord> packets; // time-ordered
    std::unordered_map<FlowKey, std::string, FlowKeyHash> labels;
};

SyntheticTrace synthetic_two_class_trace(const TraceConfig& config);

} // namespace flowforest
