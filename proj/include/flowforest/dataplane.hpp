#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "flowforest/bitstring.hpp"
#include "flowforest/compiler.hpp"
#include "flowforest/packet.hpp"

namespace flowforest {

/// 32-bit FNV-1a over the canonical 13-byte 5-tuple layout; this is the flow
/// id stored in the table (collisions alias, as on the device).
uint32_t flow_id_hash(const FlowKey& key);

struct SwitchConfig {
    size_t rows = 4096;
    size_t probes = 3;
    uint64_t timeout_us = 5000000; // must stay below the ~8.39 s wrap horizon
    uint64_t seed = 1;
};

enum class VerdictKind {
    classified,
    pending_no_model,      // tracked, but no model active yet
    pending_low_certainty, // model applied, certainty below thrC
    unclassified_full,     // table full: forwarded with the unclassified flag
};

struct Verdict {
    VerdictKind kind = VerdictKind::pending_no_model;
    FlowKey key;
    uint64_t packet_index = 0; // global index in the replayed stream
    size_t flow_packet = 0;    // packet count within the flow slot
    int label = 0;
    uint32_t certainty_q = 0;
};

struct SwitchCounters {
    uint64_t classified = 0;
    uint64_t no_model_yet = 0;
    uint64_t table_full = 0;
    uint64_t evicted = 0;   // timed-out rows recycled for a new flow
    uint64_t hash_hits = 0; // lookups that found the flow already stored
};

struct SlotResult {
    enum class Kind { hit, allocated, full } kind = Kind::full;
    size_t index = 0;
};

struct TreeVote {
    int label = 0;
    uint32_t certainty_q = 0;
};

/// Register-array model of the inference pipeline: fixed row count, multi-
/// hash probing, timeout recycling, packed fixed-point feature updates, and
/// a staged table walk per packet.
class Switch {
public:
    Switch(DeploymentConfig config, SwitchConfig params);

    const DeploymentConfig& config() const { return config_; }
    const SwitchCounters& counters() const { return counters_; }
    size_t rows() const { return rows_.size(); }
    size_t row_bits() const { return config_.per_flow_bits(); }
    size_t flows_per_10mb() const { return config_.flows_per_10mb(); }

    SlotResult lookup_or_allocate(const FlowKey& key, uint64_t now_us);

    Verdict process_packet(const PacketRecord& packet);

    /// Applies every tree of one model to a packed feature string. Stateless
    /// features come from the packet, the packet count from its row field.
    std::vector<TreeVote> table_walk(size_t model_index, const bitstring& features,
                                     const PacketRecord& packet, uint64_t packet_count) const;

    size_t probe_index(const FlowKey& key, size_t probe) const;

private:
    struct FlowRow {
        bool valid = false;
        uint32_t flow_id = 0;
        uint32_t last_ts_units = 0; // 17 bits, units of 64 us
        uint8_t packet_count = 0;   // saturates at 127
        bitstring features;
    };

    uint64_t read_feature(const bitstring& features, const PacketRecord& packet,
                          uint64_t packet_count, FeatureId f) const;

    DeploymentConfig config_;
    SwitchConfig params_;
    std::vector<FlowRow> rows_;
    std::vector<uint32_t> probe_seeds_;
    SwitchCounters counters_;
    uint64_t packet_index_ = 0;
};

/// Integer vote aggregation: majority label (ties to the smallest id),
/// certainty = floor mean over the trees voting for the winner.
TreeVote aggregate_votes(const std::vector<TreeVote>& votes);

/// In-place quantized update of one packed feature string for one packet.
/// packet_count is the post-increment count (1 for the first packet); iat_us
/// carries the 64-us-granular delta derived from the row timestamp.
void update_feature_string(const DeploymentConfig& config, bitstring& features,
                           const PacketRecord& packet, uint64_t iat_us, uint64_t packet_count);

/// Mirror of the row update pipeline without the table machinery: folds the
/// first n packets of a flow through the same quantized update rules. Used
/// as the oracle for data-plane/software equivalence.
bitstring quantized_feature_string(const DeploymentConfig& config,
                                   std::span<const PacketRecord> packets);

struct PacketCountEval {
    size_t packets = 0;
    size_t classified_here = 0;
    size_t classified_cumulative = 0;
    double pct_cumulative = 0.0;
    double f1_cumulative = 0.0; // 0 when no labels were given
};

struct SimulationStats {
    uint64_t packets = 0;
    size_t flows_seen = 0;
    size_t classified_flows = 0;
    double classified_pct = 0.0;
    double f1_classified = 0.0; // against the label file, when given
    SwitchCounters counters;
    std::map<size_t, size_t> classified_at_count; // flow packet count -> flows
    std::vector<PacketCountEval> by_packet_count;
    size_t row_bits = 0;
    size_t rows = 0;
    size_t flows_per_10mb = 0;
    std::vector<Verdict> verdicts; // one per packet, replay order
};

/// Feeds a time-ordered packet stream through the switch and summarizes the
/// outcome. Labels (when non-empty) give the per-flow ground truth for F1.
SimulationStats replay(Switch& sw, std::span<const PacketRecord> packets,
                       const std::unordered_map<FlowKey, std::string, FlowKeyHash>& labels);

std::string stats_to_json(const SimulationStats& stats);
std::string verdicts_to_csv(const SimulationStats& stats,
                            const std::vector<std::string>& classes);

} // namespace flowforest
