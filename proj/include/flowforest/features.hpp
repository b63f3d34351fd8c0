#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "flowforest/packet.hpp"

namespace flowforest {

/// The 18 per-subflow features. Order is part of the interchange and bit
/// layout contracts; do not reorder.
enum class FeatureId : uint8_t {
    iat_min = 0,
    iat_max,
    iat_avg,
    len_min,
    len_max,
    len_avg,
    len_total,
    pkt_count,
    syn_count,
    ack_count,
    psh_count,
    fin_count,
    rst_count,
    ece_count,
    duration,
    src_port,
    dst_port,
    current_len,
};

constexpr size_t kNumFeatures = 18;

enum class FeatureKind : uint8_t { min, max, ewma, counter, sum, duration, stateless };

FeatureKind feature_kind(FeatureId id);
const char* feature_name(FeatureId id);
FeatureId feature_from_name(const std::string& name); // throws errc::malformed_csv

/// Packet count at which the feature first has a defined value.
/// IAT needs two packets, the IAT average three, everything else one.
size_t feature_min_packets(FeatureId id);

/// Planning width in bits for the trade-off metric m_m: counters 7, averages
/// field size + 2, stateless 0.
size_t feature_planning_bits(FeatureId id);

/// Native storage width used when quantization cannot apply (fallback) and
/// for stateless thresholds.
size_t feature_native_bits(FeatureId id);

/// Counters (packet count and TCP flag counts) saturate at 127.
constexpr uint64_t kCounterMax = 127;

/// alpha = 0.5 moving average: floor((prev + sample) / 2) via a right shift.
inline uint64_t ewma_update(uint64_t prev, uint64_t sample) { return (prev + sample) >> 1; }

/// Running per-flow statistics, updated packet by packet using only the
/// integer operations the data plane offers.
struct FeatureState {
    uint64_t first_ts_us = 0;
    uint64_t last_ts_us = 0;
    uint64_t pkt_count = 0; // saturates at 127
    uint64_t iat_min = 0;
    uint64_t iat_max = 0;
    uint64_t iat_avg = 0;
    uint64_t len_min = 0;
    uint64_t len_max = 0;
    uint64_t len_avg = 0;
    uint64_t len_total = 0;
    std::array<uint64_t, 6> flag_counts{}; // syn..ece, saturate at 127
    uint64_t duration_us = 0;
};

FeatureState init_state(const PacketRecord& first);

/// Applies one packet. Throws errc::non_monotonic_timestamp if the packet is
/// older than the state's last timestamp.
FeatureState update_state(const FeatureState& state, const PacketRecord& packet);

struct FeatureVector {
    std::array<uint64_t, kNumFeatures> values{};
    std::array<bool, kNumFeatures> defined{};

    uint64_t operator[](FeatureId id) const { return values[static_cast<size_t>(id)]; }
    bool is_defined(FeatureId id) const { return defined[static_cast<size_t>(id)]; }
};

/// Snapshot of state plus the stateless fields of the current packet.
FeatureVector feature_vector(const FeatureState& state, const PacketRecord& current);

/// Feature values for the first n packets of a flow (throws errc::empty_input
/// if the flow has no packets; callers pass flows with >= n packets).
FeatureVector subflow_features(const Flow& flow, size_t n);

/// Rows of per-subflow feature values. Definedness is uniform per column
/// because every row reflects the same packet count.
struct FeatureMatrix {
    size_t n_rows = 0;
    std::array<bool, kNumFeatures> defined{};
    std::vector<uint64_t> values; // n_rows * kNumFeatures, row-major
    std::vector<int> labels;      // class ids, one per row

    uint64_t at(size_t row, FeatureId f) const {
        return values[row * kNumFeatures + static_cast<size_t>(f)];
    }
    uint64_t at(size_t row, size_t col) const { return values[row * kNumFeatures + col]; }
};

struct ExtractResult {
    FeatureMatrix matrix;
    std::vector<size_t> row_to_flow; // matrix row -> index into dataset.flows
    size_t short_flows = 0;          // flows with fewer than n packets
};

/// Feature matrix at context n: one row per flow with >= n packets.
/// Throws errc::empty_context when no flow is long enough.
ExtractResult extract_dataset(const LabeledDataset& dataset, size_t n);

/// Plain-loop reference for the OpenMP kernel above; kept for equivalence
/// tests and the benchmark.
ExtractResult extract_dataset_reference(const LabeledDataset& dataset, size_t n);

int class_id(const LabeledDataset& dataset, const std::string& label);

/// CSV with feature-name header plus `label`; undefined columns are empty.
std::string write_feature_csv(const FeatureMatrix& m, const std::vector<std::string>& classes);

/// Parsed feature CSV. Labels come back as strings; class-id assignment is
/// done by the dataset builder so ids stay consistent across contexts.
struct FeatureCsv {
    FeatureMatrix matrix; // labels left empty
    std::vector<std::string> row_labels;
};
FeatureCsv read_feature_csv(const std::string& text, size_t context_packets);

} // namespace flowforest
