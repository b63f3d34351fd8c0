#include "flowforest/synthetic.hpp"

#include <algorithm>

#include "flowforest/rng.hpp"

namespace flowforest {

namespace {

// Phase layout over the 9 contexts: which feature separates the classes.
// The length average repeats in the last phase so a previously extracted
// model becomes reusable.
FeatureId phase_feature(size_t packets) {
    if (packets <= 2) return FeatureId::len_avg;
    if (packets <= 4) return FeatureId::iat_min;
    if (packets <= 6) return FeatureId::duration;
    return FeatureId::len_avg;
}

constexpr uint64_t kCenters[] = {1000, 5000, 9000, 13000, 17000, 21000};
constexpr uint64_t kBand = 300;     // half-width of a separable class band
constexpr uint64_t kMixLo = 700;    // collapsed phases draw uniformly here
constexpr uint64_t kMixSpan = 8600; // ... up to kMixLo + kMixSpan

const std::vector<FeatureId> kNoise{FeatureId::src_port, FeatureId::dst_port,
                                    FeatureId::current_len, FeatureId::ack_count};

uint64_t noise_value(FeatureId f, rng64& rng) {
    switch (f) {
        case FeatureId::src_port:
        case FeatureId::dst_port: return rng.range(1024, 65535);
        case FeatureId::current_len: return rng.range(60, 1500);
        default: return rng.range(0, 127);
    }
}

} // namespace

const std::vector<FeatureId>& phase_dataset_noise_features() { return kNoise; }

ContextDataset synthetic_phase_dataset(const PhaseDatasetConfig& config) {
    ContextDataset data;
    for (size_t c = 0; c < config.classes; ++c) data.classes.push_back("class" + std::to_string(c));
    data.n_flows = config.classes * config.flows_per_class;
    data.flow_lengths.assign(data.n_flows, config.contexts);
    for (size_t i = 0; i < data.n_flows; ++i)
        data.flow_labels.push_back(static_cast<int>(i % config.classes));

    std::vector<size_t> identity(data.n_flows);
    for (size_t i = 0; i < identity.size(); ++i) identity[i] = i;

    rng64 rng(config.seed);
    const std::vector<FeatureId> informative{FeatureId::len_avg, FeatureId::iat_min,
                                             FeatureId::duration};

    for (size_t p = 1; p <= config.contexts; ++p) {
        FeatureMatrix m;
        m.n_rows = data.n_flows;
        m.values.assign(m.n_rows * kNumFeatures, 0);
        m.labels = data.flow_labels;
        for (size_t f = 0; f < kNumFeatures; ++f)
            m.defined[f] = p >= feature_min_packets(static_cast<FeatureId>(f));

        FeatureId active = phase_feature(p);
        for (size_t r = 0; r < m.n_rows; ++r) {
            size_t cls = static_cast<size_t>(data.flow_labels[r]);
            m.values[r * kNumFeatures + static_cast<size_t>(FeatureId::pkt_count)] = p;
            for (FeatureId f : informative) {
                if (!m.defined[static_cast<size_t>(f)]) continue;
                uint64_t v;
                if (f == active) {
                    uint64_t center = kCenters[cls];
                    v = rng.range(center - kBand, center + kBand);
                } else {
                    v = rng.range(kMixLo, kMixLo + kMixSpan);
                }
                m.values[r * kNumFeatures + static_cast<size_t>(f)] = v;
            }
            for (FeatureId f : kNoise)
                m.values[r * kNumFeatures + static_cast<size_t>(f)] = noise_value(f, rng);
        }
        data.contexts.push_back(ContextSlice{p, std::move(m), identity});
    }
    data.full = data.contexts.back().matrix;
    return data;
}

SyntheticTrace synthetic_two_class_trace(const TraceConfig& config) {
    SyntheticTrace trace;
    rng64 rng(config.seed);

    struct Pending {
        PacketRecord p;
        uint64_t order; // stable tie-break for equal timestamps
    };
    std::vector<Pending> all;
    uint64_t order = 0;

    for (size_t i = 0; i < config.flows; ++i) {
        size_t cls = i % 2;
        FlowKey key;
        key.src_ip = 0x0a000000u | static_cast<uint32_t>(i + 1); // 10.x.y.z, unique per flow
        key.dst_ip = 0xc0a80101u;                                // 192.168.1.1
        key.src_port = static_cast<uint16_t>(1024 + (i % 60000));
        key.dst_port = 443;
        key.protocol = 6;
        trace.labels[key] = cls == 0 ? "chat" : "bulk";

        size_t n_packets = rng.range(config.min_packets, config.max_packets);
        uint64_t t = rng.below(config.span_us);
        for (size_t k = 0; k < n_packets; ++k) {
            PacketRecord p;
            p.timestamp_us = t;
            p.src_ip = key.src_ip;
            p.dst_ip = key.dst_ip;
            p.src_port = key.src_port;
            p.dst_port = key.dst_port;
            p.protocol = key.protocol;
            p.length = cls == 0 ? rng.range(60, 200) : rng.range(800, 1500);
            p.tcp_flags = k == 0 ? tcp_flag::syn : tcp_flag::ack;
            all.push_back(Pending{p, order++});
            t += cls == 0 ? rng.range(1500, 2500) : rng.range(50000, 70000);
        }
    }

    std::sort(all.begin(), all.end(), [](const Pending& a, const Pending& b) {
        if (a.p.timestamp_us != b.p.timestamp_us) return a.p.timestamp_us < b.p.timestamp_us;
        return a.order < b.order;
    });
    trace.packets.reserve(all.size());
    for (const auto& pending : all) trace.packets.push_back(pending.p);
    return trace;
}

} // namespace flowforest
