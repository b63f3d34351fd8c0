#include "flowforest/features.hpp"

#include <charconv>
#include <sstream>

#include "flowforest/error.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace flowforest {

namespace {

struct FeatureInfo {
    const char* name;
    FeatureKind kind;
    size_t min_packets;
    size_t native_bits;
};

// Order must match FeatureId.
constexpr FeatureInfo kFeatures[kNumFeatures] = {
    {"iat_min", FeatureKind::min, 2, 32},
    {"iat_max", FeatureKind::max, 2, 32},
    {"iat_avg", FeatureKind::ewma, 3, 32},
    {"len_min", FeatureKind::min, 1, 16},
    {"len_max", FeatureKind::max, 1, 16},
    {"len_avg", FeatureKind::ewma, 1, 16},
    {"len_total", FeatureKind::sum, 1, 32},
    {"pkt_count", FeatureKind::counter, 1, 7},
    {"syn_count", FeatureKind::counter, 1, 7},
    {"ack_count", FeatureKind::counter, 1, 7},
    {"psh_count", FeatureKind::counter, 1, 7},
    {"fin_count", FeatureKind::counter, 1, 7},
    {"rst_count", FeatureKind::counter, 1, 7},
    {"ece_count", FeatureKind::counter, 1, 7},
    {"duration", FeatureKind::duration, 1, 32},
    {"src_port", FeatureKind::stateless, 1, 16},
    {"dst_port", FeatureKind::stateless, 1, 16},
    {"current_len", FeatureKind::stateless, 1, 16},
};

const FeatureInfo& info(FeatureId id) { return kFeatures[static_cast<size_t>(id)]; }

uint64_t saturating_count(uint64_t v) { return v >= kCounterMax ? kCounterMax : v; }

} // namespace

FeatureKind feature_kind(FeatureId id) { return info(id).kind; }
const char* feature_name(FeatureId id) { return info(id).name; }
size_t feature_min_packets(FeatureId id) { return info(id).min_packets; }
size_t feature_native_bits(FeatureId id) { return info(id).native_bits; }

FeatureId feature_from_name(const std::string& name) {
    for (size_t i = 0; i < kNumFeatures; ++i)
        if (name == kFeatures[i].name) return static_cast<FeatureId>(i);
    throw error(errc::malformed_csv, "unknown feature name: " + name);
}

size_t feature_planning_bits(FeatureId id) {
    const auto& f = info(id);
    switch (f.kind) {
        case FeatureKind::stateless: return 0;
        case FeatureKind::counter: return 7;
        case FeatureKind::ewma: return f.native_bits + 2;
        default: return f.native_bits;
    }
}

FeatureState init_state(const PacketRecord& first) {
    FeatureState s;
    s.first_ts_us = first.timestamp_us;
    s.last_ts_us = first.timestamp_us;
    s.pkt_count = 1;
    s.len_min = first.length;
    s.len_max = first.length;
    s.len_avg = first.length; // EWMA base case
    s.len_total = first.length;
    const uint8_t bits[6] = {tcp_flag::syn, tcp_flag::ack, tcp_flag::psh,
                             tcp_flag::fin, tcp_flag::rst, tcp_flag::ece};
    for (size_t i = 0; i < 6; ++i)
        s.flag_counts[i] = (first.tcp_flags & bits[i]) ? 1 : 0;
    s.duration_us = 0;
    return s;
}

FeatureState update_state(const FeatureState& state, const PacketRecord& packet) {
    if (packet.timestamp_us < state.last_ts_us)
        throw error(errc::non_monotonic_timestamp, "packet timestamp went backwards");

    FeatureState s = state;
    uint64_t iat = packet.timestamp_us - state.last_ts_us;
    if (state.pkt_count == 1) {
        s.iat_min = iat;
        s.iat_max = iat;
        s.iat_avg = iat; // EWMA base case for the IAT stream
    } else {
        s.iat_min = std::min(s.iat_min, iat);
        s.iat_max = std::max(s.iat_max, iat);
        s.iat_avg = ewma_update(s.iat_avg, iat);
    }
    s.len_min = std::min(s.len_min, static_cast<uint64_t>(packet.length));
    s.len_max = std::max(s.len_max, static_cast<uint64_t>(packet.length));
    s.len_avg = ewma_update(s.len_avg, packet.length);
    s.len_total += packet.length;
    s.pkt_count = saturating_count(s.pkt_count + 1);
    const uint8_t bits[6] = {tcp_flag::syn, tcp_flag::ack, tcp_flag::psh,
                             tcp_flag::fin, tcp_flag::rst, tcp_flag::ece};
    for (size_t i = 0; i < 6; ++i)
        if (packet.tcp_flags & bits[i]) s.flag_counts[i] = saturating_count(s.flag_counts[i] + 1);
    s.duration_us = packet.timestamp_us - state.first_ts_us;
    s.last_ts_us = packet.timestamp_us;
    return s;
}

FeatureVector feature_vector(const FeatureState& state, const PacketRecord& current) {
    FeatureVector v;
    auto put = [&](FeatureId id, uint64_t value) {
        size_t i = static_cast<size_t>(id);
        v.values[i] = value;
        v.defined[i] = state.pkt_count >= feature_min_packets(id);
    };
    put(FeatureId::iat_min, state.iat_min);
    put(FeatureId::iat_max, state.iat_max);
    put(FeatureId::iat_avg, state.iat_avg);
    put(FeatureId::len_min, state.len_min);
    put(FeatureId::len_max, state.len_max);
    put(FeatureId::len_avg, state.len_avg);
    put(FeatureId::len_total, state.len_total);
    put(FeatureId::pkt_count, state.pkt_count);
    put(FeatureId::syn_count, state.flag_counts[0]);
    put(FeatureId::ack_count, state.flag_counts[1]);
    put(FeatureId::psh_count, state.flag_counts[2]);
    put(FeatureId::fin_count, state.flag_counts[3]);
    put(FeatureId::rst_count, state.flag_counts[4]);
    put(FeatureId::ece_count, state.flag_counts[5]);
    put(FeatureId::duration, state.duration_us);
    put(FeatureId::src_port, current.src_port);
    put(FeatureId::dst_port, current.dst_port);
    put(FeatureId::current_len, current.length);
    return v;
}

FeatureVector subflow_features(const Flow& flow, size_t n) {
    if (flow.packets.empty()) throw error(errc::empty_input, "flow has no packets");
    size_t take = std::min(n, flow.packets.size());
    FeatureState state = init_state(flow.packets[0]);
    for (size_t i = 1; i < take; ++i) state = update_state(state, flow.packets[i]);
    return feature_vector(state, flow.packets[take - 1]);
}

namespace {

ExtractResult extract_impl(const LabeledDataset& dataset, size_t n, bool parallel) {
    ExtractResult result;
    std::vector<size_t> eligible;
    for (size_t i = 0; i < dataset.flows.size(); ++i) {
        if (dataset.flows[i].packets.size() >= n)
            eligible.push_back(i);
        else
            ++result.short_flows;
    }
    if (eligible.empty())
        throw error(errc::empty_context, "no flow has " + std::to_string(n) + " packets");

    FeatureMatrix& m = result.matrix;
    m.n_rows = eligible.size();
    m.values.resize(m.n_rows * kNumFeatures);
    m.labels.resize(m.n_rows);
    for (size_t f = 0; f < kNumFeatures; ++f)
        m.defined[f] = n >= feature_min_packets(static_cast<FeatureId>(f));
    result.row_to_flow = eligible;

    auto fill_row = [&](size_t r) {
        const Flow& flow = dataset.flows[eligible[r]];
        FeatureVector v = subflow_features(flow, n);
        for (size_t f = 0; f < kNumFeatures; ++f) m.values[r * kNumFeatures + f] = v.values[f];
        m.labels[r] = class_id(dataset, *flow.label);
    };

    if (parallel) {
        std::exception_ptr err = nullptr;
#pragma omp parallel for schedule(static)
        for (long r = 0; r < static_cast<long>(m.n_rows); ++r) {
            try {
                fill_row(static_cast<size_t>(r));
            } catch (...) {
#pragma omp critical
                if (!err) err = std::current_exception();
            }
        }
        if (err) std::rethrow_exception(err);
    } else {
        for (size_t r = 0; r < m.n_rows; ++r) fill_row(r);
    }
    return result;
}

} // namespace

ExtractResult extract_dataset(const LabeledDataset& dataset, size_t n) {
    return extract_impl(dataset, n, true);
}

ExtractResult extract_dataset_reference(const LabeledDataset& dataset, size_t n) {
    return extract_impl(dataset, n, false);
}

int class_id(const LabeledDataset& dataset, const std::string& label) {
    auto it = std::lower_bound(dataset.classes.begin(), dataset.classes.end(), label);
    if (it == dataset.classes.end() || *it != label)
        throw error(errc::malformed_csv, "label not in class list: " + label);
    return static_cast<int>(it - dataset.classes.begin());
}

std::string write_feature_csv(const FeatureMatrix& m, const std::vector<std::string>& classes) {
    std::string out;
    for (size_t f = 0; f < kNumFeatures; ++f) {
        out += kFeatures[f].name;
        out += ',';
    }
    out += "label\n";
    for (size_t r = 0; r < m.n_rows; ++r) {
        for (size_t f = 0; f < kNumFeatures; ++f) {
            if (m.defined[f]) out += std::to_string(m.at(r, f));
            out += ',';
        }
        out += classes[static_cast<size_t>(m.labels[r])];
        out += '\n';
    }
    return out;
}

FeatureCsv read_feature_csv(const std::string& text, size_t context_packets) {
    FeatureCsv result;
    FeatureMatrix& m = result.matrix;
    for (size_t f = 0; f < kNumFeatures; ++f)
        m.defined[f] = context_packets >= feature_min_packets(static_cast<FeatureId>(f));

    std::istringstream in(text);
    std::string line;
    std::vector<FeatureId> columns;
    bool header = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        size_t pos = 0;
        while (true) {
            size_t comma = line.find(',', pos);
            if (comma == std::string::npos) {
                fields.push_back(line.substr(pos));
                break;
            }
            fields.push_back(line.substr(pos, comma - pos));
            pos = comma + 1;
        }
        if (header) {
            if (fields.empty() || fields.back() != "label")
                throw error(errc::malformed_csv, "feature CSV must end with a label column");
            for (size_t i = 0; i + 1 < fields.size(); ++i)
                columns.push_back(feature_from_name(fields[i]));
            header = false;
            continue;
        }
        if (fields.size() != columns.size() + 1)
            throw error(errc::malformed_csv, "row width mismatch: " + line);
        std::array<uint64_t, kNumFeatures> row{};
        for (size_t i = 0; i < columns.size(); ++i) {
            const std::string& cell = fields[i];
            if (cell.empty()) continue; // undefined at this context
            uint64_t v = 0;
            auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (ec != std::errc{} || p != cell.data() + cell.size())
                throw error(errc::malformed_csv, "bad feature value: '" + cell + "'");
            row[static_cast<size_t>(columns[i])] = v;
        }
        m.values.insert(m.values.end(), row.begin(), row.end());
        result.row_labels.push_back(fields.back());
        ++m.n_rows;
    }
    if (header) throw error(errc::malformed_csv, "empty feature CSV");
    return result;
}

} // namespace flowforest
