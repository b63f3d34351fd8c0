#include "flowforest/dataplane.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "flowforest/error.hpp"
#include "flowforest/features.hpp"
#include "flowforest/rng.hpp"

namespace flowforest {

namespace {

constexpr uint32_t kTsMask = 0x1ffff; // 17-bit timestamp field
constexpr uint32_t kTsUnitShift = 6;  // stored in units of 64 us

uint32_t ts_units(uint64_t now_us) {
    return static_cast<uint32_t>(now_us >> kTsUnitShift) & kTsMask;
}

// Wrapping-aware age of a row timestamp, in 64 us units.
uint32_t ts_age(uint32_t now_units, uint32_t row_units) {
    return (now_units - row_units) & kTsMask;
}

// Murmur3 finalizer; avalanches the flow id with a per-probe seed.
uint32_t mix32(uint32_t h) {
    h ^= h >> 16;
    h *= 0x85ebca6bu;
    h ^= h >> 13;
    h *= 0xc2b2ae35u;
    h ^= h >> 16;
    return h;
}

} // namespace

uint32_t flow_id_hash(const FlowKey& key) {
    uint8_t bytes[13];
    key.to_bytes(bytes);
    uint32_t h = 0x811c9dc5u;
    for (uint8_t b : bytes) {
        h ^= b;
        h *= 0x01000193u;
    }
    return h;
}

Switch::Switch(DeploymentConfig config, SwitchConfig params)
    : config_(std::move(config)), params_(params) {
    if (params_.rows == 0) throw error(errc::usage, "switch needs at least one row");
    if (params_.probes == 0) throw error(errc::usage, "switch needs at least one hash probe");
    rows_.resize(params_.rows);
    for (auto& row : rows_) row.features = bitstring(config_.layout.total_bits);
    rng64 rng(params_.seed);
    for (size_t i = 0; i < params_.probes; ++i)
        probe_seeds_.push_back(static_cast<uint32_t>(rng.next()));
}

size_t Switch::probe_index(const FlowKey& key, size_t probe) const {
    uint32_t h = mix32(flow_id_hash(key) ^ probe_seeds_[probe]);
    return h % rows_.size();
}

SlotResult Switch::lookup_or_allocate(const FlowKey& key, uint64_t now_us) {
    uint32_t id = flow_id_hash(key);
    uint32_t now_units = ts_units(now_us);
    uint32_t timeout_units = static_cast<uint32_t>(params_.timeout_us >> kTsUnitShift);

    // Pass one: does any probed row already hold this flow id?
    for (size_t p = 0; p < params_.probes; ++p) {
        size_t idx = probe_index(key, p);
        if (rows_[idx].valid && rows_[idx].flow_id == id) {
            ++counters_.hash_hits;
            return SlotResult{SlotResult::Kind::hit, idx};
        }
    }
    // Pass two: first probed row that is empty or timed out.
    for (size_t p = 0; p < params_.probes; ++p) {
        size_t idx = probe_index(key, p);
        FlowRow& row = rows_[idx];
        bool timed_out = row.valid && ts_age(now_units, row.last_ts_units) > timeout_units;
        if (row.valid && !timed_out) continue;
        if (timed_out) ++counters_.evicted;
        row.valid = true;
        row.flow_id = id;
        row.last_ts_units = now_units;
        row.packet_count = 0;
        row.features.clear();
        return SlotResult{SlotResult::Kind::allocated, idx};
    }
    return SlotResult{SlotResult::Kind::full, 0};
}

namespace {

// Saturating add within a field of the given width.
uint64_t sat_add(uint64_t a, uint64_t b, uint64_t max_q) {
    uint64_t sum = a + b;
    if (sum < a || sum > max_q) return max_q;
    return sum;
}

} // namespace

void update_feature_string(const DeploymentConfig& config, bitstring& features,
                           const PacketRecord& packet, uint64_t iat_us, uint64_t packet_count) {
    bool first_packet = packet_count == 1;
    bool first_iat = packet_count == 2;
    for (const auto& field : config.layout.fields) {
        const QuantSpec* spec = config.spec_for(field.feature);
        if (!spec) continue;
        size_t bits = storage_bits(*spec);
        int shift = storage_shift(*spec);
        uint64_t max_q = quant_max(bits);
        FeatureKind kind = feature_kind(field.feature);

        bool iat_based = field.feature == FeatureId::iat_min ||
                         field.feature == FeatureId::iat_max ||
                         field.feature == FeatureId::iat_avg;
        if (iat_based && first_packet) continue; // no IAT sample yet

        uint64_t sample = 0;
        switch (field.feature) {
            case FeatureId::iat_min:
            case FeatureId::iat_max:
            case FeatureId::iat_avg: sample = iat_us; break;
            case FeatureId::len_min:
            case FeatureId::len_max:
            case FeatureId::len_avg:
            case FeatureId::len_total: sample = packet.length; break;
            case FeatureId::duration: sample = iat_us; break;
            case FeatureId::syn_count: sample = (packet.tcp_flags & tcp_flag::syn) ? 1 : 0; break;
            case FeatureId::ack_count: sample = (packet.tcp_flags & tcp_flag::ack) ? 1 : 0; break;
            case FeatureId::psh_count: sample = (packet.tcp_flags & tcp_flag::psh) ? 1 : 0; break;
            case FeatureId::fin_count: sample = (packet.tcp_flags & tcp_flag::fin) ? 1 : 0; break;
            case FeatureId::rst_count: sample = (packet.tcp_flags & tcp_flag::rst) ? 1 : 0; break;
            case FeatureId::ece_count: sample = (packet.tcp_flags & tcp_flag::ece) ? 1 : 0; break;
            default: continue;
        }

        uint64_t stored = features.get(field.offset, field.width);
        uint64_t q = quantize_value(sample, bits, shift);
        uint64_t next = stored;
        bool base_case = first_packet || (iat_based && first_iat);
        switch (kind) {
            case FeatureKind::min: next = base_case ? q : std::min(stored, q); break;
            case FeatureKind::max: next = base_case ? q : std::max(stored, q); break;
            case FeatureKind::ewma: next = base_case ? q : ((stored + q) >> 1); break;
            case FeatureKind::counter:
                if (sample) next = sat_add(stored, quantize_value(1, bits, shift), max_q);
                break;
            case FeatureKind::sum: next = sat_add(stored, q, max_q); break;
            case FeatureKind::duration:
                next = first_packet ? 0 : sat_add(stored, q, max_q);
                break;
            default: break;
        }
        features.set(field.offset, field.width, next);
    }
}

uint64_t Switch::read_feature(const bitstring& features, const PacketRecord& packet,
                              uint64_t packet_count, FeatureId f) const {
    switch (f) {
        case FeatureId::pkt_count: return packet_count;
        case FeatureId::src_port: return packet.src_port;
        case FeatureId::dst_port: return packet.dst_port;
        case FeatureId::current_len: return packet.length;
        default: break;
    }
    const LayoutField* field = config_.layout.find(f);
    if (!field)
        throw error(errc::missing_entry, std::string("feature not in layout: ") + feature_name(f));
    return features.get(field->offset, field->width);
}

std::vector<TreeVote> Switch::table_walk(size_t model_index, const bitstring& features,
                                         const PacketRecord& packet, uint64_t packet_count) const {
    const CompiledModel& model = config_.models.at(model_index);
    std::vector<TreeVote> votes;
    votes.reserve(model.trees.size());
    for (const auto& tree : model.trees) {
        uint32_t node = 0;
        bool result = false;
        TreeVote vote;
        bool have_leaf = false;
        for (const auto& level : tree.levels) {
            const TableEntry* match = nullptr;
            for (const auto& e : level) {
                if (e.key_node == node && e.key_result == result) {
                    match = &e;
                    break;
                }
            }
            if (!match) throw error(errc::missing_entry, "table walk found no matching entry");
            if (match->is_leaf) {
                vote.label = match->label;
                vote.certainty_q = match->certainty_q;
                have_leaf = true;
                node = match->node;
                result = false; // leaf propagation entries key on (id, false)
            } else {
                uint64_t v = read_feature(features, packet, packet_count, match->feature);
                result = v > match->threshold_q;
                node = match->node;
            }
        }
        if (!have_leaf) throw error(errc::missing_entry, "table walk ended without a leaf");
        votes.push_back(vote);
    }
    return votes;
}

TreeVote aggregate_votes(const std::vector<TreeVote>& votes) {
    if (votes.empty()) throw error(errc::empty_input, "no tree votes to aggregate");
    int max_label = 0;
    for (const auto& v : votes) max_label = std::max(max_label, v.label);
    std::vector<uint32_t> counts(static_cast<size_t>(max_label) + 1, 0);
    for (const auto& v : votes) ++counts[static_cast<size_t>(v.label)];
    size_t winner = 0;
    for (size_t c = 1; c < counts.size(); ++c)
        if (counts[c] > counts[winner]) winner = c;

    uint64_t sum = 0;
    uint64_t n = 0;
    for (const auto& v : votes) {
        if (static_cast<size_t>(v.label) == winner) {
            sum += v.certainty_q;
            ++n;
        }
    }
    return TreeVote{static_cast<int>(winner), static_cast<uint32_t>(sum / n)};
}

Verdict Switch::process_packet(const PacketRecord& packet) {
    Verdict verdict;
    verdict.key = FlowKey{packet.src_ip, packet.dst_ip, packet.src_port, packet.dst_port,
                          packet.protocol};
    verdict.packet_index = packet_index_++;

    SlotResult slot = lookup_or_allocate(verdict.key, packet.timestamp_us);
    if (slot.kind == SlotResult::Kind::full) {
        ++counters_.table_full;
        verdict.kind = VerdictKind::unclassified_full;
        return verdict;
    }

    FlowRow& row = rows_[slot.index];
    uint64_t iat_us = 0;
    if (slot.kind == SlotResult::Kind::hit) {
        uint32_t now_units = ts_units(packet.timestamp_us);
        iat_us = static_cast<uint64_t>(ts_age(now_units, row.last_ts_units)) << kTsUnitShift;
        row.last_ts_units = now_units;
    }
    if (row.packet_count < kCounterMax) ++row.packet_count;
    update_feature_string(config_, row.features, packet, iat_us, row.packet_count);
    verdict.flow_packet = row.packet_count;

    auto model = config_.model_for(row.packet_count);
    if (!model) {
        ++counters_.no_model_yet;
        verdict.kind = VerdictKind::pending_no_model;
        return verdict;
    }

    std::vector<TreeVote> votes = table_walk(*model, row.features, packet, row.packet_count);
    TreeVote final = aggregate_votes(votes);
    verdict.label = final.label;
    verdict.certainty_q = final.certainty_q;
    if (final.certainty_q >= config_.thrC_q) {
        verdict.kind = VerdictKind::classified;
        ++counters_.classified;
        // Free the slot for the next flow.
        row = FlowRow{};
        row.features = bitstring(config_.layout.total_bits);
    } else {
        verdict.kind = VerdictKind::pending_low_certainty;
    }
    return verdict;
}

bitstring quantized_feature_string(const DeploymentConfig& config,
                                   std::span<const PacketRecord> packets) {
    bitstring features(config.layout.total_bits);
    uint32_t last_ts_units = 0;
    uint64_t count = 0;
    for (const auto& p : packets) {
        uint32_t now_units = ts_units(p.timestamp_us);
        uint64_t iat_us = 0;
        if (count > 0)
            iat_us = static_cast<uint64_t>(ts_age(now_units, last_ts_units)) << kTsUnitShift;
        last_ts_units = now_units;
        if (count < kCounterMax) ++count;
        update_feature_string(config, features, p, iat_us, count);
    }
    return features;
}

SimulationStats replay(Switch& sw, std::span<const PacketRecord> packets,
                       const std::unordered_map<FlowKey, std::string, FlowKeyHash>& labels) {
    SimulationStats stats;
    std::unordered_map<FlowKey, Verdict, FlowKeyHash> first_classified;
    std::unordered_map<FlowKey, bool, FlowKeyHash> seen;

    for (const auto& p : packets) {
        Verdict v = sw.process_packet(p);
        seen[v.key] = true;
        if (v.kind == VerdictKind::classified && !first_classified.count(v.key)) {
            first_classified.emplace(v.key, v);
            ++stats.classified_at_count[v.flow_packet];
        }
        stats.verdicts.push_back(v);
        ++stats.packets;
    }

    stats.flows_seen = seen.size();
    stats.classified_flows = first_classified.size();
    stats.classified_pct =
        stats.flows_seen ? 100.0 * static_cast<double>(stats.classified_flows) /
                               static_cast<double>(stats.flows_seen)
                         : 0.0;
    stats.counters = sw.counters();
    stats.row_bits = sw.row_bits();
    stats.rows = sw.rows();
    stats.flows_per_10mb = sw.flows_per_10mb();

    const auto& classes = sw.config().classes;
    auto id_of = [&](const std::string& name) -> int {
        auto it = std::find(classes.begin(), classes.end(), name);
        return it == classes.end() ? -1 : static_cast<int>(it - classes.begin());
    };

    // Flows grouped by the packet count at which they were classified,
    // accumulated in ascending count order for the cumulative curve.
    std::map<size_t, std::vector<const Verdict*>> by_count;
    for (const auto& [key, verdict] : first_classified)
        by_count[verdict.flow_packet].push_back(&verdict);

    std::vector<int> y_true, y_pred;
    size_t cumulative = 0;
    for (const auto& [count, group] : by_count) {
        cumulative += group.size();
        PacketCountEval eval;
        eval.packets = count;
        eval.classified_here = group.size();
        eval.classified_cumulative = cumulative;
        eval.pct_cumulative = stats.flows_seen ? 100.0 * static_cast<double>(cumulative) /
                                                     static_cast<double>(stats.flows_seen)
                                               : 0.0;
        if (!labels.empty()) {
            for (const Verdict* v : group) {
                auto it = labels.find(v->key);
                if (it == labels.end()) continue;
                int t = id_of(it->second);
                if (t < 0) continue;
                y_true.push_back(t);
                y_pred.push_back(v->label);
            }
            if (!y_true.empty()) eval.f1_cumulative = f1_macro(y_true, y_pred, classes.size());
        }
        stats.by_packet_count.push_back(eval);
    }
    if (!y_true.empty()) stats.f1_classified = f1_macro(y_true, y_pred, classes.size());
    return stats;
}

std::string stats_to_json(const SimulationStats& stats) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["packets"] = stats.packets;
    j["flows_seen"] = stats.flows_seen;
    j["classified_flows"] = stats.classified_flows;
    j["classified_pct"] = stats.classified_pct;
    j["f1_classified"] = stats.f1_classified;
    j["counters"] = {{"classified", stats.counters.classified},
                     {"no_model_yet", stats.counters.no_model_yet},
                     {"table_full", stats.counters.table_full},
                     {"evicted", stats.counters.evicted},
                     {"hash_hits", stats.counters.hash_hits}};
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& [count, flows] : stats.classified_at_count)
        hist.push_back(nlohmann::json{{"packets", count}, {"flows", flows}});
    j["classified_at"] = hist;
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& e : stats.by_packet_count)
        curve.push_back(nlohmann::json{{"packets", e.packets},
                                       {"classified_here", e.classified_here},
                                       {"classified_cumulative", e.classified_cumulative},
                                       {"pct_cumulative", e.pct_cumulative},
                                       {"f1_cumulative", e.f1_cumulative}});
    j["by_packet_count"] = curve;
    j["memory"] = {{"row_bits", stats.row_bits},
                   {"rows", stats.rows},
                   {"total_bits", stats.row_bits * stats.rows},
                   {"flows_per_10mb", stats.flows_per_10mb}};
    return j.dump(2) + "\n";
}

std::string verdicts_to_csv(const SimulationStats& stats,
                            const std::vector<std::string>& classes) {
    std::string out = "flow_key,packet_index,verdict,label,certainty\n";
    for (const auto& v : stats.verdicts) {
        const char* kind = "";
        switch (v.kind) {
            case VerdictKind::classified: kind = "classified"; break;
            case VerdictKind::pending_no_model: kind = "pending_no_model"; break;
            case VerdictKind::pending_low_certainty: kind = "pending_low_certainty"; break;
            case VerdictKind::unclassified_full: kind = "unclassified_full"; break;
        }
        out += format_flow_key(v.key) + ',' + std::to_string(v.packet_index) + ',' + kind + ',';
        if (v.kind == VerdictKind::classified || v.kind == VerdictKind::pending_low_certainty) {
            size_t label = static_cast<size_t>(v.label);
            out += (label < classes.size() ? classes[label] : std::to_string(v.label));
            out += ',' + std::to_string(v.certainty_q);
        } else {
            out += ',';
        }
        out += '\n';
    }
    return out;
}

} // namespace flowforest
