#include <doctest.h>

#include <algorithm>

#include "flowforest/error.hpp"
#include "flowforest/features.hpp"
#include "flowforest/rng.hpp"

using namespace flowforest;

namespace {

PacketRecord pkt(uint64_t ts, uint32_t len, uint8_t flags = 0) {
    PacketRecord p;
    p.timestamp_us = ts;
    p.src_ip = 1;
    p.dst_ip = 2;
    p.src_port = 1000;
    p.dst_port = 80;
    p.protocol = 6;
    p.length = len;
    p.tcp_flags = flags;
    return p;
}

// From-scratch oracle: every statistic recomputed over the whole prefix with
// plain loops, independent of the incremental update path.
FeatureVector batch_oracle(const std::vector<PacketRecord>& packets, size_t n) {
    n = std::min(n, packets.size());
    FeatureVector v;
    auto set = [&](FeatureId id, uint64_t value, bool defined) {
        v.values[static_cast<size_t>(id)] = value;
        v.defined[static_cast<size_t>(id)] = defined;
    };

    std::vector<uint64_t> iats;
    for (size_t i = 1; i < n; ++i)
        iats.push_back(packets[i].timestamp_us - packets[i - 1].timestamp_us);

    uint64_t iat_min = 0, iat_max = 0, iat_avg = 0;
    if (!iats.empty()) {
        iat_min = *std::min_element(iats.begin(), iats.end());
        iat_max = *std::max_element(iats.begin(), iats.end());
        iat_avg = iats[0];
        for (size_t i = 1; i < iats.size(); ++i) iat_avg = (iat_avg + iats[i]) >> 1;
    }
    set(FeatureId::iat_min, iat_min, n >= 2);
    set(FeatureId::iat_max, iat_max, n >= 2);
    set(FeatureId::iat_avg, iat_avg, n >= 3);

    uint64_t len_min = packets[0].length, len_max = packets[0].length, len_total = 0;
    uint64_t len_avg = packets[0].length;
    for (size_t i = 0; i < n; ++i) {
        len_min = std::min<uint64_t>(len_min, packets[i].length);
        len_max = std::max<uint64_t>(len_max, packets[i].length);
        len_total += packets[i].length;
        if (i > 0) len_avg = (len_avg + packets[i].length) >> 1;
    }
    set(FeatureId::len_min, len_min, true);
    set(FeatureId::len_max, len_max, true);
    set(FeatureId::len_avg, len_avg, true);
    set(FeatureId::len_total, len_total, true);
    set(FeatureId::pkt_count, std::min<uint64_t>(n, 127), true);

    const uint8_t bits[6] = {tcp_flag::syn, tcp_flag::ack, tcp_flag::psh,
                             tcp_flag::fin, tcp_flag::rst, tcp_flag::ece};
    const FeatureId ids[6] = {FeatureId::syn_count, FeatureId::ack_count, FeatureId::psh_count,
                              FeatureId::fin_count, FeatureId::rst_count, FeatureId::ece_count};
    for (size_t b = 0; b < 6; ++b) {
        uint64_t count = 0;
        for (size_t i = 0; i < n; ++i)
            if (packets[i].tcp_flags & bits[b]) count = std::min<uint64_t>(count + 1, 127);
        set(ids[b], count, true);
    }
    set(FeatureId::duration, packets[n - 1].timestamp_us - packets[0].timestamp_us, true);
    set(FeatureId::src_port, packets[n - 1].src_port, true);
    set(FeatureId::dst_port, packets[n - 1].dst_port, true);
    set(FeatureId::current_len, packets[n - 1].length, true);
    return v;
}

FeatureVector fold(const std::vector<PacketRecord>& packets, size_t n) {
    n = std::min(n, packets.size());
    FeatureState s = init_state(packets[0]);
    for (size_t i = 1; i < n; ++i) s = update_state(s, packets[i]);
    return feature_vector(s, packets[n - 1]);
}

std::vector<PacketRecord> random_flow(rng64& rng, size_t max_packets) {
    size_t n = 1 + rng.below(max_packets);
    std::vector<PacketRecord> packets;
    uint64_t t = rng.below(1000000);
    for (size_t i = 0; i < n; ++i) {
        uint8_t flags = static_cast<uint8_t>(rng.below(64));
        packets.push_back(pkt(t, static_cast<uint32_t>(40 + rng.below(1460)), flags));
        t += rng.below(100000);
    }
    return packets;
}

} // namespace

TEST_CASE("ewma_update has floor semantics and a fixed point") {
    CHECK(ewma_update(100, 50) == 75);
    CHECK(ewma_update(3, 4) == 3);
    uint64_t v = 8;
    for (int i = 0; i < 40; ++i) v = ewma_update(v, 8);
    CHECK(v == 8);
}

TEST_CASE("init_state base case") {
    FeatureState s = init_state(pkt(0, 100, tcp_flag::syn));
    CHECK(s.pkt_count == 1);
    CHECK(s.len_min == 100);
    CHECK(s.len_max == 100);
    CHECK(s.len_total == 100);
    CHECK(s.flag_counts[0] == 1); // SYN
    CHECK(s.flag_counts[1] == 0); // ACK
    CHECK(s.duration_us == 0);

    FeatureState udp = init_state(pkt(0, 40));
    for (uint64_t c : udp.flag_counts) CHECK(c == 0);

    FeatureVector v = feature_vector(s, pkt(0, 100, tcp_flag::syn));
    CHECK_FALSE(v.is_defined(FeatureId::iat_min));
    CHECK_FALSE(v.is_defined(FeatureId::iat_max));
    CHECK_FALSE(v.is_defined(FeatureId::iat_avg));
    CHECK(v.is_defined(FeatureId::len_min));
}

TEST_CASE("update_state matches the worked three-packet example") {
    FeatureState s = init_state(pkt(0, 100));
    s = update_state(s, pkt(100, 200));
    s = update_state(s, pkt(300, 600));
    CHECK(s.iat_min == 100);
    CHECK(s.iat_max == 200);
    CHECK(s.iat_avg == 150); // ewma(100, 200)
    CHECK(s.len_total == 900);
    CHECK(s.len_max == 600);
    CHECK(s.pkt_count == 3);
}

TEST_CASE("counters saturate at 127") {
    FeatureState s = init_state(pkt(0, 100, tcp_flag::ack));
    for (uint64_t i = 1; i <= 200; ++i) s = update_state(s, pkt(i, 100, tcp_flag::ack));
    CHECK(s.flag_counts[1] == 127);
    CHECK(s.pkt_count == 127);
}

TEST_CASE("single update makes duration equal the IAT") {
    FeatureState s = init_state(pkt(1000, 100));
    s = update_state(s, pkt(1400, 100));
    CHECK(s.duration_us == 400);
    CHECK(s.iat_min == 400);
}

TEST_CASE("non-monotonic timestamps are rejected") {
    FeatureState s = init_state(pkt(1000, 100));
    CHECK_THROWS_AS(update_state(s, pkt(999, 100)), error);
}

TEST_CASE("stateless features come from the current packet") {
    FeatureState s = init_state(pkt(0, 100));
    FeatureVector v = feature_vector(s, pkt(0, 60));
    CHECK(v[FeatureId::current_len] == 60);
    CHECK(v[FeatureId::src_port] == 1000);
    CHECK(v[FeatureId::dst_port] == 80);
}

TEST_CASE("incremental updates equal from-scratch recomputation") {
    rng64 rng(7);
    for (int trial = 0; trial < 300; ++trial) {
        auto packets = random_flow(rng, 50);
        for (size_t n : {size_t{1}, size_t{2}, size_t{3}, packets.size()}) {
            FeatureVector inc = fold(packets, n);
            FeatureVector batch = batch_oracle(packets, n);
            for (size_t f = 0; f < kNumFeatures; ++f) {
                CHECK(inc.defined[f] == batch.defined[f]);
                if (inc.defined[f]) CHECK(inc.values[f] == batch.values[f]);
            }
        }
    }
}

TEST_CASE("monotone statistics never decrease with n") {
    rng64 rng(11);
    auto packets = random_flow(rng, 40);
    uint64_t prev_total = 0, prev_duration = 0, prev_acks = 0;
    for (size_t n = 1; n <= packets.size(); ++n) {
        FeatureVector v = fold(packets, n);
        CHECK(v[FeatureId::len_total] >= prev_total);
        CHECK(v[FeatureId::duration] >= prev_duration);
        CHECK(v[FeatureId::ack_count] >= prev_acks);
        CHECK(v[FeatureId::len_min] - 1 <= v[FeatureId::len_avg]);
        CHECK(v[FeatureId::len_avg] <= v[FeatureId::len_max]);
        prev_total = v[FeatureId::len_total];
        prev_duration = v[FeatureId::duration];
        prev_acks = v[FeatureId::ack_count];
    }
}

namespace {

LabeledDataset small_dataset() {
    LabeledDataset ds;
    ds.classes = {"a", "b"};
    for (int i = 0; i < 4; ++i) {
        Flow f;
        f.key = FlowKey{static_cast<uint32_t>(i), 2, 3, 4, 6};
        size_t len = i < 2 ? 5 : 2; // two long, two short flows
        uint64_t t = 0;
        for (size_t k = 0; k < len; ++k) {
            f.packets.push_back(pkt(t, 100 + static_cast<uint32_t>(10 * i)));
            t += 50;
        }
        f.label = i % 2 ? "b" : "a";
        ds.flows.push_back(std::move(f));
    }
    return ds;
}

} // namespace

TEST_CASE("extract_dataset selects long-enough flows and marks definedness") {
    LabeledDataset ds = small_dataset();

    ExtractResult r1 = extract_dataset(ds, 1);
    CHECK(r1.matrix.n_rows == 4);
    CHECK_FALSE(r1.matrix.defined[static_cast<size_t>(FeatureId::iat_min)]);
    CHECK(r1.short_flows == 0);

    ExtractResult r3 = extract_dataset(ds, 3);
    CHECK(r3.matrix.n_rows == 2);
    CHECK(r3.short_flows == 2);
    CHECK(r3.matrix.defined[static_cast<size_t>(FeatureId::iat_avg)]);
    // row equals a manual fold of the first 3 packets
    for (size_t r = 0; r < r3.matrix.n_rows; ++r) {
        FeatureVector manual = fold(ds.flows[r3.row_to_flow[r]].packets, 3);
        for (size_t f = 0; f < kNumFeatures; ++f)
            if (r3.matrix.defined[f]) CHECK(r3.matrix.at(r, f) == manual.values[f]);
    }

    CHECK_THROWS_AS(extract_dataset(ds, 50), error);
}

TEST_CASE("feature CSV writes undefined columns empty and round-trips") {
    LabeledDataset ds = small_dataset();
    ExtractResult r = extract_dataset(ds, 2);
    std::string csv = write_feature_csv(r.matrix, ds.classes);
    CHECK(csv.find("iat_min") == 0); // header starts with the first feature

    FeatureCsv back = read_feature_csv(csv, 2);
    REQUIRE(back.matrix.n_rows == r.matrix.n_rows);
    CHECK(back.matrix.defined == r.matrix.defined);
    for (size_t row = 0; row < r.matrix.n_rows; ++row) {
        for (size_t f = 0; f < kNumFeatures; ++f)
            if (r.matrix.defined[f]) CHECK(back.matrix.at(row, f) == r.matrix.at(row, f));
        CHECK(back.row_labels[row] == ds.classes[static_cast<size_t>(r.matrix.labels[row])]);
    }

    // n=1 leaves the whole IAT family empty
    std::string csv1 = write_feature_csv(extract_dataset(ds, 1).matrix, ds.classes);
    CHECK(csv1.substr(csv1.find('\n') + 1, 3) == ",,,");
}
