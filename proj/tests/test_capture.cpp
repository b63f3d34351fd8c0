#include <doctest.h>

#include <algorithm>
#include <map>
#include <tuple>

#include "flowforest/capture.hpp"
#include "flowforest/error.hpp"
#include "flowforest/rng.hpp"

using namespace flowforest;

namespace {

void put_u16le(std::vector<uint8_t>& v, uint16_t x) {
    v.push_back(static_cast<uint8_t>(x));
    v.push_back(static_cast<uint8_t>(x >> 8));
}

void put_u32le(std::vector<uint8_t>& v, uint32_t x) {
    for (int i = 0; i < 4; ++i) v.push_back(static_cast<uint8_t>(x >> (8 * i)));
}

void put_u16be(std::vector<uint8_t>& v, uint16_t x) {
    v.push_back(static_cast<uint8_t>(x >> 8));
    v.push_back(static_cast<uint8_t>(x));
}

void put_u32be(std::vector<uint8_t>& v, uint32_t x) {
    for (int i = 3; i >= 0; --i) v.push_back(static_cast<uint8_t>(x >> (8 * i)));
}

std::vector<uint8_t> pcap_header() {
    std::vector<uint8_t> v;
    put_u32le(v, 0xa1b2c3d4u);
    put_u16le(v, 2);
    put_u16le(v, 4);
    put_u32le(v, 0);     // thiszone
    put_u32le(v, 0);     // sigfigs
    put_u32le(v, 65535); // snaplen
    put_u32le(v, 1);     // Ethernet
    return v;
}

// 60-byte Ethernet frame carrying an IPv4/TCP SYN, built field by field.
std::vector<uint8_t> syn_frame() {
    std::vector<uint8_t> f;
    for (int i = 0; i < 12; ++i) f.push_back(0); // MACs
    put_u16be(f, 0x0800);
    // IPv4 header (20 bytes)
    f.push_back(0x45); // version 4, IHL 5
    f.push_back(0);    // TOS
    put_u16be(f, 40);  // total length: 20 IP + 20 TCP
    put_u16be(f, 0);   // identification
    put_u16be(f, 0);   // flags/fragment
    f.push_back(64);   // TTL
    f.push_back(6);    // TCP
    put_u16be(f, 0);   // checksum (unchecked)
    put_u32be(f, 0xc0a80001u); // 192.168.0.1
    put_u32be(f, 0xc0a80002u); // 192.168.0.2
    // TCP header (20 bytes)
    put_u16be(f, 1234);
    put_u16be(f, 80);
    put_u32be(f, 0); // seq
    put_u32be(f, 0); // ack
    f.push_back(0x50); // data offset 5
    f.push_back(0x02); // SYN
    put_u16be(f, 64240);
    put_u16be(f, 0); // checksum
    put_u16be(f, 0); // urgent
    while (f.size() < 60) f.push_back(0); // Ethernet padding
    return f;
}

std::vector<uint8_t> udp_frame() {
    std::vector<uint8_t> f;
    for (int i = 0; i < 12; ++i) f.push_back(0);
    put_u16be(f, 0x0800);
    f.push_back(0x45);
    f.push_back(0);
    put_u16be(f, 28); // 20 IP + 8 UDP
    put_u16be(f, 0);
    put_u16be(f, 0);
    f.push_back(64);
    f.push_back(17); // UDP
    put_u16be(f, 0);
    put_u32be(f, 0x0a000001u);
    put_u32be(f, 0x0a000002u);
    put_u16be(f, 5353);
    put_u16be(f, 53);
    put_u16be(f, 8);
    put_u16be(f, 0);
    return f;
}

std::vector<uint8_t> arp_frame() {
    std::vector<uint8_t> f;
    for (int i = 0; i < 12; ++i) f.push_back(0);
    put_u16be(f, 0x0806); // ARP
    for (int i = 0; i < 28; ++i) f.push_back(0);
    return f;
}

void append_record(std::vector<uint8_t>& pcap, uint32_t sec, uint32_t usec,
                   const std::vector<uint8_t>& frame) {
    put_u32le(pcap, sec);
    put_u32le(pcap, usec);
    put_u32le(pcap, static_cast<uint32_t>(frame.size()));
    put_u32le(pcap, static_cast<uint32_t>(frame.size()));
    pcap.insert(pcap.end(), frame.begin(), frame.end());
}

} // namespace

TEST_CASE("empty pcap parses to an empty list") {
    auto bytes = pcap_header();
    auto result = parse_capture(bytes, CaptureFormat::pcap);
    CHECK(result.packets.empty());
    CHECK(result.skipped == 0);
}

TEST_CASE("hand-built 60-byte IPv4/TCP SYN decodes field by field") {
    auto pcap = pcap_header();
    append_record(pcap, 10, 500, syn_frame());
    auto result = parse_capture(pcap, CaptureFormat::pcap);
    REQUIRE(result.packets.size() == 1);
    const PacketRecord& p = result.packets[0];
    CHECK(p.timestamp_us == 0); // normalized to the first packet
    CHECK(p.src_ip == 0xc0a80001u);
    CHECK(p.dst_ip == 0xc0a80002u);
    CHECK(p.src_port == 1234);
    CHECK(p.dst_port == 80);
    CHECK(p.protocol == 6);
    CHECK(p.length == 40);
    CHECK(p.tcp_flags == tcp_flag::syn);
}

TEST_CASE("ARP frames are skipped and counted, UDP kept") {
    auto pcap = pcap_header();
    append_record(pcap, 1, 0, arp_frame());
    append_record(pcap, 1, 250, udp_frame());
    auto result = parse_capture(pcap, CaptureFormat::pcap);
    REQUIRE(result.packets.size() == 1);
    CHECK(result.skipped == 1);
    CHECK(result.packets[0].protocol == 17);
    CHECK(result.packets[0].tcp_flags == 0);
    CHECK(result.packets[0].timestamp_us == 250); // relative to the ARP frame at t0
}

TEST_CASE("timestamps are relative to the first record") {
    auto pcap = pcap_header();
    append_record(pcap, 100, 7, syn_frame());
    append_record(pcap, 101, 9, syn_frame());
    auto result = parse_capture(pcap, CaptureFormat::pcap);
    REQUIRE(result.packets.size() == 2);
    CHECK(result.packets[0].timestamp_us == 0);
    CHECK(result.packets[1].timestamp_us == 1000002);
}

TEST_CASE("byte-swapped pcap magic is accepted") {
    auto le = pcap_header();
    append_record(le, 3, 4, syn_frame());
    // Byte-swap every header field of the little-endian capture.
    std::vector<uint8_t> be;
    auto swap32at = [&](size_t off) {
        be.push_back(le[off + 3]);
        be.push_back(le[off + 2]);
        be.push_back(le[off + 1]);
        be.push_back(le[off]);
    };
    swap32at(0);
    be.push_back(le[5]);
    be.push_back(le[4]);
    be.push_back(le[7]);
    be.push_back(le[6]);
    for (size_t off = 8; off < 24; off += 4) swap32at(off);
    for (size_t off = 24; off < 40; off += 4) swap32at(off);
    be.insert(be.end(), le.begin() + 40, le.end());

    auto result = parse_capture(be, CaptureFormat::pcap);
    REQUIRE(result.packets.size() == 1);
    CHECK(result.packets[0].src_port == 1234);
}

TEST_CASE("malformed captures are rejected") {
    std::vector<uint8_t> junk{1, 2, 3};
    CHECK_THROWS_AS(parse_capture(junk, CaptureFormat::pcap), error);

    auto truncated = pcap_header();
    append_record(truncated, 0, 0, syn_frame());
    truncated.resize(truncated.size() - 10);
    CHECK_THROWS_AS(parse_capture(truncated, CaptureFormat::pcap), error);

    auto bad_link = pcap_header();
    bad_link[20] = 101; // not Ethernet
    try {
        parse_capture(bad_link, CaptureFormat::pcap);
        FAIL("expected unsupported_link_type");
    } catch (const error& e) {
        CHECK(e.code() == errc::unsupported_link_type);
    }
}

TEST_CASE("packet CSV round-trips") {
    std::string csv =
        "ts_us,src_ip,dst_ip,src_port,dst_port,proto,len,flags\n"
        "0,10.0.0.1,10.0.0.2,1000,80,6,60,SYN\n"
        "150,10.0.0.1,10.0.0.2,1000,80,6,120,SYN|ACK\n"
        "300,10.0.0.2,10.0.0.1,80,1000,17,90,\n";
    auto result = parse_packet_csv(csv);
    REQUIRE(result.packets.size() == 3);
    CHECK(result.packets[1].tcp_flags == (tcp_flag::syn | tcp_flag::ack));
    CHECK(result.packets[2].tcp_flags == 0);
    CHECK(write_packet_csv(result.packets) == csv);

    CHECK_THROWS_AS(parse_packet_csv("nope\n1,2\n"), error);
}

TEST_CASE("assemble_flows partitions by 5-tuple") {
    CHECK(assemble_flows({}).empty());

    PacketRecord a{0, 1, 2, 10, 20, 6, 100, 0};
    PacketRecord b{5, 1, 2, 10, 20, 6, 50, 0};
    PacketRecord c{9, 9, 2, 10, 20, 6, 50, 0};
    std::vector<PacketRecord> packets{a, b, c};
    auto flows = assemble_flows(packets);
    REQUIRE(flows.size() == 2);
    CHECK(flows[0].packets.size() == 2);
    CHECK(flows[1].packets.size() == 1);
}

TEST_CASE("grouping matches a brute-force oracle on 1000 random packets") {
    rng64 rng(42);
    std::vector<PacketRecord> packets;
    for (size_t i = 0; i < 1000; ++i) {
        PacketRecord p;
        p.timestamp_us = i;
        uint64_t k = rng.below(10);
        p.src_ip = static_cast<uint32_t>(100 + k);
        p.dst_ip = 7;
        p.src_port = static_cast<uint16_t>(1000 + k);
        p.dst_port = 80;
        p.protocol = 6;
        p.length = static_cast<uint32_t>(40 + rng.below(1000));
        packets.push_back(p);
    }
    auto flows = assemble_flows(packets);
    CHECK(flows.size() == 10);

    // Oracle: group with a plain map keyed by the tuple fields.
    std::map<std::tuple<uint32_t, uint32_t, uint16_t, uint16_t, uint8_t>,
             std::vector<PacketRecord>>
        oracle;
    for (const auto& p : packets)
        oracle[{p.src_ip, p.dst_ip, p.src_port, p.dst_port, p.protocol}].push_back(p);
    REQUIRE(oracle.size() == flows.size());
    for (const auto& flow : flows) {
        auto it = oracle.find({flow.key.src_ip, flow.key.dst_ip, flow.key.src_port,
                               flow.key.dst_port, flow.key.protocol});
        REQUIRE(it != oracle.end());
        REQUIRE(it->second.size() == flow.packets.size());
        for (size_t i = 0; i < flow.packets.size(); ++i)
            CHECK(flow.packets[i].timestamp_us == it->second[i].timestamp_us);
    }

    // Concatenating flows and sorting by timestamp reproduces the input.
    std::vector<uint64_t> ts;
    for (const auto& flow : flows)
        for (const auto& p : flow.packets) ts.push_back(p.timestamp_us);
    std::sort(ts.begin(), ts.end());
    for (size_t i = 0; i < ts.size(); ++i) CHECK(ts[i] == i);
}

TEST_CASE("subflow prefixes") {
    Flow flow;
    flow.key = FlowKey{1, 2, 3, 4, 6};
    for (size_t i = 0; i < 9; ++i)
        flow.packets.push_back(PacketRecord{i * 10, 1, 2, 3, 4, 6, 100, 0});

    auto s3 = subflow(flow, 3);
    CHECK(s3.packets.size() == 3);
    CHECK(s3.truncated);

    Flow two = flow;
    two.packets.resize(2);
    auto s5 = subflow(two, 5);
    CHECK(s5.packets.size() == 2);
    CHECK_FALSE(s5.truncated);

    // prefix composition: subflow(subflow(F,5), 3) == subflow(F,3)
    auto s5full = subflow(flow, 5);
    Flow five;
    five.key = flow.key;
    five.packets.assign(s5full.packets.begin(), s5full.packets.end());
    auto s53 = subflow(five, 3);
    REQUIRE(s53.packets.size() == s3.packets.size());
    for (size_t i = 0; i < 3; ++i)
        CHECK(s53.packets[i].timestamp_us == s3.packets[i].timestamp_us);
}

TEST_CASE("label file joins flows into a dataset") {
    std::string labels_csv =
        "src_ip,dst_ip,src_port,dst_port,proto,label\n"
        "10.0.0.1,10.0.0.2,1000,80,6,web\n";
    auto labels = read_labels(labels_csv);
    REQUIRE(labels.size() == 1);

    PacketRecord known{0, parse_ipv4("10.0.0.1"), parse_ipv4("10.0.0.2"), 1000, 80, 6, 60, 0};
    PacketRecord unknown{1, parse_ipv4("10.9.9.9"), parse_ipv4("10.0.0.2"), 1000, 80, 6, 60, 0};
    auto flows = assemble_flows(std::vector<PacketRecord>{known, unknown});
    auto built = build_labeled_dataset(std::move(flows), labels);
    CHECK(built.dataset.flows.size() == 1);
    CHECK(built.unlabeled_flows == 1);
    CHECK(built.dataset.classes == std::vector<std::string>{"web"});
    CHECK(*built.dataset.flows[0].label == "web");
}
