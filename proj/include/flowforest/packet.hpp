#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace flowforest {

namespace tcp_flag {
constexpr uint8_t syn = 1u << 0;
constexpr uint8_t ack = 1u << 1;
constexpr uint8_t psh = 1u << 2;
constexpr uint8_t fin = 1u << 3;
constexpr uint8_t rst = 1u << 4;
constexpr uint8_t ece = 1u << 5;
} // namespace tcp_flag

/// One parsed IPv4 TCP/UDP packet. Timestamps are microseconds relative to
/// the first packet of the capture.
struct PacketRecord {
    uint64_t timestamp_us = 0;
    uint32_t src_ip = 0; // host byte order
    uint32_t dst_ip = 0;
    uint16_t src_port = 0;
    uint16_t dst_port = 0;
    uint8_t protocol = 0;
    uint32_t length = 0; // bytes of the IP packet
    uint8_t tcp_flags = 0; // tcp_flag bits, 0 for non-TCP
};

/// Flow identity. Unidirectional: no canonicalization of the tuple, so the
/// training-side grouping matches the data-plane hash of the raw 5-tuple.
struct FlowKey {
    uint32_t src_ip = 0;
    uint32_t dst_ip = 0;
    uint16_t src_port = 0;
    uint16_t dst_port = 0;
    uint8_t protocol = 0;

    bool operator==(const FlowKey&) const = default;

    /// Canonical 13-byte wire layout (big-endian fields), the hash input on
    /// both the training and the simulated data-plane side.
    void to_bytes(uint8_t out[13]) const;
};

struct FlowKeyHash {
    size_t operator()(const FlowKey& k) const;
};

struct Flow {
    FlowKey key;
    std::vector<PacketRecord> packets;
    std::optional<std::string> label;
};

/// First-n-packets view of a flow. `truncated` is set when the flow has at
/// least n packets, i.e. the prefix cut something off or is exact.
struct Subflow {
    std::span<const PacketRecord> packets;
    bool truncated = false;
};

struct LabeledDataset {
    std::vector<Flow> flows; // every flow carries a label
    std::vector<std::string> classes; // sorted, index = class id
};

uint32_t parse_ipv4(const std::string& dotted); // throws errc::malformed_csv
std::string format_ipv4(uint32_t addr);
std::string format_flow_key(const FlowKey& key);

uint8_t parse_tcp_flags(const std::string& spec); // "SYN|ACK", "" -> 0
std::string format_tcp_flags(uint8_t flags);

} // namespace flowforest
