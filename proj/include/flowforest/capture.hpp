#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "flowforest/packet.hpp"

namespace flowforest {

enum class CaptureFormat { pcap, csv };

struct ParsedCapture {
    std::vector<PacketRecord> packets;
    size_t skipped = 0; // non-IPv4 or non-TCP/UDP frames
};

/// Parses a classic pcap (little or big endian, Ethernet link type, IPv4
/// TCP/UDP only) or a packet CSV. Timestamps are normalized so the first
/// packet of the capture is at t=0.
ParsedCapture parse_capture(std::span<const uint8_t> raw, CaptureFormat format);

ParsedCapture parse_capture_file(const std::string& path); // format by extension

/// Packet CSV: header `ts_us,src_ip,dst_ip,src_port,dst_port,proto,len,flags`.
ParsedCapture parse_packet_csv(const std::string& text);
std::string write_packet_csv(std::span<const PacketRecord> packets);

/// Label file: CSV `src_ip,dst_ip,src_port,dst_port,proto,label`.
std::unordered_map<FlowKey, std::string, FlowKeyHash> read_labels(const std::string& text);
std::unordered_map<FlowKey, std::string, FlowKeyHash> read_labels_file(const std::string& path);

/// Partitions packets by 5-tuple. Flows appear in order of first packet;
/// packet order inside a flow is the capture order.
std::vector<Flow> assemble_flows(std::span<const PacketRecord> packets);

Subflow subflow(const Flow& flow, size_t n);

struct DatasetBuildResult {
    LabeledDataset dataset;
    size_t unlabeled_flows = 0; // flows dropped for missing a label entry
};

DatasetBuildResult build_labeled_dataset(
    std::vector<Flow> flows,
    const std::unordered_map<FlowKey, std::string, FlowKeyHash>& labels);

} // namespace flowforest
