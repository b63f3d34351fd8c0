#include "flowforest/capture.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "flowforest/error.hpp"

namespace flowforest {

namespace {

constexpr uint32_t kPcapMagic = 0xa1b2c3d4u;
constexpr uint32_t kPcapMagicSwapped = 0xd4c3b2a1u;
constexpr uint32_t kLinkTypeEthernet = 1;
constexpr uint16_t kEthertypeIpv4 = 0x0800;
constexpr uint8_t kProtoTcp = 6;
constexpr uint8_t kProtoUdp = 17;

class ByteReader {
public:
    ByteReader(std::span<const uint8_t> data, bool swap) : data_(data), swap_(swap) {}

    size_t remaining() const { return data_.size() - pos_; }
    size_t pos() const { return pos_; }
    void skip(size_t n) { pos_ += n; }

    uint32_t u32() {
        uint32_t v = static_cast<uint32_t>(data_[pos_]) | (static_cast<uint32_t>(data_[pos_ + 1]) << 8) |
                     (static_cast<uint32_t>(data_[pos_ + 2]) << 16) |
                     (static_cast<uint32_t>(data_[pos_ + 3]) << 24);
        pos_ += 4;
        return swap_ ? __builtin_bswap32(v) : v;
    }

private:
    std::span<const uint8_t> data_;
    size_t pos_ = 0;
    bool swap_;
};

uint16_t rd_be16(std::span<const uint8_t> d, size_t off) {
    return static_cast<uint16_t>((d[off] << 8) | d[off + 1]);
}

uint32_t rd_be32(std::span<const uint8_t> d, size_t off) {
    return (static_cast<uint32_t>(d[off]) << 24) | (static_cast<uint32_t>(d[off + 1]) << 16) |
           (static_cast<uint32_t>(d[off + 2]) << 8) | static_cast<uint32_t>(d[off + 3]);
}

// Decodes one Ethernet frame; returns false when the frame is not IPv4 TCP/UDP.
bool decode_frame(std::span<const uint8_t> frame, PacketRecord& out) {
    if (frame.size() < 14) return false;
    if (rd_be16(frame, 12) != kEthertypeIpv4) return false;

    constexpr size_t ip = 14;
    if (frame.size() < ip + 20) return false;
    uint8_t ver_ihl = frame[ip];
    if ((ver_ihl >> 4) != 4) return false;
    size_t ihl = static_cast<size_t>(ver_ihl & 0x0f) * 4;
    if (ihl < 20 || frame.size() < ip + ihl) return false;

    uint8_t protocol = frame[ip + 9];
    if (protocol != kProtoTcp && protocol != kProtoUdp) return false;
    size_t l4 = ip + ihl;
    if (frame.size() < l4 + 4) return false;

    out.src_ip = rd_be32(frame, ip + 12);
    out.dst_ip = rd_be32(frame, ip + 16);
    out.protocol = protocol;
    out.length = rd_be16(frame, ip + 2); // IP total length
    out.src_port = rd_be16(frame, l4);
    out.dst_port = rd_be16(frame, l4 + 2);
    out.tcp_flags = 0;
    if (protocol == kProtoTcp) {
        if (frame.size() < l4 + 14) return false;
        uint8_t raw = frame[l4 + 13];
        if (raw & 0x01) out.tcp_flags |= tcp_flag::fin;
        if (raw & 0x02) out.tcp_flags |= tcp_flag::syn;
        if (raw & 0x04) out.tcp_flags |= tcp_flag::rst;
        if (raw & 0x08) out.tcp_flags |= tcp_flag::psh;
        if (raw & 0x10) out.tcp_flags |= tcp_flag::ack;
        if (raw & 0x40) out.tcp_flags |= tcp_flag::ece;
    }
    return true;
}

ParsedCapture parse_pcap(std::span<const uint8_t> raw) {
    if (raw.size() < 24) throw error(errc::malformed_capture, "pcap shorter than global header");
    uint32_t magic = static_cast<uint32_t>(raw[0]) | (static_cast<uint32_t>(raw[1]) << 8) |
                     (static_cast<uint32_t>(raw[2]) << 16) | (static_cast<uint32_t>(raw[3]) << 24);
    bool swap;
    if (magic == kPcapMagic)
        swap = false;
    else if (magic == kPcapMagicSwapped)
        swap = true;
    else
        throw error(errc::malformed_capture, "not a classic pcap (bad magic)");

    ByteReader rd(raw, swap);
    rd.skip(4 + 2 + 2 + 4 + 4 + 4); // magic, version, thiszone, sigfigs, snaplen
    uint32_t link_type = rd.u32();
    if (link_type != kLinkTypeEthernet)
        throw error(errc::unsupported_link_type, "link type " + std::to_string(link_type));

    ParsedCapture result;
    bool have_base = false;
    uint64_t base_us = 0;
    while (rd.remaining() > 0) {
        if (rd.remaining() < 16)
            throw error(errc::malformed_capture, "truncated record header");
        uint32_t ts_sec = rd.u32();
        uint32_t ts_usec = rd.u32();
        uint32_t incl_len = rd.u32();
        rd.u32(); // orig_len
        if (rd.remaining() < incl_len)
            throw error(errc::malformed_capture, "truncated packet record");
        std::span<const uint8_t> frame = raw.subspan(rd.pos(), incl_len);
        rd.skip(incl_len);

        uint64_t abs_us = static_cast<uint64_t>(ts_sec) * 1000000ull + ts_usec;
        if (!have_base) {
            base_us = abs_us;
            have_base = true;
        }
        PacketRecord rec;
        if (decode_frame(frame, rec)) {
            rec.timestamp_us = abs_us - base_us;
            result.packets.push_back(rec);
        } else {
            ++result.skipped;
        }
    }
    return result;
}

std::vector<std::string> split_csv_line(const std::string& line) {
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
    return fields;
}

uint64_t parse_u64(const std::string& s, const char* what) {
    uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw error(errc::malformed_csv, std::string("bad ") + what + ": '" + s + "'");
    return v;
}

} // namespace

ParsedCapture parse_packet_csv(const std::string& text) {
    ParsedCapture result;
    std::istringstream in(text);
    std::string line;
    bool header = true;
    bool have_base = false;
    uint64_t base_us = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (header) {
            if (line != "ts_us,src_ip,dst_ip,src_port,dst_port,proto,len,flags")
                throw error(errc::malformed_csv, "unexpected packet CSV header: " + line);
            header = false;
            continue;
        }
        auto f = split_csv_line(line);
        if (f.size() != 8) throw error(errc::malformed_csv, "expected 8 fields: " + line);
        PacketRecord rec;
        uint64_t abs_us = parse_u64(f[0], "ts_us");
        rec.src_ip = parse_ipv4(f[1]);
        rec.dst_ip = parse_ipv4(f[2]);
        rec.src_port = static_cast<uint16_t>(parse_u64(f[3], "src_port"));
        rec.dst_port = static_cast<uint16_t>(parse_u64(f[4], "dst_port"));
        rec.protocol = static_cast<uint8_t>(parse_u64(f[5], "proto"));
        rec.length = static_cast<uint32_t>(parse_u64(f[6], "len"));
        rec.tcp_flags = parse_tcp_flags(f[7]);
        if (!have_base) {
            base_us = abs_us;
            have_base = true;
        }
        if (abs_us < base_us) throw error(errc::malformed_csv, "timestamps must start at the minimum");
        rec.timestamp_us = abs_us - base_us;
        result.packets.push_back(rec);
    }
    if (header) throw error(errc::malformed_csv, "empty packet CSV");
    return result;
}

std::string write_packet_csv(std::span<const PacketRecord> packets) {
    std::string out = "ts_us,src_ip,dst_ip,src_port,dst_port,proto,len,flags\n";
    for (const auto& p : packets) {
        out += std::to_string(p.timestamp_us) + ',' + format_ipv4(p.src_ip) + ',' +
               format_ipv4(p.dst_ip) + ',' + std::to_string(p.src_port) + ',' +
               std::to_string(p.dst_port) + ',' + std::to_string(p.protocol) + ',' +
               std::to_string(p.length) + ',' + format_tcp_flags(p.tcp_flags) + '\n';
    }
    return out;
}

ParsedCapture parse_capture(std::span<const uint8_t> raw, CaptureFormat format) {
    if (format == CaptureFormat::pcap) return parse_pcap(raw);
    return parse_packet_csv(std::string(raw.begin(), raw.end()));
}

ParsedCapture parse_capture_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw error(errc::malformed_capture, "cannot open " + path);
    std::vector<uint8_t> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    bool is_pcap = path.size() >= 5 && path.substr(path.size() - 5) == ".pcap";
    return parse_capture(raw, is_pcap ? CaptureFormat::pcap : CaptureFormat::csv);
}

std::unordered_map<FlowKey, std::string, FlowKeyHash> read_labels(const std::string& text) {
    std::unordered_map<FlowKey, std::string, FlowKeyHash> labels;
    std::istringstream in(text);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (header) {
            if (line != "src_ip,dst_ip,src_port,dst_port,proto,label")
                throw error(errc::malformed_csv, "unexpected label CSV header: " + line);
            header = false;
            continue;
        }
        auto f = split_csv_line(line);
        if (f.size() != 6) throw error(errc::malformed_csv, "expected 6 fields: " + line);
        FlowKey key;
        key.src_ip = parse_ipv4(f[0]);
        key.dst_ip = parse_ipv4(f[1]);
        key.src_port = static_cast<uint16_t>(parse_u64(f[2], "src_port"));
        key.dst_port = static_cast<uint16_t>(parse_u64(f[3], "dst_port"));
        key.protocol = static_cast<uint8_t>(parse_u64(f[4], "proto"));
        labels[key] = f[5];
    }
    return labels;
}

std::unordered_map<FlowKey, std::string, FlowKeyHash> read_labels_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw error(errc::malformed_csv, "cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return read_labels(text);
}

std::vector<Flow> assemble_flows(std::span<const PacketRecord> packets) {
    std::vector<Flow> flows;
    std::unordered_map<FlowKey, size_t, FlowKeyHash> index;
    for (const auto& p : packets) {
        FlowKey key{p.src_ip, p.dst_ip, p.src_port, p.dst_port, p.protocol};
        auto it = index.find(key);
        if (it == index.end()) {
            index.emplace(key, flows.size());
            flows.push_back(Flow{key, {p}, std::nullopt});
        } else {
            flows[it->second].packets.push_back(p);
        }
    }
    return flows;
}

Subflow subflow(const Flow& flow, size_t n) {
    size_t take = std::min(n, flow.packets.size());
    return Subflow{std::span<const PacketRecord>(flow.packets.data(), take),
                   flow.packets.size() >= n};
}

DatasetBuildResult build_labeled_dataset(
    std::vector<Flow> flows,
    const std::unordered_map<FlowKey, std::string, FlowKeyHash>& labels) {
    DatasetBuildResult result;
    std::vector<std::string> classes;
    for (auto& flow : flows) {
        auto it = labels.find(flow.key);
        if (it == labels.end()) {
            ++result.unlabeled_flows;
            continue;
        }
        flow.label = it->second;
        classes.push_back(it->second);
        result.dataset.flows.push_back(std::move(flow));
    }
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    result.dataset.classes = std::move(classes);
    return result;
}

} // namespace flowforest
