#include "flowforest/packet.hpp"

#include <charconv>
#include <cstring>

#include "flowforest/error.hpp"

namespace flowforest {

void FlowKey::to_bytes(uint8_t out[13]) const {
    out[0] = static_cast<uint8_t>(src_ip >> 24);
    out[1] = static_cast<uint8_t>(src_ip >> 16);
    out[2] = static_cast<uint8_t>(src_ip >> 8);
    out[3] = static_cast<uint8_t>(src_ip);
    out[4] = static_cast<uint8_t>(dst_ip >> 24);
    out[5] = static_cast<uint8_t>(dst_ip >> 16);
    out[6] = static_cast<uint8_t>(dst_ip >> 8);
    out[7] = static_cast<uint8_t>(dst_ip);
    out[8] = static_cast<uint8_t>(src_port >> 8);
    out[9] = static_cast<uint8_t>(src_port);
    out[10] = static_cast<uint8_t>(dst_port >> 8);
    out[11] = static_cast<uint8_t>(dst_port);
    out[12] = protocol;
}

size_t FlowKeyHash::operator()(const FlowKey& k) const {
    // FNV-1a over the canonical byte layout.
    uint8_t bytes[13];
    k.to_bytes(bytes);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return static_cast<size_t>(h);
}

uint32_t parse_ipv4(const std::string& dotted) {
    uint32_t addr = 0;
    const char* p = dotted.c_str();
    const char* end = p + dotted.size();
    for (int octet = 0; octet < 4; ++octet) {
        unsigned v = 0;
        auto [next, ec] = std::from_chars(p, end, v);
        if (ec != std::errc{} || v > 255)
            throw error(errc::malformed_csv, "bad IPv4 address: " + dotted);
        addr = (addr << 8) | v;
        p = next;
        if (octet < 3) {
            if (p >= end || *p != '.')
                throw error(errc::malformed_csv, "bad IPv4 address: " + dotted);
            ++p;
        }
    }
    if (p != end) throw error(errc::malformed_csv, "bad IPv4 address: " + dotted);
    return addr;
}

std::string format_ipv4(uint32_t addr) {
    return std::to_string((addr >> 24) & 0xff) + "." + std::to_string((addr >> 16) & 0xff) + "." +
           std::to_string((addr >> 8) & 0xff) + "." + std::to_string(addr & 0xff);
}

std::string format_flow_key(const FlowKey& key) {
    return format_ipv4(key.src_ip) + ":" + std::to_string(key.src_port) + "->" +
           format_ipv4(key.dst_ip) + ":" + std::to_string(key.dst_port) + "/" +
           std::to_string(key.protocol);
}

namespace {
struct FlagName {
    const char* name;
    uint8_t bit;
};
constexpr FlagName kFlagNames[] = {
    {"SYN", tcp_flag::syn}, {"ACK", tcp_flag::ack}, {"PSH", tcp_flag::psh},
    {"FIN", tcp_flag::fin}, {"RST", tcp_flag::rst}, {"ECE", tcp_flag::ece},
};
} // namespace

uint8_t parse_tcp_flags(const std::string& spec) {
    uint8_t flags = 0;
    size_t pos = 0;
    while (pos < spec.size()) {
        size_t bar = spec.find('|', pos);
        std::string tok = spec.substr(pos, bar == std::string::npos ? std::string::npos : bar - pos);
        if (!tok.empty()) {
            bool found = false;
            for (const auto& f : kFlagNames) {
                if (tok == f.name) {
                    flags |= f.bit;
                    found = true;
                    break;
                }
            }
            if (!found) throw error(errc::malformed_csv, "unknown TCP flag: " + tok);
        }
        if (bar == std::string::npos) break;
        pos = bar + 1;
    }
    return flags;
}

std::string format_tcp_flags(uint8_t flags) {
    std::string out;
    for (const auto& f : kFlagNames) {
        if (flags & f.bit) {
            if (!out.empty()) out += '|';
            out += f.name;
        }
    }
    return out;
}

} // namespace flowforest
