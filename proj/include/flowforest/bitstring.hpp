#pragma once

#include <cstdint>
#include <cstddef>
#include <vector>

namespace flowforest {

/// Fixed-width bit vector backed by bytes, LSB-first within the string.
/// Models the per-flow feature register: fields are addressed by
/// (offset, width) pairs with width <= 64.
class bitstring {
public:
    bitstring() = default;
    explicit bitstring(size_t width_bits)
        : width_(width_bits), bytes_((width_bits + 7) / 8, 0) {}

    size_t width() const { return width_; }

    uint64_t get(size_t offset, size_t width) const {
        uint64_t v = 0;
        for (size_t i = 0; i < width; ++i) {
            size_t bit = offset + i;
            if (bytes_[bit >> 3] & (1u << (bit & 7))) v |= (uint64_t{1} << i);
        }
        return v;
    }

    void set(size_t offset, size_t width, uint64_t value) {
        for (size_t i = 0; i < width; ++i) {
            size_t bit = offset + i;
            uint8_t mask = static_cast<uint8_t>(1u << (bit & 7));
            if (value & (uint64_t{1} << i))
                bytes_[bit >> 3] |= mask;
            else
                bytes_[bit >> 3] &= static_cast<uint8_t>(~mask);
        }
    }

    void clear() { std::fill(bytes_.begin(), bytes_.end(), 0); }

    bool operator==(const bitstring&) const = default;

private:
    size_t width_ = 0;
    std::vector<uint8_t> bytes_;
};

} // namespace flowforest
