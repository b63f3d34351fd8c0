#pragma once

#include <stdexcept>
#include <string>

namespace flowforest {

enum class errc {
    malformed_capture,
    unsupported_link_type,
    malformed_csv,
    malformed_config,
    non_monotonic_timestamp,
    empty_context,
    empty_input,
    insufficient_samples,
    too_few_samples,
    length_mismatch,
    undefined_feature,
    depth_exceeded,
    hardware_limit_exceeded,
    no_model_found,
    missing_entry,
    usage,
};

/// Exception carrying a machine-readable error code and a human message.
class error : public std::runtime_error {
public:
    error(errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    errc code() const { return code_; }

private:
    errc code_;
};

} // namespace flowforest
