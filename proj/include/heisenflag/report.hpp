#pragma once

// Report plumbing: every CSV/JSON report embeds the config hash, library
// version, grid resolution and scale band, and runs are deterministic for a
// fixed config + seed.

#include <json.hpp>

#include "scales.hpp"
#include "util.hpp"

namespace heisenflag {

inline constexpr const char* kLibraryVersion = "0.1.0";

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline nlohmann::json report_header(const nlohmann::json& config, const GridSpec& spec,
                                    const ScaleGrid& scales, std::uint64_t seed) {
    nlohmann::json h;
    h["library_version"] = kLibraryVersion;
    h["config_hash"] = fnv1a(config.dump());
    h["rng"] = Rng::algorithm();
    h["seed"] = seed;
    h["grid"] = {{"nu", spec.nu},   {"Z", spec.Z},   {"T", spec.T},
                 {"n_z", spec.n_z}, {"n_t", spec.n_t}, {"t_periodic", spec.t_periodic}};
    h["scale_band"] = {{"r", scales.r_values}, {"s", scales.s_values}};
    return h;
}

}  // namespace heisenflag
