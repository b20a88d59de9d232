#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>

#include "pebm/energy_net.hpp"

namespace pebm {

// Per-axis affine transform applied to a dataset: y = (x - mean) / scale.
struct NormRecord {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> scale{1.0, 1.0, 1.0};
};

// Dataset-level metadata carried alongside the network parameters so that
// downstream commands can map raw inputs into the model's coordinate space.
struct CheckpointMeta {
    std::size_t m_points = 128;
    NormRecord norm;
    std::string norm_mode = "pooled"; // pooled | per_cloud | none
};

// Flat binary container: magic "EBPN1", length-prefixed UTF-8 key=value
// lines for the config, then named parameter tensors as
// (name length, name, rank, dims..., little-endian 64-bit floats).
void save_checkpoint(const std::filesystem::path& path, const EnergyNet& net,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
    EnergyNet net;
    CheckpointMeta meta;
};

// Validates tensor shapes against the stored config.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

} // namespace pebm
