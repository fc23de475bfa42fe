#pragma once

#include "granseg/core_types.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace granseg {

struct ClickSimConfig {
    int disk_radius = 3;
    /// Minimum Euclidean distance between a newly sampled click and every existing click.
    int d_min = 5;

    void validate() const;
};

/// Two-channel disk encoding of a click set: channel 0 holds positive disks,
/// channel 1 negative disks, stored channel-major (2 x h x w).
struct DiskMap {
    int height = 0;
    int width = 0;
    std::vector<float> values;

    DiskMap() = default;
    DiskMap(int height, int width) : height(height), width(width), values(2 * static_cast<size_t>(height) * width, 0.0f) {}

    float at(int channel, int row, int col) const {
        return values[(static_cast<size_t>(channel) * height + row) * width + col];
    }
    float& at(int channel, int row, int col) {
        return values[(static_cast<size_t>(channel) * height + row) * width + col];
    }
    double channel_sum(int channel) const;
};

DiskMap encode_disk_map(const ClickSet& clicks, int height, int width, const ClickSimConfig& cfg);

/// Positive click at the interior-most point of the target.
Click first_click(const BinaryMask& gt);

/// Corrective click at the interior-most point of the largest error component.
/// False negatives win ties against false positives of equal size.
Click next_click_from_error(const BinaryMask& pred, const BinaryMask& gt);

/// Seeded uniform negative click inside the binarized map, at least d_min from
/// every existing click. Returns nullopt when no admissible pixel exists.
std::optional<Click> sample_negative_in_mask(const ProbabilityMap& current, const ClickSet& existing,
                                             double threshold, const ClickSimConfig& cfg, std::uint64_t rng_seed);

/// Squared distance between two clicks.
inline long long squared_distance(const Click& a, const Click& b) {
    const long long dr = a.row - b.row, dc = a.col - b.col;
    return dr * dr + dc * dc;
}

} // namespace granseg
