#pragma once

#include "granseg/core_types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace granseg {

enum class ObjectKind { two_part_barbell, body_with_limbs, concentric_shapes };

std::string to_string(ObjectKind k);

/// One image with one annotated object and (optionally) its part partition.
struct Scene {
    std::string id;
    Image image;
    BinaryMask object;
    std::vector<BinaryMask> parts;
    /// Area of each part over the object area.
    std::vector<double> part_granularity;
    ObjectKind kind = ObjectKind::two_part_barbell;
};

struct SyntheticConfig {
    int canvas = 128;
    std::vector<ObjectKind> kinds{ObjectKind::two_part_barbell, ObjectKind::body_with_limbs,
                                  ObjectKind::concentric_shapes};
};

/// Deterministic scenes: scene i depends only on (seed, i, config).
std::vector<Scene> generate_scenes(std::uint64_t seed, int count, const SyntheticConfig& cfg = {});
Scene generate_scene(std::uint64_t seed, int index, const SyntheticConfig& cfg = {});

/// Folder layout:
///   images/<id>.png          RGB image
///   masks/<id>.png           object mask, {0,255}
///   parts/<id>/<k>.png       optional part masks
void export_folder(const std::vector<Scene>& scenes, const std::filesystem::path& dir);

/// Loads the folder layout above. Images (and masks) are resampled to
/// `resize_to` x `resize_to` when it is positive.
std::vector<Scene> load_folder(const std::filesystem::path& dir, int resize_to = 0);

} // namespace granseg
