#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "blocksplat/camera.hpp"
#include "blocksplat/cloud.hpp"
#include "blocksplat/image.hpp"

namespace blocksplat {

// Sparse scene geometry point: position plus 8-bit color.
struct ScenePoint {
    Eigen::Vector3f position = Eigen::Vector3f::Zero();
    std::array<uint8_t, 3> rgb{0, 0, 0};
};

// Everything a training run consumes: posed views, seed points, and an
// optional Gaussian checkpoint.
struct SceneDataset {
    std::vector<ScenePoint> points;
    std::vector<CameraView> views;
    bool has_checkpoint = false;
    GaussianCloud checkpoint;
};

// Binary scene container I/O. Little-endian, magic "DOGS", version u32,
// then tagged sections (4-byte tag, u64 payload length, payload):
//   CAMS  posed views
//   PNTS  seed points
//   GSPL  Gaussian checkpoint (f32 parameter arrays)
// Unknown tags and repeated tags are format errors; sections may appear in
// any order.
inline constexpr uint32_t kSceneFormatVersion = 1;

std::vector<uint8_t> encode_scene(const SceneDataset& scene);
SceneDataset decode_scene(const uint8_t* data, size_t size);

void save_scene(const std::string& path, const SceneDataset& scene);
SceneDataset load_scene(const std::string& path);

// Checkpoint parameters persist as f32; this applies the same narrowing to
// an in-memory cloud so tests can state save/load identity exactly.
GaussianCloud narrow_to_f32(const GaussianCloud& cloud);

// A dataset together with its ground-truth images, one per view.
struct LoadedScene {
    SceneDataset dataset;
    std::vector<Image> images;
};

// Writes `dir`/scene.dogs plus gt/view_NNNNN.ppm per view and points each
// view's image_path at its file. Returns the scene file path.
std::string save_scene_bundle(const std::string& dir, const LoadedScene& scene);

// Loads a scene file and every view image it references (paths are taken
// relative to the scene file's directory).
LoadedScene load_scene_bundle(const std::string& scene_path);

} // namespace blocksplat
