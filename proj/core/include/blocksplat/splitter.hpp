#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "blocksplat/camera.hpp"
#include "blocksplat/cloud.hpp"
#include "blocksplat/math.hpp"

namespace blocksplat {

struct Aabb {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Zero();

    bool contains(const Vec3& p) const {
        return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
    }
    Vec3 center() const { return 0.5 * (min + max); }
    Vec3 extent() const { return max - min; }

    // Euclidean distance from p to the closed box, 0 inside.
    double distance(const Vec3& p) const {
        const Vec3 d = (min - p).cwiseMax(p - max).cwiseMax(0.0);
        return d.norm();
    }
};

// Componentwise min/max of a non-empty point set. Throws on empty input.
Aabb tight_aabb(const std::vector<Vec3>& points);

struct CoreBlock {
    Aabb box;
    std::vector<size_t> point_indices;
};

struct SplitOptions {
    int vertical_axis = 1;      // never chosen as a split axis
    bool midpoint_plane = false; // box-midpoint split instead of the median
};

// Recursive balanced bipartition into exactly k cells. Each step splits the
// most populated cell along its longer ground axis at the median point
// (ties broken by point index), then re-tightens both children. Throws
// InvalidArgument("over-partitioned") when k exceeds the point count.
std::vector<CoreBlock> split_recursive(const std::vector<Vec3>& points, uint32_t k,
                                       const SplitOptions& options = {});

struct BlockPartition {
    uint32_t k = 0;
    std::vector<Aabb> core;
    std::vector<Aabb> expanded;
    std::vector<std::vector<size_t>> block_points;      // indices into points
    std::vector<std::vector<size_t>> block_views;       // indices into views
    std::vector<std::vector<uint64_t>> block_gaussians; // Gaussian IDs
    // Gaussians owned by two or more blocks; owner lists ascending.
    std::map<uint64_t, std::vector<uint32_t>> shared;
};

// Grows each core box by `scale` about its center on the ground axes (the
// vertical axis stretches to cover the whole scene) and assigns:
//   points and Gaussians to every block whose expanded box contains them
//   (closed faces, so boundaries multi-assign); Gaussians outside every box
//   go to the nearest one;
//   views by camera-center containment, falling back to the nearest
//   expanded-box center.
BlockPartition expand_and_assign(const std::vector<CoreBlock>& blocks,
                                 const std::vector<Vec3>& points,
                                 const std::vector<CameraView>& views,
                                 const GaussianCloud& gaussians, double scale,
                                 const SplitOptions& options = {});

} // namespace blocksplat
