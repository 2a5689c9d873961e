#include "blocksplat/splitter.hpp"

#include <algorithm>
#include <limits>

#include "blocksplat/errors.hpp"

namespace blocksplat {

Aabb tight_aabb(const std::vector<Vec3>& points) {
    if (points.empty()) throw InvalidArgument("empty point set");
    Aabb box{points[0], points[0]};
    for (const Vec3& p : points) {
        box.min = box.min.cwiseMin(p);
        box.max = box.max.cwiseMax(p);
    }
    return box;
}

namespace {

Aabb tight_aabb_indexed(const std::vector<Vec3>& points, const std::vector<size_t>& idx) {
    Aabb box{points[idx[0]], points[idx[0]]};
    for (size_t i : idx) {
        box.min = box.min.cwiseMin(points[i]);
        box.max = box.max.cwiseMax(points[i]);
    }
    return box;
}

// Longer ground-plane axis of the cell's box; the vertical axis is excluded.
int pick_axis(const Aabb& box, int vertical_axis) {
    int best = -1;
    double best_len = -1.0;
    for (int a = 0; a < 3; ++a) {
        if (a == vertical_axis) continue;
        const double len = box.max[a] - box.min[a];
        if (len > best_len) {
            best_len = len;
            best = a;
        }
    }
    return best;
}

} // namespace

std::vector<CoreBlock> split_recursive(const std::vector<Vec3>& points, uint32_t k,
                                       const SplitOptions& options) {
    if (k < 1) throw InvalidArgument("k must be at least 1");
    if (points.empty()) throw InvalidArgument("empty point set");
    if (k > points.size()) throw InvalidArgument("over-partitioned");

    std::vector<CoreBlock> cells(1);
    cells[0].point_indices.resize(points.size());
    for (size_t i = 0; i < points.size(); ++i) cells[0].point_indices[i] = i;
    cells[0].box = tight_aabb(points);

    while (cells.size() < k) {
        // Split the most populated cell; ties go to the earliest.
        size_t target = 0;
        for (size_t c = 1; c < cells.size(); ++c)
            if (cells[c].point_indices.size() > cells[target].point_indices.size()) target = c;

        CoreBlock cell = std::move(cells[target]);
        const int axis = pick_axis(cell.box, options.vertical_axis);
        std::vector<size_t>& idx = cell.point_indices;
        std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
            if (points[a][axis] != points[b][axis]) return points[a][axis] < points[b][axis];
            return a < b;
        });

        size_t cut;
        if (options.midpoint_plane) {
            const double plane = 0.5 * (cell.box.min[axis] + cell.box.max[axis]);
            cut = static_cast<size_t>(
                std::lower_bound(idx.begin(), idx.end(), plane,
                                 [&](size_t a, double v) { return points[a][axis] < v; }) -
                idx.begin());
            // Degenerate planes still have to produce two non-empty cells.
            cut = std::clamp<size_t>(cut, 1, idx.size() - 1);
        } else {
            cut = idx.size() / 2;
        }

        CoreBlock left, right;
        left.point_indices.assign(idx.begin(), idx.begin() + static_cast<ptrdiff_t>(cut));
        right.point_indices.assign(idx.begin() + static_cast<ptrdiff_t>(cut), idx.end());
        left.box = tight_aabb_indexed(points, left.point_indices);
        right.box = tight_aabb_indexed(points, right.point_indices);
        cells[target] = std::move(left);
        cells.push_back(std::move(right));
    }
    for (CoreBlock& c : cells) std::sort(c.point_indices.begin(), c.point_indices.end());
    return cells;
}

BlockPartition expand_and_assign(const std::vector<CoreBlock>& blocks,
                                 const std::vector<Vec3>& points,
                                 const std::vector<CameraView>& views,
                                 const GaussianCloud& gaussians, double scale,
                                 const SplitOptions& options) {
    if (scale < 1.0) throw InvalidArgument("expansion scale must be >= 1");
    BlockPartition part;
    part.k = static_cast<uint32_t>(blocks.size());
    part.core.reserve(blocks.size());
    for (const CoreBlock& b : blocks) part.core.push_back(b.box);

    // Vertical coverage spans everything that can be assigned.
    const int va = options.vertical_axis;
    double vmin = std::numeric_limits<double>::infinity(), vmax = -vmin;
    for (const Vec3& p : points) {
        vmin = std::min(vmin, p[va]);
        vmax = std::max(vmax, p[va]);
    }
    for (size_t i = 0; i < gaussians.size(); ++i) {
        const Vec3 p = gaussians.position(i);
        vmin = std::min(vmin, p[va]);
        vmax = std::max(vmax, p[va]);
    }

    part.expanded.reserve(blocks.size());
    for (const CoreBlock& b : blocks) {
        Aabb e = b.box;
        for (int a = 0; a < 3; ++a) {
            if (a == va) continue;
            const double c = 0.5 * (b.box.min[a] + b.box.max[a]);
            const double half = 0.5 * (b.box.max[a] - b.box.min[a]) * scale;
            // Clamped so rounding in c +- half never shrinks a face: the
            // expanded box must contain the core box.
            e.min[a] = std::min(b.box.min[a], c - half);
            e.max[a] = std::max(b.box.max[a], c + half);
        }
        e.min[va] = vmin;
        e.max[va] = vmax;
        part.expanded.push_back(e);
    }

    const uint32_t k = part.k;
    part.block_points.resize(k);
    part.block_views.resize(k);
    part.block_gaussians.resize(k);

    for (size_t i = 0; i < points.size(); ++i)
        for (uint32_t b = 0; b < k; ++b)
            if (part.expanded[b].contains(points[i])) part.block_points[b].push_back(i);

    for (size_t i = 0; i < gaussians.size(); ++i) {
        const Vec3 p = gaussians.position(i);
        uint32_t owners = 0;
        for (uint32_t b = 0; b < k; ++b) {
            if (part.expanded[b].contains(p)) {
                part.block_gaussians[b].push_back(gaussians.ids[i]);
                ++owners;
            }
        }
        if (owners == 0) {
            // Initialization noise can push a Gaussian outside every box.
            uint32_t best = 0;
            double best_d = part.expanded[0].distance(p);
            for (uint32_t b = 1; b < k; ++b) {
                const double d = part.expanded[b].distance(p);
                if (d < best_d) {
                    best_d = d;
                    best = b;
                }
            }
            part.block_gaussians[best].push_back(gaussians.ids[i]);
            owners = 1;
        }
        if (owners >= 2) {
            std::vector<uint32_t>& who = part.shared[gaussians.ids[i]];
            for (uint32_t b = 0; b < k; ++b)
                if (part.expanded[b].contains(p)) who.push_back(b);
        }
    }

    for (size_t v = 0; v < views.size(); ++v) {
        const Vec3 c = views[v].center();
        bool placed = false;
        for (uint32_t b = 0; b < k; ++b) {
            if (part.expanded[b].contains(c)) {
                part.block_views[b].push_back(v);
                placed = true;
            }
        }
        if (!placed) {
            uint32_t best = 0;
            double best_d = (part.expanded[0].center() - c).squaredNorm();
            for (uint32_t b = 1; b < k; ++b) {
                const double d = (part.expanded[b].center() - c).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = b;
                }
            }
            part.block_views[best].push_back(v);
        }
    }
    return part;
}

} // namespace blocksplat
