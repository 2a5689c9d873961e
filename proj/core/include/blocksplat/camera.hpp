#pragma once

#include <cstdint>
#include <string>

#include "blocksplat/math.hpp"

namespace blocksplat {

// Pinhole camera. The pose maps world to camera coordinates
// (x_c = R x_w + t); the camera looks down +z, x right, y down.
// `rotation_q` is the stored form; `rotation` is its cached matrix and must
// only change through set_rotation_quat so the two stay bit-consistent.
struct CameraView {
    uint64_t view_id = 0;
    double fx = 0, fy = 0, cx = 0, cy = 0;
    Vec4 rotation_q = Vec4(1, 0, 0, 0);
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    uint32_t width = 0, height = 0;
    std::string image_path;

    void set_rotation_quat(const Vec4& q) {
        rotation_q = q;
        rotation = quat_to_rotation(q);
    }

    Vec3 to_camera(const Vec3& p_world) const { return rotation * p_world + translation; }

    // Optical center in world coordinates: -R^T t.
    Vec3 center() const { return -(rotation.transpose() * translation); }

    // Perspective projection of a camera-space point onto the pixel grid.
    Vec2 project(const Vec3& p_cam) const {
        return Vec2(fx * p_cam.x() / p_cam.z() + cx, fy * p_cam.y() / p_cam.z() + cy);
    }
};

// Camera at `position` looking at `target`. `world_up` resolves the roll;
// image y points down. The pose round-trips through the quaternion once so
// stored and cached rotations agree exactly.
inline CameraView look_at(const Vec3& position, const Vec3& target, const Vec3& world_up,
                          double fx, double fy, double cx, double cy,
                          uint32_t width, uint32_t height) {
    const Vec3 forward = (target - position).normalized();
    const Vec3 right = forward.cross(world_up).normalized();
    const Vec3 down = forward.cross(right);
    Mat3 r;
    r.row(0) = right;
    r.row(1) = down;
    r.row(2) = forward;
    CameraView cam;
    cam.set_rotation_quat(rotation_to_quat(r));
    cam.translation = -(cam.rotation * position);
    cam.fx = fx; cam.fy = fy; cam.cx = cx; cam.cy = cy;
    cam.width = width; cam.height = height;
    return cam;
}

} // namespace blocksplat
