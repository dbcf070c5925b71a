#pragma once

#include <cstdint>

#include "gsr/common.hpp"
#include "gsr/vec.hpp"

namespace gsr {

// Pinhole camera. Camera space is x right, y down, z forward; pixels are
// u = fx * x/z + cx, v = fy * y/z + cy with v growing downward.
struct CameraModel {
    Vec3 position;
    Vec3 target;
    Vec3 up{0, 1, 0};
    double focal_px = 100.0;
    double cx = 0, cy = 0;
    int width = 0, height = 0;
    double znear = 0.05, zfar = 100.0;

    struct Basis {
        Vec3 right, down, forward; // camera axes expressed in world coords
    };

    Basis basis() const {
        Vec3 forward = (target - position).normalized();
        Vec3 side = forward.cross(up);
        if (side.norm() <= 1e-9)
            throw ContractError("camera: view direction is parallel to the up vector");
        Vec3 right = side.normalized();
        Vec3 down = forward.cross(right); // = -true_up
        return {right, down, forward};
    }

    void validate() const {
        if (focal_px <= 0) throw ContractError(msg("camera: focal must be > 0, got ", focal_px));
        if (!(znear < zfar))
            throw ContractError(msg("camera: near ", znear, " must be < far ", zfar));
        if (width <= 0 || height <= 0)
            throw ContractError(msg("camera: image size ", width, "x", height, " invalid"));
        basis(); // checks up/forward degeneracy
    }

    Vec3 world_to_cam(const Vec3& p) const {
        Basis b = basis();
        Vec3 d = p - position;
        return {d.dot(b.right), d.dot(b.down), d.dot(b.forward)};
    }
};

// Normalized focal (intrinsics expressed relative to image size) to pixels.
// The single conversion used everywhere: focal_px = focal_norm * width / 2.
inline double pixel_focal(double focal_norm, int width) {
    return focal_norm * static_cast<double>(width) / 2.0;
}

// Orbit camera looking at `target` from yaw/pitch on a sphere of `radius`.
// Yaw 0 is the front convention (+z axis), yaw grows toward +x; pitch > 0 is
// above the equator. Angles are radians.
inline CameraModel orbit_camera(double yaw, double pitch, double radius, const Vec3& target,
                                double focal_px, int width, int height) {
    CameraModel cam;
    cam.target = target;
    cam.position = target + Vec3{radius * std::sin(yaw) * std::cos(pitch),
                                 radius * std::sin(pitch),
                                 radius * std::cos(yaw) * std::cos(pitch)};
    cam.focal_px = focal_px;
    cam.width = width;
    cam.height = height;
    cam.cx = static_cast<double>(width) / 2.0;
    cam.cy = static_cast<double>(height) / 2.0;
    return cam;
}

} // namespace gsr
