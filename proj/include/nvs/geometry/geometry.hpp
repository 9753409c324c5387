#pragma once

#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "nvs/core/errors.hpp"

// Camera convention used throughout: right-handed, camera looks down +Z,
// image x right / y down, pixel centers at integer+0.5. Extrinsics map
// world to camera: x_cam = R * x_world + t.
namespace nvs::geom {

using Eigen::Matrix3d;
using Eigen::Vector3d;

struct CameraPose {
    Matrix3d rotation = Matrix3d::Identity();  // world -> camera
    Vector3d translation = Vector3d::Zero();
    double fx = 1, fy = 1, cx = 0, cy = 0;
    int width = 0, height = 0;

    Vector3d center() const { return -rotation.transpose() * translation; }
    Vector3d optical_axis_world() const { return rotation.row(2).transpose(); }

    // Checks orthonormality, det(+1) and intrinsic ranges; throws BadConfig.
    void validate() const;

    nlohmann::json to_json() const;
    static CameraPose from_json(const nlohmann::json& j);
};

struct Ray {
    Vector3d origin = Vector3d::Zero();
    Vector3d direction = Vector3d::UnitZ();
};

struct PluckerRay {
    Vector3d direction;  // unit
    Vector3d moment;     // origin x direction
};

struct RayGrid {
    int width = 0, height = 0;
    std::vector<Ray> rays;  // row-major, one per pixel
    CameraPose pose;

    const Ray& at(int v, int u) const { return rays[static_cast<size_t>(v) * width + u]; }
};

// x -> scale * rotation * x + translation
struct SimilarityTransform {
    double scale = 1.0;
    Matrix3d rotation = Matrix3d::Identity();
    Vector3d translation = Vector3d::Zero();

    Vector3d apply(const Vector3d& x) const { return scale * (rotation * x) + translation; }
    SimilarityTransform inverse() const;
    CameraPose apply_to_pose(const CameraPose& pose) const;
};

// One ray per pixel through pixel centers, expressed in world frame.
RayGrid camera_rays(const CameraPose& pose);
// As above but on an arbitrary grid resolution sharing the pose's frustum
// (intrinsics rescaled). Used for feature grids coarser than the image.
RayGrid camera_rays_at(const CameraPose& pose, int grid_w, int grid_h);

PluckerRay plucker_encode(const Ray& ray);

// Least-squares point closest to a bundle of rays. Throws DegenerateRays
// when the normal matrix is near-singular (all rays near-parallel).
Vector3d solve_anchor_point(const std::vector<Ray>& rays);

// Appendix-style anchored frame: solves the gaze point from the cameras'
// optical axes, recenters it to the origin, aligns the first camera's axes
// with the world axes and rescales so the first camera sits at unit
// distance. Returns the transform plus all poses re-expressed in it.
std::pair<SimilarityTransform, std::vector<CameraPose>> anchor_frame(
    const std::vector<CameraPose>& poses);

// Camera at `eye` looking at `target` (world up (0,1,0)), given intrinsics.
CameraPose look_at_pose(const Vector3d& eye, const Vector3d& target, double fx,
                        double fy, int width, int height);

}  // namespace nvs::geom
