#include <cmath>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "nvs/geometry/geometry.hpp"

namespace nvs::geom {

void CameraPose::validate() const {
    const Matrix3d rtr = rotation.transpose() * rotation;
    if ((rtr - Matrix3d::Identity()).norm() > 1e-6)
        throw BadConfig("camera rotation is not orthonormal");
    if (std::abs(rotation.determinant() - 1.0) > 1e-6)
        throw BadConfig("camera rotation determinant is not +1");
    if (fx <= 0 || fy <= 0) throw BadConfig("focal lengths must be positive");
    if (cx < 0 || cx >= width || cy < 0 || cy >= height)
        throw BadConfig("principal point outside the image");
}

nlohmann::json CameraPose::to_json() const {
    nlohmann::json j;
    std::vector<double> r(9);
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) r[static_cast<size_t>(i * 3 + k)] = rotation(i, k);
    j["R"] = r;
    j["t"] = {translation.x(), translation.y(), translation.z()};
    j["fx"] = fx;
    j["fy"] = fy;
    j["cx"] = cx;
    j["cy"] = cy;
    j["w"] = width;
    j["h"] = height;
    return j;
}

CameraPose CameraPose::from_json(const nlohmann::json& j) {
    CameraPose p;
    const auto r = j.at("R").get<std::vector<double>>();
    if (r.size() != 9) throw BadConfig("pose JSON: R must have 9 entries");
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) p.rotation(i, k) = r[static_cast<size_t>(i * 3 + k)];
    const auto t = j.at("t").get<std::vector<double>>();
    if (t.size() != 3) throw BadConfig("pose JSON: t must have 3 entries");
    p.translation = Vector3d(t[0], t[1], t[2]);
    p.fx = j.at("fx").get<double>();
    p.fy = j.at("fy").get<double>();
    p.cx = j.at("cx").get<double>();
    p.cy = j.at("cy").get<double>();
    p.width = j.at("w").get<int>();
    p.height = j.at("h").get<int>();
    return p;
}

SimilarityTransform SimilarityTransform::inverse() const {
    SimilarityTransform inv;
    inv.scale = 1.0 / scale;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.scale) * (inv.rotation * translation);
    return inv;
}

CameraPose SimilarityTransform::apply_to_pose(const CameraPose& pose) const {
    CameraPose out = pose;
    out.rotation = pose.rotation * rotation.transpose();
    const Vector3d c_new = apply(pose.center());
    out.translation = -out.rotation * c_new;
    return out;
}

RayGrid camera_rays_at(const CameraPose& pose, int grid_w, int grid_h) {
    RayGrid g;
    g.width = grid_w;
    g.height = grid_h;
    g.pose = pose;
    g.rays.resize(static_cast<size_t>(grid_w) * grid_h);
    const double sx = static_cast<double>(grid_w) / pose.width;
    const double sy = static_cast<double>(grid_h) / pose.height;
    const double fx = pose.fx * sx, fy = pose.fy * sy;
    const double cx = pose.cx * sx, cy = pose.cy * sy;
    const Matrix3d r_t = pose.rotation.transpose();
    const Vector3d origin = pose.center();
    for (int v = 0; v < grid_h; ++v) {
        for (int u = 0; u < grid_w; ++u) {
            const Vector3d dir_cam((u + 0.5 - cx) / fx, (v + 0.5 - cy) / fy, 1.0);
            Ray& ray = g.rays[static_cast<size_t>(v) * grid_w + u];
            ray.origin = origin;
            ray.direction = (r_t * dir_cam).normalized();
        }
    }
    return g;
}

RayGrid camera_rays(const CameraPose& pose) {
    return camera_rays_at(pose, pose.width, pose.height);
}

PluckerRay plucker_encode(const Ray& ray) {
    return {ray.direction, ray.origin.cross(ray.direction)};
}

Vector3d solve_anchor_point(const std::vector<Ray>& rays) {
    if (rays.size() < 2) throw DegenerateRays("need at least 2 rays");
    Matrix3d a = Matrix3d::Zero();
    Vector3d b = Vector3d::Zero();
    for (const Ray& r : rays) {
        const Vector3d d = r.direction.normalized();
        const Matrix3d proj = Matrix3d::Identity() - d * d.transpose();
        a += proj;
        b += proj * r.origin;
    }
    Eigen::SelfAdjointEigenSolver<Matrix3d> es(a);
    if (es.eigenvalues().minCoeff() < 1e-8)
        throw DegenerateRays("rays are near-parallel; anchor point ill-conditioned");
    return a.ldlt().solve(b);
}

std::pair<SimilarityTransform, std::vector<CameraPose>> anchor_frame(
    const std::vector<CameraPose>& poses) {
    if (poses.empty()) throw BadConfig("anchor_frame: need at least one pose");
    Vector3d p;
    if (poses.size() == 1) {
        p = poses[0].center() + poses[0].optical_axis_world();
    } else {
        std::vector<Ray> axes;
        axes.reserve(poses.size());
        for (const auto& pose : poses)
            axes.push_back({pose.center(), pose.optical_axis_world()});
        p = solve_anchor_point(axes);
    }
    const Vector3d c1 = poses[0].center();
    const double dist = (p - c1).norm();
    if (dist < 1e-8) throw DegenerateAnchor("anchor point coincides with first camera");

    SimilarityTransform g;
    g.scale = 1.0 / dist;
    g.rotation = poses[0].rotation;
    g.translation = -g.scale * (g.rotation * p);

    std::vector<CameraPose> out;
    out.reserve(poses.size());
    for (const auto& pose : poses) out.push_back(g.apply_to_pose(pose));
    return {g, std::move(out)};
}

CameraPose look_at_pose(const Vector3d& eye, const Vector3d& target, double fx,
                        double fy, int width, int height) {
    const Vector3d fwd = (target - eye).normalized();
    Vector3d up(0, 1, 0);
    if (std::abs(fwd.dot(up)) > 0.999) up = Vector3d(1, 0, 0);
    const Vector3d right = fwd.cross(up).normalized();
    const Vector3d down = fwd.cross(right).normalized();
    CameraPose p;
    p.rotation.row(0) = right.transpose();
    p.rotation.row(1) = down.transpose();
    p.rotation.row(2) = fwd.transpose();
    p.translation = -p.rotation * eye;
    p.fx = fx;
    p.fy = fy;
    p.cx = width / 2.0;
    p.cy = height / 2.0;
    p.width = width;
    p.height = height;
    return p;
}

}  // namespace nvs::geom
