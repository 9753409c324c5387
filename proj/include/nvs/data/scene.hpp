#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "nvs/core/rng.hpp"
#include "nvs/data/image.hpp"
#include "nvs/geometry/geometry.hpp"

namespace nvs::data {

using Eigen::Vector3d;

enum class PrimitiveType { Sphere, Box, Cylinder };
enum class TextureType { None, Stripe, Checker };

struct Primitive {
    PrimitiveType type = PrimitiveType::Sphere;
    Vector3d position = Vector3d::Zero();
    // sphere: size.x = radius; box: half extents; cylinder: (radius, half height, -)
    Vector3d size = Vector3d(0.2, 0.2, 0.2);
    Vector3d albedo = Vector3d(0.5, 0.5, 0.5);
    Vector3d albedo2 = Vector3d(0.5, 0.5, 0.5);
    TextureType texture = TextureType::None;
    double texture_scale = 8.0;

    double bounding_radius() const;
};

// Fully determined by its seed; all geometry inside radius 0.7.
struct SceneSpec {
    uint64_t seed = 0;
    std::vector<Primitive> primitives;

    nlohmann::json to_json() const;
    static SceneSpec from_json(const nlohmann::json& j);
};

struct ViewRecord {
    img::Image8 image;  // RGB, white background
    img::Image8 mask;   // gray, 0/255
    geom::CameraPose pose;
    uint64_t scene_id = 0;
    int view_id = 0;
};

SceneSpec generate_scene(uint64_t seed);

// Look-at-origin cameras, stratified azimuth, elevation in [-10, 50] deg,
// radius in [1.5, 2.5].
std::vector<geom::CameraPose> sample_views(const SceneSpec& spec, int n,
                                           uint64_t seed, int image_size);

// Analytic ray-traced Lambertian render with exact silhouette mask.
ViewRecord render_scene(const SceneSpec& spec, const geom::CameraPose& pose,
                        int view_id = 0);

// Closest-hit query used by the renderer and by consistency tests.
// Returns distance along the ray, or nullopt on miss.
std::optional<double> intersect_scene(const SceneSpec& spec, const geom::Ray& ray);

}  // namespace nvs::data
