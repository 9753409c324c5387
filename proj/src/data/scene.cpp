#include <cmath>

#include <nlohmann/json.hpp>

#include "nvs/data/scene.hpp"

namespace nvs::data {

namespace {

struct Hit {
    double t = 0;
    Vector3d normal;   // outward, unit
    const Primitive* prim = nullptr;
};

std::optional<double> hit_sphere(const Primitive& p, const geom::Ray& ray) {
    const Vector3d oc = ray.origin - p.position;
    const double r = p.size.x();
    const double b = oc.dot(ray.direction);
    const double c = oc.squaredNorm() - r * r;
    const double disc = b * b - c;
    if (disc < 0) return std::nullopt;
    const double sq = std::sqrt(disc);
    double t = -b - sq;
    if (t < 1e-6) t = -b + sq;
    if (t < 1e-6) return std::nullopt;
    return t;
}

std::optional<double> hit_box(const Primitive& p, const geom::Ray& ray) {
    double tmin = 1e-6, tmax = 1e30;
    for (int a = 0; a < 3; ++a) {
        const double lo = p.position[a] - p.size[a];
        const double hi = p.position[a] + p.size[a];
        const double d = ray.direction[a];
        if (std::abs(d) < 1e-12) {
            if (ray.origin[a] < lo || ray.origin[a] > hi) return std::nullopt;
            continue;
        }
        double t0 = (lo - ray.origin[a]) / d;
        double t1 = (hi - ray.origin[a]) / d;
        if (t0 > t1) std::swap(t0, t1);
        tmin = std::max(tmin, t0);
        tmax = std::min(tmax, t1);
        if (tmin > tmax) return std::nullopt;
    }
    return tmin;
}

// Cylinder with axis along world Y through p.position;
// size = (radius, half_height, -).
std::optional<double> hit_cylinder(const Primitive& p, const geom::Ray& ray) {
    const double r = p.size.x();
    const double hh = p.size.y();
    const Vector3d oc = ray.origin - p.position;
    const double dx = ray.direction.x(), dz = ray.direction.z();
    const double ox = oc.x(), oz = oc.z();
    double best = 1e30;
    const double a = dx * dx + dz * dz;
    if (a > 1e-12) {
        const double b = ox * dx + oz * dz;
        const double c = ox * ox + oz * oz - r * r;
        const double disc = b * b - a * c;
        if (disc >= 0) {
            const double sq = std::sqrt(disc);
            for (const double t : {(-b - sq) / a, (-b + sq) / a}) {
                if (t > 1e-6 && t < best && std::abs(oc.y() + t * ray.direction.y()) <= hh)
                    best = t;
            }
        }
    }
    // end caps
    if (std::abs(ray.direction.y()) > 1e-12) {
        for (const double ycap : {-hh, hh}) {
            const double t = (ycap - oc.y()) / ray.direction.y();
            if (t > 1e-6 && t < best) {
                const double px = ox + t * dx, pz = oz + t * dz;
                if (px * px + pz * pz <= r * r) best = t;
            }
        }
    }
    if (best > 1e29) return std::nullopt;
    return best;
}

Vector3d normal_at(const Primitive& p, const Vector3d& point) {
    const Vector3d local = point - p.position;
    switch (p.type) {
        case PrimitiveType::Sphere:
            return local.normalized();
        case PrimitiveType::Box: {
            Vector3d n = Vector3d::Zero();
            double best = -1e30;
            for (int a = 0; a < 3; ++a) {
                const double d = std::abs(local[a]) - p.size[a];
                if (d > best) {
                    best = d;
                    n = Vector3d::Zero();
                    n[a] = local[a] >= 0 ? 1.0 : -1.0;
                }
            }
            return n;
        }
        case PrimitiveType::Cylinder: {
            if (std::abs(local.y()) > p.size.y() - 1e-6)
                return Vector3d(0, local.y() >= 0 ? 1 : -1, 0);
            Vector3d n(local.x(), 0, local.z());
            return n.normalized();
        }
    }
    return Vector3d::UnitY();
}

std::optional<double> hit_primitive(const Primitive& p, const geom::Ray& ray) {
    switch (p.type) {
        case PrimitiveType::Sphere:
            return hit_sphere(p, ray);
        case PrimitiveType::Box:
            return hit_box(p, ray);
        case PrimitiveType::Cylinder:
            return hit_cylinder(p, ray);
    }
    return std::nullopt;
}

Vector3d shade(const Primitive& p, const Vector3d& point, const Vector3d& normal) {
    Vector3d albedo = p.albedo;
    if (p.texture != TextureType::None) {
        const Vector3d local = (point - p.position) * p.texture_scale;
        bool flip = false;
        if (p.texture == TextureType::Stripe) {
            flip = std::sin(local.x() + local.y()) > 0;
        } else {
            const int sx = static_cast<int>(std::floor(local.x()));
            const int sy = static_cast<int>(std::floor(local.y()));
            const int sz = static_cast<int>(std::floor(local.z()));
            flip = (sx + sy + sz) % 2 != 0;
        }
        if (flip) albedo = p.albedo2;
    }
    static const Vector3d light = Vector3d(0.5, 1.0, 0.3).normalized();
    const double diff = std::max(0.0, normal.dot(light));
    const Vector3d c = albedo * (0.35 + 0.65 * diff);
    return c.cwiseMin(1.0).cwiseMax(0.0);
}

}  // namespace

double Primitive::bounding_radius() const {
    switch (type) {
        case PrimitiveType::Sphere:
            return size.x();
        case PrimitiveType::Box:
            return size.norm();
        case PrimitiveType::Cylinder:
            return std::sqrt(size.x() * size.x() + size.y() * size.y());
    }
    return size.norm();
}

nlohmann::json SceneSpec::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    nlohmann::json prims = nlohmann::json::array();
    for (const auto& p : primitives) {
        nlohmann::json pj;
        pj["type"] = static_cast<int>(p.type);
        pj["position"] = {p.position.x(), p.position.y(), p.position.z()};
        pj["size"] = {p.size.x(), p.size.y(), p.size.z()};
        pj["albedo"] = {p.albedo.x(), p.albedo.y(), p.albedo.z()};
        pj["albedo2"] = {p.albedo2.x(), p.albedo2.y(), p.albedo2.z()};
        pj["texture"] = static_cast<int>(p.texture);
        pj["texture_scale"] = p.texture_scale;
        prims.push_back(pj);
    }
    j["primitives"] = prims;
    return j;
}

SceneSpec SceneSpec::from_json(const nlohmann::json& j) {
    SceneSpec s;
    s.seed = j.at("seed").get<uint64_t>();
    for (const auto& pj : j.at("primitives")) {
        Primitive p;
        p.type = static_cast<PrimitiveType>(pj.at("type").get<int>());
        auto rd3 = [](const nlohmann::json& a) {
            return Vector3d(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
        };
        p.position = rd3(pj.at("position"));
        p.size = rd3(pj.at("size"));
        p.albedo = rd3(pj.at("albedo"));
        p.albedo2 = rd3(pj.at("albedo2"));
        p.texture = static_cast<TextureType>(pj.at("texture").get<int>());
        p.texture_scale = pj.at("texture_scale").get<double>();
        s.primitives.push_back(p);
    }
    return s;
}

SceneSpec generate_scene(uint64_t seed) {
    SceneSpec spec;
    spec.seed = seed;
    Rng rng(seed ^ 0xA5C39E1Bull);
    // clutter-weighted: fuller scenes are more common
    const double cu = rng.uniform();
    const int count = cu < 0.1 ? 1 : cu < 0.3 ? 2 : cu < 0.6 ? 3 : 4;
    for (int i = 0; i < count; ++i) {
        Primitive p;
        const int type = static_cast<int>(rng.uniform_int(3));
        p.type = static_cast<PrimitiveType>(type);
        switch (p.type) {
            case PrimitiveType::Sphere:
                p.size = Vector3d::Constant(rng.uniform(0.12, 0.3));
                break;
            case PrimitiveType::Box:
                p.size = Vector3d(rng.uniform(0.1, 0.25), rng.uniform(0.1, 0.25),
                                  rng.uniform(0.1, 0.25));
                break;
            case PrimitiveType::Cylinder:
                p.size = Vector3d(rng.uniform(0.08, 0.2), rng.uniform(0.12, 0.3), 0);
                break;
        }
        const double br = p.bounding_radius();
        const double max_off = std::max(0.0, 0.7 - br);
        // random position inside the allowed ball
        Vector3d dir(rng.normal(), rng.normal(), rng.normal());
        if (dir.norm() < 1e-9) dir = Vector3d::UnitX();
        dir.normalize();
        p.position = dir * (max_off * std::cbrt(rng.uniform()));
        p.albedo = Vector3d(rng.uniform(0.1, 0.95), rng.uniform(0.1, 0.95),
                            rng.uniform(0.1, 0.95));
        p.albedo2 = Vector3d(rng.uniform(0.1, 0.95), rng.uniform(0.1, 0.95),
                             rng.uniform(0.1, 0.95));
        const int tex = static_cast<int>(rng.uniform_int(3));
        p.texture = static_cast<TextureType>(tex);
        p.texture_scale = rng.uniform(6.0, 14.0);
        spec.primitives.push_back(p);
    }
    return spec;
}

std::vector<geom::CameraPose> sample_views(const SceneSpec& spec, int n,
                                           uint64_t seed, int image_size) {
    if (n < 1) throw BadConfig("sample_views: n must be >= 1");
    Rng rng(seed ^ (spec.seed * 0x9E3779B97F4A7C15ull) ^ 0x517CC1B7ull);
    std::vector<geom::CameraPose> poses;
    poses.reserve(static_cast<size_t>(n));
    const double deg = M_PI / 180.0;
    const double az0 = rng.uniform(0, 2 * M_PI);
    for (int i = 0; i < n; ++i) {
        // stratified azimuth: one sample per 2pi/n sector
        const double az = az0 + (i + rng.uniform(0.15, 0.85)) * 2 * M_PI / n;
        const double el = rng.uniform(-10 * deg, 50 * deg);
        const double radius = rng.uniform(1.5, 2.5);
        const Vector3d eye(radius * std::cos(el) * std::cos(az),
                           radius * std::sin(el),
                           radius * std::cos(el) * std::sin(az));
        const double focal = 1.2 * image_size;
        poses.push_back(geom::look_at_pose(eye, Vector3d::Zero(), focal, focal,
                                           image_size, image_size));
    }
    return poses;
}

std::optional<double> intersect_scene(const SceneSpec& spec, const geom::Ray& ray) {
    double best = 1e30;
    for (const auto& p : spec.primitives) {
        if (auto t = hit_primitive(p, ray)) best = std::min(best, *t);
    }
    if (best > 1e29) return std::nullopt;
    return best;
}

ViewRecord render_scene(const SceneSpec& spec, const geom::CameraPose& pose,
                        int view_id) {
    ViewRecord rec;
    rec.scene_id = spec.seed;
    rec.view_id = view_id;
    rec.pose = pose;
    rec.image.width = pose.width;
    rec.image.height = pose.height;
    rec.image.channels = 3;
    rec.image.pixels.assign(static_cast<size_t>(pose.width) * pose.height * 3, 255);
    rec.mask.width = pose.width;
    rec.mask.height = pose.height;
    rec.mask.channels = 1;
    rec.mask.pixels.assign(static_cast<size_t>(pose.width) * pose.height, 0);

    const geom::RayGrid grid = geom::camera_rays(pose);
    for (int v = 0; v < pose.height; ++v) {
        for (int u = 0; u < pose.width; ++u) {
            const geom::Ray& ray = grid.at(v, u);
            double best = 1e30;
            const Primitive* hit = nullptr;
            for (const auto& p : spec.primitives) {
                if (auto t = hit_primitive(p, ray)) {
                    if (*t < best) {
                        best = *t;
                        hit = &p;
                    }
                }
            }
            if (!hit) continue;
            const Vector3d point = ray.origin + best * ray.direction;
            const Vector3d normal = normal_at(*hit, point);
            const Vector3d c = shade(*hit, point, normal);
            for (int k = 0; k < 3; ++k)
                rec.image.at(v, u, k) =
                    static_cast<uint8_t>(std::lround(c[k] * 255.0));
            rec.mask.at(v, u, 0) = 255;
        }
    }
    return rec;
}

}  // namespace nvs::data
