#include <cmath>

#include "nvs/distill/distill.hpp"

namespace nvs::distill {

namespace {

// Slab intersection with the scene cube [-1,1]^3; returns false on miss.
bool ray_box(const geom::Ray& ray, double& t0, double& t1) {
    t0 = 1e-3;
    t1 = 1e30;
    for (int a = 0; a < 3; ++a) {
        const double d = ray.direction[a];
        if (std::abs(d) < 1e-12) {
            if (ray.origin[a] < -1.0 || ray.origin[a] > 1.0) return false;
            continue;
        }
        double lo = (-1.0 - ray.origin[a]) / d;
        double hi = (1.0 - ray.origin[a]) / d;
        if (lo > hi) std::swap(lo, hi);
        t0 = std::max(t0, lo);
        t1 = std::min(t1, hi);
        if (t0 >= t1) return false;
    }
    return true;
}

struct RaySamples {
    std::vector<int64_t> offset;  // into the flat point list
    std::vector<int> count;       // samples per ray (0 on miss)
    std::vector<float> delta;     // per-ray step length
    std::vector<float> ts;        // per-sample distance, flat
};

// Composites per-sample (sigma, rgb) into [R,5] rows: rgb(3), opacity,
// depth. White background; weights telescope to 1 with the background term.
Var composite(const Var& sigma, const Var& rgb, std::shared_ptr<RaySamples> rs) {
    const int64_t r_count = static_cast<int64_t>(rs->count.size());
    Tensor out = Tensor::zeros({r_count, 5});
    const float* sg = sigma.value().data();
    const float* cl = rgb.value().data();
    for (int64_t r = 0; r < r_count; ++r) {
        float t_acc = 1.f, w_sum = 0.f, depth = 0.f;
        float c[3] = {0, 0, 0};
        const int64_t off = rs->offset[static_cast<size_t>(r)];
        for (int i = 0; i < rs->count[static_cast<size_t>(r)]; ++i) {
            const float alpha =
                1.f - std::exp(-sg[off + i] * rs->delta[static_cast<size_t>(r)]);
            const float w = t_acc * alpha;
            for (int k = 0; k < 3; ++k) c[k] += w * cl[(off + i) * 3 + k];
            depth += w * rs->ts[static_cast<size_t>(off + i)];
            w_sum += w;
            t_acc *= 1.f - alpha;
        }
        for (int k = 0; k < 3; ++k) out[r * 5 + k] = c[k] + (1.f - w_sum);  // white bg
        out[r * 5 + 3] = w_sum;
        out[r * 5 + 4] = depth;
    }

    auto sn = sigma.node();
    auto cn = rgb.node();
    auto node = std::make_shared<ag::Node>();
    node->value = std::move(out);
    node->parents = {sn, cn};
    node->requires_grad = sn->requires_grad || cn->requires_grad;
    if (node->requires_grad) {
        node->backward_fn = [sn, cn, rs](ag::Node& nd) {
            const float* sg = sn->value.data();
            const float* cl = cn->value.data();
            float* gs = sn->requires_grad ? sn->ensure_grad().data() : nullptr;
            float* gc = cn->requires_grad ? cn->ensure_grad().data() : nullptr;
            const int64_t r_count = static_cast<int64_t>(rs->count.size());
            for (int64_t r = 0; r < r_count; ++r) {
                const int cnt = rs->count[static_cast<size_t>(r)];
                if (cnt == 0) continue;
                const int64_t off = rs->offset[static_cast<size_t>(r)];
                const float dl = rs->delta[static_cast<size_t>(r)];
                const float* g = nd.grad.data() + r * 5;

                // recompute transmittances and weights, then d(loss)/d(w_i)
                std::vector<float> alpha(static_cast<size_t>(cnt)),
                    tview(static_cast<size_t>(cnt)), w(static_cast<size_t>(cnt)),
                    gw(static_cast<size_t>(cnt));
                float t_acc = 1.f;
                for (int i = 0; i < cnt; ++i) {
                    alpha[i] = 1.f - std::exp(-sg[off + i] * dl);
                    tview[i] = t_acc;
                    w[i] = t_acc * alpha[i];
                    t_acc *= 1.f - alpha[i];
                    gw[i] = g[3] + g[4] * rs->ts[static_cast<size_t>(off + i)];
                    for (int k = 0; k < 3; ++k)
                        gw[i] += g[k] * (cl[(off + i) * 3 + k] - 1.f);  // minus bg
                    if (gc)
                        for (int k = 0; k < 3; ++k)
                            gc[(off + i) * 3 + k] += w[i] * g[k];
                }
                if (!gs) continue;
                float suffix = 0.f;  // sum_{j>i} gw_j * w_j
                for (int i = cnt - 1; i >= 0; --i) {
                    gs[off + i] +=
                        dl * (gw[i] * tview[i] * (1.f - alpha[i]) - suffix);
                    suffix += gw[i] * w[i];
                }
            }
        };
    }
    return Var(std::move(node));
}

}  // namespace

RenderVars volume_render_vars(const NeuralField& field, const geom::RayGrid& rays,
                              int samples_per_ray, Rng& rng) {
    if (samples_per_ray < 1) throw BadConfig("volume_render: need >= 1 sample per ray");
    const int64_t r_count = static_cast<int64_t>(rays.rays.size());
    auto rs = std::make_shared<RaySamples>();
    rs->offset.resize(static_cast<size_t>(r_count));
    rs->count.resize(static_cast<size_t>(r_count));
    rs->delta.resize(static_cast<size_t>(r_count));

    std::vector<std::array<float, 3>> points;
    for (int64_t r = 0; r < r_count; ++r) {
        const geom::Ray& ray = rays.rays[static_cast<size_t>(r)];
        rs->offset[static_cast<size_t>(r)] = static_cast<int64_t>(points.size());
        double t0, t1;
        if (!ray_box(ray, t0, t1)) {
            rs->count[static_cast<size_t>(r)] = 0;
            rs->delta[static_cast<size_t>(r)] = 0.f;
            continue;
        }
        const double step = (t1 - t0) / samples_per_ray;
        rs->count[static_cast<size_t>(r)] = samples_per_ray;
        rs->delta[static_cast<size_t>(r)] = static_cast<float>(step);
        for (int i = 0; i < samples_per_ray; ++i) {
            const double t = t0 + (i + rng.uniform()) * step;  // stratified
            const geom::Vector3d p = ray.origin + t * ray.direction;
            points.push_back({static_cast<float>(p.x()), static_cast<float>(p.y()),
                              static_cast<float>(p.z())});
            rs->ts.push_back(static_cast<float>(t));
        }
    }

    Var packed;
    if (points.empty()) {
        // every ray missed the bound: composite over a dummy sample set
        packed = composite(Var(Tensor::zeros({1, 1})), Var(Tensor::zeros({1, 3})), rs);
    } else {
        const NeuralField::Sample s = field.query(points);
        packed = composite(s.sigma, s.rgb, rs);
    }

    // split [R,5] into differentiable rgb / opacity plus a depth tensor
    Tensor sel3 = Tensor::zeros({5, 3});
    sel3.at(0, 0) = sel3.at(1, 1) = sel3.at(2, 2) = 1.f;
    Tensor sel1 = Tensor::zeros({5, 1});
    sel1.at(3, 0) = 1.f;

    RenderVars out;
    out.rgb = ag::matmul(packed, Var(sel3));
    out.opacity = ag::matmul(packed, Var(sel1));
    out.depth = Tensor({r_count});
    for (int64_t r = 0; r < r_count; ++r) out.depth[r] = packed.value()[r * 5 + 4];
    return out;
}

RenderOutput volume_render(const NeuralField& field, const geom::CameraPose& pose,
                           int samples_per_ray, uint64_t seed) {
    Rng rng(seed);
    const geom::RayGrid grid = geom::camera_rays(pose);
    const RenderVars rv = volume_render_vars(field, grid, samples_per_ray, rng);
    RenderOutput out;
    out.rgb = rv.rgb.value().reshaped({pose.height, pose.width, 3});
    out.opacity = rv.opacity.value().reshaped({pose.height, pose.width, 1});
    out.depth = rv.depth.reshaped({pose.height, pose.width, 1});
    return out;
}

}  // namespace nvs::distill
