#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "nvs/distill/distill.hpp"

using namespace nvs;
using namespace nvs::distill;

namespace {

FieldConfig tiny_field() {
    FieldConfig cfg;
    cfg.levels = 2;
    cfg.feats = 2;
    cfg.log2_table = 6;
    cfg.base_res = 4;
    cfg.level_scale = 1.5f;
    cfg.mlp_width = 8;
    return cfg;
}

geom::CameraPose front_pose(int size) {
    return geom::look_at_pose({0, 0, -2}, {0, 0, 0}, 1.2 * size, 1.2 * size,
                              size, size);
}

// Constant field: zero the MLP hidden weights so sigma/rgb depend only on
// the head biases; softplus(sigma_raw) and sigmoid(rgb_raw) everywhere.
NeuralField constant_field(float sigma_raw, float rgb_raw) {
    NeuralField field(tiny_field(), 11);
    for (const char* name : {"mlp.fc1.w", "mlp.fc2.w"}) {
        Var* w = field.params().find(name);
        REQUIRE(w != nullptr);
        for (int64_t i = 0; i < w->numel(); ++i) w->value()[i] = 0.f;
    }
    field.params().find("mlp.sigma.b")->value()[0] = sigma_raw;
    for (int k = 0; k < 3; ++k)
        field.params().find("mlp.rgb.b")->value()[k] = rgb_raw;
    return field;
}

// FD check of d(loss)/d(elem) for the listed (var, index) pairs; loss_fn
// rebuilds the graph (and must be deterministic across calls).
void fd_check(std::vector<std::pair<Var, int64_t>> elems,
              const std::function<ag::Var()>& loss_fn, float h = 1e-2f,
              float tol = 3e-2f) {
    for (auto& [v, i] : elems) v.zero_grad();
    Var loss = loss_fn();
    ag::backward(loss);
    for (auto& [v, i] : elems) {
        const float an = v.node()->grad.empty() ? 0.f : v.node()->grad[i];
        const float orig = v.value()[i];
        v.value()[i] = orig + h;
        const float up = loss_fn().item();
        v.value()[i] = orig - h;
        const float down = loss_fn().item();
        v.value()[i] = orig;
        const float fd = (up - down) / (2 * h);
        const float denom = std::max({std::abs(fd), std::abs(an), 1e-3f});
        CHECK(std::abs(fd - an) / denom < tol);
    }
}

}  // namespace

TEST_CASE("field config: validation and json round trip") {
    FieldConfig cfg = tiny_field();
    const FieldConfig back = FieldConfig::from_json(cfg.to_json());
    CHECK(back.levels == cfg.levels);
    CHECK(back.log2_table == cfg.log2_table);
    CHECK(back.level_scale == doctest::Approx(cfg.level_scale));
    CHECK(back.table_rows() == 64);

    cfg.log2_table = 30;
    CHECK_THROWS_AS(cfg.validate(), BadConfig);
    cfg = tiny_field();
    cfg.level_scale = 1.f;
    CHECK_THROWS_AS(cfg.validate(), BadConfig);
}

TEST_CASE("zero density renders the white background with zero opacity") {
    const NeuralField field = constant_field(-30.f, 0.f);
    const RenderOutput out = volume_render(field, front_pose(4), 16, 5);
    for (int64_t i = 0; i < out.rgb.numel(); ++i)
        CHECK(out.rgb[i] == doctest::Approx(1.f).epsilon(1e-6));
    for (int64_t i = 0; i < out.opacity.numel(); ++i)
        CHECK(out.opacity[i] == doctest::Approx(0.f).epsilon(1e-6));
}

TEST_CASE("homogeneous slab matches analytic transmittance") {
    // softplus^-1(1) so sigma = 1 everywhere inside the bound
    const float sigma_raw = std::log(std::exp(1.f) - 1.f);
    const NeuralField field = constant_field(sigma_raw, 0.f);

    // single principal ray straight through the cube: chord length 2
    geom::RayGrid grid;
    grid.width = grid.height = 1;
    grid.pose = front_pose(1);
    grid.rays = {geom::Ray{{0, 0, -2}, {0, 0, 1}}};

    Rng rng(3);
    const RenderVars rv = volume_render_vars(field, grid, 256, rng);
    const float expected = 1.f - std::exp(-2.f);  // 1 - exp(-sigma * chord)
    // alpha compositing of a constant density telescopes exactly
    CHECK(rv.opacity.value()[0] == doctest::Approx(expected).epsilon(1e-4));
    CHECK(rv.depth[0] > 1.f);
    CHECK(rv.depth[0] < 3.f);
}

TEST_CASE("background weight and sample weights telescope to one") {
    // near-black emission: rendered rgb must equal the background share
    const NeuralField field = constant_field(0.3f, -30.f);
    Rng rng(9);
    const geom::RayGrid grid = geom::camera_rays(front_pose(6));
    const RenderVars rv = volume_render_vars(field, grid, 32, rng);
    for (int64_t r = 0; r < rv.opacity.numel(); ++r) {
        const float bg = 1.f - rv.opacity.value()[r];
        for (int k = 0; k < 3; ++k)
            CHECK(rv.rgb.value()[r * 3 + k] == doctest::Approx(bg).epsilon(1e-5));
    }
}

TEST_CASE("doubling the sample count barely changes a smooth field") {
    const NeuralField field(tiny_field(), 21);
    const RenderOutput a = volume_render(field, front_pose(8), 64, 1);
    const RenderOutput b = volume_render(field, front_pose(8), 128, 2);
    double diff = 0;
    for (int64_t i = 0; i < a.rgb.numel(); ++i)
        diff += std::abs(a.rgb[i] - b.rgb[i]);
    CHECK(diff / static_cast<double>(a.rgb.numel()) < 0.01);
}

TEST_CASE("rays that miss the bound render white") {
    const NeuralField field(tiny_field(), 22);
    const geom::CameraPose away =
        geom::look_at_pose({0, 0, -5}, {0, 0, -10}, 9.6, 9.6, 4, 4);
    const RenderOutput out = volume_render(field, away, 16, 7);
    for (int64_t i = 0; i < out.rgb.numel(); ++i) CHECK(out.rgb[i] == 1.f);
    for (int64_t i = 0; i < out.opacity.numel(); ++i) CHECK(out.opacity[i] == 0.f);
}

TEST_CASE("noise-level annealing band") {
    DistillConfig cfg;
    cfg.total_iters = 3000;
    cfg.warmup_iters = 300;

    const auto first = anneal_t_range(0, cfg);
    CHECK(first.first == doctest::Approx(0.70f));
    CHECK(first.second == doctest::Approx(0.98f));
    const auto warm_end = anneal_t_range(cfg.warmup_iters - 1, cfg);
    CHECK(warm_end.second == doctest::Approx(0.98f));
    const auto last = anneal_t_range(cfg.total_iters - 1, cfg);
    CHECK(last.first == doctest::Approx(0.02f));
    CHECK(last.second == doctest::Approx(0.30f));

    float prev_hi = 1.f, prev_lo = 1.f;
    for (int iter = 0; iter < cfg.total_iters; iter += 37) {
        const auto [lo, hi] = anneal_t_range(iter, cfg);
        CHECK(lo < hi);
        CHECK(lo <= prev_lo + 1e-6f);
        CHECK(hi <= prev_hi + 1e-6f);
        prev_lo = lo;
        prev_hi = hi;
    }
    CHECK_THROWS_AS(anneal_t_range(-1, cfg), BadConfig);
    CHECK_THROWS_AS(anneal_t_range(cfg.total_iters, cfg), BadConfig);
}

TEST_CASE("distillation poses look at the origin within the radius band") {
    Rng rng(13);
    for (int i = 0; i < 200; ++i) {
        const geom::CameraPose pose = sample_distill_pose(rng, 16);
        pose.validate();
        const geom::Vector3d c = pose.center();
        const double r = c.norm();
        CHECK(r >= 0.8 - 1e-9);
        CHECK(r <= 1.5 + 1e-9);
        const double el = std::asin(c.y() / r) * 180.0 / M_PI;
        CHECK(el >= -15.0 - 1e-6);
        CHECK(el <= 45.0 + 1e-6);
        // optical axis points from the camera back through the origin
        const geom::Vector3d hit = c + r * pose.optical_axis_world();
        CHECK(hit.norm() < 1e-9);
    }
}

TEST_CASE("hash encoding gradient w.r.t. table entries") {
    const FieldConfig cfg = tiny_field();
    Rng rng(4);
    Var tables(Tensor::randn({cfg.levels * cfg.table_rows(), cfg.feats}, rng), true);
    std::vector<std::array<float, 3>> points;
    for (int i = 0; i < 5; ++i)
        points.push_back({static_cast<float>(rng.uniform(-1, 1)),
                          static_cast<float>(rng.uniform(-1, 1)),
                          static_cast<float>(rng.uniform(-1, 1))});

    std::vector<std::pair<Var, int64_t>> elems;
    for (int64_t i = 0; i < tables.numel(); i += 3) elems.push_back({tables, i});
    fd_check(elems, [&] {
        Var enc = hash_encode(tables, points, cfg);
        return ag::mean_all(ag::mul(enc, enc));
    });

    Var bad(Tensor::zeros({3, 3}), true);
    CHECK_THROWS_AS(hash_encode(bad, points, cfg), ShapeError);
}

TEST_CASE("rendering data term gradient against finite differences") {
    NeuralField field(tiny_field(), 31);
    const geom::RayGrid grid = geom::camera_rays(front_pose(4));
    const Tensor target = Tensor::full({16, 3}, 0.5f);

    const auto loss_fn = [&] {
        Rng rng(7);  // identical stratification on every rebuild
        const RenderVars rv = volume_render_vars(field, grid, 8, rng);
        return ag::mse_const(rv.rgb, target);
    };

    // sample elements from every parameter, skipping untouched table rows
    Rng pick(8);
    field.params().zero_grad();
    Var loss = loss_fn();
    ag::backward(loss);
    std::vector<std::pair<Var, int64_t>> elems;
    for (size_t p = 0; p < field.params().size(); ++p) {
        Var v = field.params().param(p);
        for (int j = 0; j < 6; ++j) {
            const int64_t i =
                static_cast<int64_t>(pick.uniform() * static_cast<double>(v.numel()));
            if (!v.node()->grad.empty() && v.node()->grad[i] != 0.f)
                elems.push_back({v, i});
        }
    }
    REQUIRE(elems.size() > 10);
    fd_check(elems, loss_fn);
}

TEST_CASE("gradient vanishes when the target equals the render") {
    NeuralField field(tiny_field(), 41);
    Rng rng(6);
    const geom::RayGrid grid = geom::camera_rays(front_pose(4));
    field.params().zero_grad();
    const RenderVars rv = volume_render_vars(field, grid, 8, rng);
    Var loss = ag::mse_const(rv.rgb, rv.rgb.value());
    ag::backward(loss);
    for (size_t p = 0; p < field.params().size(); ++p) {
        const Tensor& g = field.params().param(p).node()->grad;
        for (int64_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 0.f);
    }
}

TEST_CASE("field checkpoint round trip") {
    const std::filesystem::path dir =
        std::filesystem::temp_directory_path() / "nvs_field_ckpt";
    std::filesystem::remove_all(dir);

    NeuralField field(tiny_field(), 51);
    field.save(dir.string(), 51);
    const NeuralField back = NeuralField::load(dir.string());
    CHECK(back.config().levels == field.config().levels);

    const std::vector<std::array<float, 3>> pts = {{0.1f, -0.4f, 0.7f},
                                                   {-0.9f, 0.2f, 0.05f}};
    const NeuralField::Sample a = field.query(pts);
    const NeuralField::Sample b = back.query(pts);
    for (int64_t i = 0; i < a.sigma.numel(); ++i)
        CHECK(a.sigma.value()[i] == b.sigma.value()[i]);
    for (int64_t i = 0; i < a.rgb.numel(); ++i)
        CHECK(a.rgb.value()[i] == b.rgb.value()[i]);
    std::filesystem::remove_all(dir);
}

TEST_CASE("distillation loop runs and logs finite losses") {
    Rng rng(61);
    srt::SrtConfig scfg;
    scfg.image_size = 16;
    scfg.dim = 16;
    scfg.heads = 2;
    scfg.enc_blocks = 1;
    scfg.dec_blocks = 1;
    scfg.mlp_ratio = 2;
    srt::SrtModel srt_model(scfg, 1);

    srt::ImageSet set;
    std::vector<geom::CameraPose> ring;
    for (int i = 0; i < 2; ++i) {
        const double az = 2 * M_PI * i / 2 + 0.4;
        ring.push_back(geom::look_at_pose(
            {2.0 * std::cos(az), 0.7, 2.0 * std::sin(az)}, {0, 0, 0}, 19.2, 19.2,
            16, 16));
    }
    set.poses = geom::anchor_frame(ring).second;
    for (int i = 0; i < 2; ++i) {
        Tensor img = Tensor::zeros({16, 16, 3});
        for (int64_t k = 0; k < img.numel(); ++k)
            img[k] = static_cast<float>(rng.uniform());
        set.images.push_back(img);
    }

    diff::DiffusionConfig dcfg;
    dcfg.image_size = 16;
    dcfg.base_channels = 8;
    dcfg.heads = 2;
    dcfg.cond_dim = 16;
    dcfg.cd_channels = 25;
    dcfg.time_dim = 16;
    dcfg.t_count = 50;
    const diff::DenoiserNet denoiser(dcfg, 2);
    const diff::NoiseSchedule sched = diff::make_schedule(dcfg.t_count);

    DistillContext ctx;
    ctx.srt_model = &srt_model;
    ctx.denoiser = &denoiser;
    ctx.schedule = &sched;
    ctx.latent = srt_model.encode_set(set);

    DistillConfig cfg;
    cfg.total_iters = 3;
    cfg.warmup_iters = 1;
    cfg.ddim_steps = 3;
    cfg.views_per_iter = 1;
    cfg.samples_per_ray = 8;
    cfg.seed = 3;

    std::vector<float> losses;
    NeuralField field = nvs::distill::distill(ctx, cfg, tiny_field(), &losses);
    REQUIRE(losses.size() == 3);
    for (const float l : losses) {
        CHECK(std::isfinite(l));
        CHECK(l >= 0.f);
    }
    // the optimizer actually moved the field
    NeuralField fresh(tiny_field(), cfg.seed);
    const Tensor& tuned = field.params().find("hash.tables")->value();
    const Tensor& init = fresh.params().find("hash.tables")->value();
    double moved = 0;
    for (int64_t i = 0; i < tuned.numel(); ++i) moved += std::abs(tuned[i] - init[i]);
    CHECK(moved > 0.0);
}
