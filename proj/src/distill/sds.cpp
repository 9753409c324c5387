#include <cmath>

#include <nlohmann/json.hpp>

#include "nvs/distill/distill.hpp"

namespace nvs::distill {

nlohmann::json DistillConfig::to_json() const {
    return {{"total_iters", total_iters},
            {"warmup_iters", warmup_iters},
            {"ddim_steps", ddim_steps},
            {"guidance_weight", guidance_weight},
            {"views_per_iter", views_per_iter},
            {"lambda_binarize", lambda_binarize},
            {"lambda_sparsity", lambda_sparsity},
            {"samples_per_ray", samples_per_ray},
            {"lr", lr},
            {"seed", seed}};
}

DistillConfig DistillConfig::from_json(const nlohmann::json& j) {
    DistillConfig c;
    c.total_iters = j.value("total_iters", c.total_iters);
    c.warmup_iters = j.value("warmup_iters", c.warmup_iters);
    c.ddim_steps = j.value("ddim_steps", c.ddim_steps);
    c.guidance_weight = j.value("guidance_weight", c.guidance_weight);
    c.views_per_iter = j.value("views_per_iter", c.views_per_iter);
    c.lambda_binarize = j.value("lambda_binarize", c.lambda_binarize);
    c.lambda_sparsity = j.value("lambda_sparsity", c.lambda_sparsity);
    c.samples_per_ray = j.value("samples_per_ray", c.samples_per_ray);
    c.lr = j.value("lr", c.lr);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

void DistillConfig::validate() const {
    if (total_iters < 1) throw BadConfig("distill: total_iters must be positive");
    if (warmup_iters < 0 || warmup_iters >= total_iters)
        throw BadConfig("distill: warmup_iters must be < total_iters");
    if (ddim_steps < 1) throw BadConfig("distill: ddim_steps must be positive");
    if (views_per_iter < 1) throw BadConfig("distill: views_per_iter must be positive");
    if (samples_per_ray < 1) throw BadConfig("distill: samples_per_ray must be positive");
}

std::pair<float, float> anneal_t_range(int iter, const DistillConfig& cfg) {
    if (iter < 0 || iter >= cfg.total_iters)
        throw BadConfig("anneal_t_range: iter out of range");
    const float hi_min = 0.70f, hi_max = 0.98f;
    const float lo_min = 0.02f, lo_max = 0.30f;
    if (iter < cfg.warmup_iters) return {hi_min, hi_max};
    const int span = cfg.total_iters - 1 - cfg.warmup_iters;
    const float s = span == 0 ? 1.f
                              : static_cast<float>(iter - cfg.warmup_iters) /
                                    static_cast<float>(span);
    return {hi_min + s * (lo_min - hi_min), hi_max + s * (lo_max - hi_max)};
}

geom::CameraPose sample_distill_pose(Rng& rng, int image_size) {
    const double az = rng.uniform(0, 2 * M_PI);
    const double el = rng.uniform(-15.0, 45.0) * M_PI / 180.0;
    const double radius = std::exp(rng.uniform(std::log(0.8), std::log(1.5)));
    const geom::Vector3d eye(radius * std::cos(el) * std::cos(az),
                             radius * std::sin(el),
                             radius * std::cos(el) * std::sin(az));
    const double focal = 1.2 * image_size;
    return geom::look_at_pose(eye, geom::Vector3d::Zero(), focal, focal,
                              image_size, image_size);
}

float sds_step(NeuralField& field, const DistillContext& ctx,
               const DistillConfig& cfg, int iter, nn::Adam& opt, Rng& rng) {
    const int s = ctx.denoiser->config().image_size;
    const diff::NoiseSchedule& sched = *ctx.schedule;
    const diff::LatentCodec codec;

    field.params().zero_grad();
    Var total;
    for (int v = 0; v < cfg.views_per_iter; ++v) {
        const geom::CameraPose pose = sample_distill_pose(rng, s);
        const geom::RayGrid grid = geom::camera_rays(pose);
        const RenderVars rv =
            volume_render_vars(field, grid, cfg.samples_per_ray, rng);

        // denoised target from the frozen models; constant w.r.t. the field
        const Tensor render_hwc = rv.rgb.value().reshaped({s, s, 3});
        const Tensor x0 = codec.encode(render_hwc);
        const auto [t_lo, t_hi] = anneal_t_range(iter, cfg);
        const int t = std::min(
            sched.t_count - 1,
            static_cast<int>(rng.uniform(t_lo, t_hi) * (sched.t_count - 1)));
        Tensor eps(x0.shape());
        for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = rng.normalf();
        const Tensor x_t = diff::q_sample(x0, t, eps, sched);

        const srt::DecoderFeatures feats =
            ctx.srt_model->decode_features(grid, ctx.latent);
        const diff::Conditioning cond =
            diff::make_conditioning(feats, grid, ctx.latent, s);
        const diff::Conditioning uncond = cond.with_null(true, true);
        const diff::EpsFn eps_fn = [&](const Tensor& x, int ti, bool null_both) {
            return ctx.denoiser->epsilon(x, ti, null_both ? uncond : cond);
        };
        const int steps = std::min(cfg.ddim_steps, t + 1);
        const Tensor x0_hat = diff::ddim_denoise_from(eps_fn, sched, x_t, t, steps,
                                                      cfg.guidance_weight);
        const Tensor target =
            codec.decode(x0_hat).reshaped({static_cast<int64_t>(s) * s, 3});

        Var loss = ag::mse_const(rv.rgb, target);

        // opacity regularizers: binarization entropy and sparsity
        const Var o = rv.opacity;
        const Var one_minus = ag::add_scalar(ag::mul_scalar(o, -1.f), 1.f);
        const Var entropy = ag::mul_scalar(
            ag::add(ag::mul(o, ag::vlog(o)), ag::mul(one_minus, ag::vlog(one_minus))),
            -1.f);
        loss = ag::add(loss, ag::mul_scalar(ag::mean_all(entropy), cfg.lambda_binarize));
        loss = ag::add(loss, ag::mul_scalar(ag::mean_all(o), cfg.lambda_sparsity));
        total = v == 0 ? loss : ag::add(total, loss);
    }
    total = ag::mul_scalar(total, 1.f / static_cast<float>(cfg.views_per_iter));
    ag::backward(total);
    opt.step(field.params());
    return total.item();
}

NeuralField distill(const DistillContext& ctx, const DistillConfig& cfg,
                    const FieldConfig& field_cfg, std::vector<float>* loss_log) {
    cfg.validate();
    NeuralField field(field_cfg, cfg.seed);
    nn::Adam opt({.lr = cfg.lr});
    Rng rng(cfg.seed ^ 0xD157111ull);
    for (int iter = 0; iter < cfg.total_iters; ++iter) {
        const float loss = sds_step(field, ctx, cfg, iter, opt, rng);
        if (loss_log) loss_log->push_back(loss);
    }
    return field;
}

}  // namespace nvs::distill
