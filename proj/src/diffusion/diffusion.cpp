#include <cmath>

#include "nvs/data/image.hpp"
#include "nvs/diffusion/diffusion.hpp"

namespace nvs::diff {

Conditioning Conditioning::with_null(bool cd, bool cs) const {
    Conditioning out = *this;
    out.null_cd = null_cd || cd;
    out.null_cs = null_cs || cs;
    return out;
}

Conditioning make_conditioning(const srt::DecoderFeatures& features,
                               const geom::RayGrid& query,
                               const srt::SetLatent& latent, int working_size) {
    if (features.features.empty()) throw EmptyInput("conditioning: no decoder features");
    const int64_t d = features.features.shape()[1];
    const int64_t s = working_size;
    const bool has_rgb = !features.rgb.empty();
    const int64_t dc = d + (has_rgb ? 3 : 0);

    // [features | decoded rgb] [h*w, D(+3)] -> [h, w, D(+3)] -> resampled [S, S, ·]
    Tensor hwc({features.height, features.width, dc});
    for (int64_t i = 0; i < static_cast<int64_t>(features.height) * features.width;
         ++i) {
        for (int64_t k = 0; k < d; ++k) hwc[i * dc + k] = features.features[i * d + k];
        for (int64_t k = 0; has_rgb && k < 3; ++k)
            hwc[i * dc + d + k] = features.rgb[i * 3 + k] * 2.f - 1.f;
    }
    if (features.height != s || features.width != s)
        hwc = img::resize_bilinear(hwc, working_size, working_size);

    Conditioning cond;
    cond.grid = geom::camera_rays_at(query.pose, working_size, working_size);
    cond.c_d = Tensor::zeros({1, d + 9, s, s});
    for (int64_t y = 0; y < s; ++y) {
        for (int64_t x = 0; x < s; ++x) {
            for (int64_t k = 0; k < dc; ++k)
                cond.c_d[(k * s + y) * s + x] = hwc[(y * s + x) * dc + k];
            const geom::PluckerRay p = geom::plucker_encode(
                cond.grid.at(static_cast<int>(y), static_cast<int>(x)));
            for (int64_t k = 0; k < 3; ++k) {
                cond.c_d[((d + 3 + k) * s + y) * s + x] =
                    static_cast<float>(p.direction[k]);
                cond.c_d[((d + 6 + k) * s + y) * s + x] =
                    static_cast<float>(p.moment[k]);
            }
        }
    }
    cond.c_s = latent.tokens;
    return cond;
}

std::pair<bool, bool> sample_condition_dropout(Rng& rng) {
    const double u = rng.uniform();
    if (u < 0.05) return {true, false};
    if (u < 0.10) return {false, true};
    if (u < 0.15) return {true, true};
    return {false, false};
}

float train_step(DenoiserNet& net, const NoiseSchedule& sched,
                 const std::vector<std::pair<Tensor, Conditioning>>& batch,
                 nn::Adam& opt, Rng& rng) {
    if (batch.empty()) throw EmptyInput("diffusion train_step: empty batch");
    net.params().zero_grad();
    Var total;
    for (size_t i = 0; i < batch.size(); ++i) {
        const auto& [x0, cond] = batch[i];
        const int t = static_cast<int>(rng.uniform_int(
            static_cast<uint64_t>(sched.t_count)));
        Tensor eps(x0.shape());
        for (int64_t k = 0; k < eps.numel(); ++k) eps[k] = rng.normalf();
        const Tensor x_t = q_sample(x0, t, eps, sched);

        const auto [drop_cd, drop_cs] = sample_condition_dropout(rng);
        const Conditioning used = cond.with_null(drop_cd, drop_cs);

        Var l = ag::mse_const(net.forward(x_t, t, used), eps);
        total = i == 0 ? l : ag::add(total, l);
    }
    total = ag::mul_scalar(total, 1.f / static_cast<float>(batch.size()));
    ag::backward(total);
    opt.step(net.params());
    return total.item();
}

Tensor ddim_denoise_from(const EpsFn& eps_fn, const NoiseSchedule& sched,
                         const Tensor& x_start, int t_start, int steps, float w) {
    if (steps < 1 || steps > sched.t_count)
        throw BadConfig("ddim: steps must be in [1, T]");
    if (t_start < 0 || t_start >= sched.t_count)
        throw BadConfig("ddim: start index out of range");

    std::vector<int> ts(static_cast<size_t>(steps));
    for (int i = 0; i < steps; ++i)
        ts[static_cast<size_t>(i)] =
            steps == 1 ? t_start
                       : static_cast<int>(std::llround(
                             static_cast<double>(t_start) * (steps - 1 - i) /
                             (steps - 1)));

    Tensor x = x_start;
    for (int i = 0; i < steps; ++i) {
        const int t = ts[static_cast<size_t>(i)];
        const Tensor eps_c = eps_fn(x, t, false);
        const Tensor eps_u = eps_fn(x, t, true);
        const Tensor eps = cfg_epsilon(eps_c, eps_u, w);
        const Tensor x0 = predict_x0(x, t, eps, sched);
        const double ab = sched.alphas_cumprod[static_cast<size_t>(t)];
        const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
        const float ab_prev =
            i + 1 < steps ? sched.alphas_cumprod[static_cast<size_t>(
                                ts[static_cast<size_t>(i + 1)])]
                          : 1.f;
        const float sap = std::sqrt(ab_prev), sbp = std::sqrt(1.f - ab_prev);
        for (int64_t k = 0; k < x.numel(); ++k) {
            // where predict_x0 clamped, substitute the epsilon implied by the
            // clamped estimate so (x0, eps) stay consistent with the state
            const float raw = static_cast<float>((x[k] - sb * eps[k]) / sa);
            const float e = raw == x0[k]
                                ? eps[k]
                                : static_cast<float>((x[k] - sa * x0[k]) / sb);
            x[k] = sap * x0[k] + sbp * e;
        }
    }
    return x;
}

Tensor ddim_sample(const DenoiserNet& net, const NoiseSchedule& sched,
                   const Conditioning& cond, int steps, float w, uint64_t seed) {
    const int s = net.config().image_size;
    Rng rng(seed);
    Tensor x({1, 3, s, s});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.normalf();

    const Conditioning uncond = cond.with_null(true, true);
    const EpsFn eps_fn = [&](const Tensor& x_t, int t, bool null_both) {
        return net.epsilon(x_t, t, null_both ? uncond : cond);
    };
    return ddim_denoise_from(eps_fn, sched, x, sched.t_count - 1, steps, w);
}

}  // namespace nvs::diff
