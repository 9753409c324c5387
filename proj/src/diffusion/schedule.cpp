#include <cmath>

#include "nvs/data/image.hpp"
#include "nvs/diffusion/diffusion.hpp"

namespace nvs::diff {

NoiseSchedule make_schedule(int t_count) {
    if (t_count < 2) throw BadConfig("noise schedule needs at least 2 steps");
    NoiseSchedule s;
    s.t_count = t_count;
    s.betas.resize(static_cast<size_t>(t_count));
    s.alphas_cumprod.resize(static_cast<size_t>(t_count));
    const double b0 = 1e-4, b1 = 2e-2;
    double abar = 1.0;
    for (int t = 0; t < t_count; ++t) {
        const double beta = b0 + (b1 - b0) * t / (t_count - 1);
        abar *= 1.0 - beta;
        s.betas[static_cast<size_t>(t)] = static_cast<float>(beta);
        s.alphas_cumprod[static_cast<size_t>(t)] = static_cast<float>(abar);
    }
    return s;
}

namespace {

void check_t(int t, const NoiseSchedule& s) {
    if (t < 0 || t >= s.t_count) throw BadConfig("schedule index out of range");
}

}  // namespace

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s) {
    check_t(t, s);
    if (!x0.same_shape(eps)) throw ShapeError("q_sample: x0/eps shape mismatch");
    const double ab = s.alphas_cumprod[static_cast<size_t>(t)];
    const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    Tensor out(x0.shape());
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<float>(sa * x0[i] + sb * eps[i]);
    return out;
}

Tensor predict_x0(const Tensor& x_t, int t, const Tensor& eps_hat,
                  const NoiseSchedule& s) {
    check_t(t, s);
    if (!x_t.same_shape(eps_hat)) throw ShapeError("predict_x0: shape mismatch");
    const double ab = s.alphas_cumprod[static_cast<size_t>(t)];
    const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    Tensor out(x_t.shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        const float v = static_cast<float>((x_t[i] - sb * eps_hat[i]) / sa);
        out[i] = std::min(1.f, std::max(-1.f, v));
    }
    return out;
}

Tensor cfg_epsilon(const Tensor& eps_cond, const Tensor& eps_uncond, float w) {
    if (!eps_cond.same_shape(eps_uncond)) throw ShapeError("cfg_epsilon: shape mismatch");
    if (w == 0.f) return eps_uncond;  // endpoints exact
    if (w == 1.f) return eps_cond;
    Tensor out(eps_cond.shape());
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = eps_uncond[i] + w * (eps_cond[i] - eps_uncond[i]);
    return out;
}

Tensor LatentCodec::encode(const Tensor& image_hwc) const {
    Tensor nchw = img::hwc_to_nchw(image_hwc);
    for (int64_t i = 0; i < nchw.numel(); ++i) nchw[i] = nchw[i] * 2.f - 1.f;
    return nchw;
}

Tensor LatentCodec::decode(const Tensor& x) const {
    Tensor y = x;
    for (int64_t i = 0; i < y.numel(); ++i)
        y[i] = std::min(1.f, std::max(0.f, (y[i] + 1.f) * 0.5f));
    return img::nchw_to_hwc(y);
}

}  // namespace nvs::diff
