#pragma once

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nvs/core/nn.hpp"
#include "nvs/geometry/geometry.hpp"
#include "nvs/srt/srt.hpp"

// Conditional denoising diffusion over query-view images. The denoiser is a
// 3-level UNet conditioned two ways: spatially on scene-transformer decoder
// features through a zero-initialized control branch, and attentionally on
// the set latent through cross-attention (with the query rays' Plücker
// coordinates appended to the attention queries).
namespace nvs::diff {

using ag::Var;

struct NoiseSchedule {
    int t_count = 0;
    std::vector<float> betas;
    std::vector<float> alphas_cumprod;  // strictly decreasing, ~1 at t=0
};

// Linear betas from 1e-4 to 2e-2 over t_count steps.
NoiseSchedule make_schedule(int t_count = 1000);

// x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s);
// x0_hat = (x_t - sqrt(1-abar_t) eps_hat)/sqrt(abar_t), clipped to [-1,1]
Tensor predict_x0(const Tensor& x_t, int t, const Tensor& eps_hat,
                  const NoiseSchedule& s);
// eps_uncond + w (eps_cond - eps_uncond)
Tensor cfg_epsilon(const Tensor& eps_cond, const Tensor& eps_uncond, float w);

// Working space is pixel space in [-1,1]: encode maps an [H,W,3] image in
// [0,1] to [1,3,H,W]; decode inverts it exactly up to float rounding.
struct LatentCodec {
    Tensor encode(const Tensor& image_hwc) const;
    Tensor decode(const Tensor& x) const;
};

// Dual conditioning for one query view. c_d carries the decoder features
// concatenated channel-wise with the query rays' Plücker encoding; c_s is
// the set latent. A nulled branch is the all-zeros tensor of the same shape.
struct Conditioning {
    Tensor c_d;  // [1, Cd, S, S] at the working resolution
    Tensor c_s;  // [T, D]
    geom::RayGrid grid;  // query rays (never dropped)
    bool null_cd = false;
    bool null_cs = false;

    Conditioning with_null(bool cd, bool cs) const;
};

// Assembles c_d from decoder features + the decoded rgb (in [-1,1]) + Plücker
// channels, resampled to the working resolution if the feature grid differs.
Conditioning make_conditioning(const srt::DecoderFeatures& features,
                               const geom::RayGrid& query,
                               const srt::SetLatent& latent, int working_size);

struct DiffusionConfig {
    int image_size = 64;     // working resolution (multiple of 4)
    int base_channels = 64;  // multiple of 8
    int heads = 4;
    int64_t cond_dim = 256;   // c_s token width
    int64_t cd_channels = 265;  // feature width + 3 rgb + 6 Plücker channels
    int64_t time_dim = 128;
    int t_count = 1000;

    nlohmann::json to_json() const;
    static DiffusionConfig from_json(const nlohmann::json& j);
    void validate() const;
};

struct ResBlock {
    nn::GroupNorm gn1, gn2;
    nn::Conv2d conv1, conv2, skip;
    nn::Linear t_scale, t_shift;
    bool has_skip = false;
    ResBlock() = default;
    ResBlock(nn::ParamStore& ps, const std::string& name, int64_t in, int64_t out,
             int64_t time_dim, Rng& rng);
    Var operator()(const Var& x, const Var& temb) const;
};

// Residual cross-attention over the set latent; queries are the spatial
// features with per-pixel Plücker coordinates appended.
struct CrossAttn {
    nn::LayerNorm ln;
    nn::Linear wq, wk, wv, wo;
    int heads = 1;
    CrossAttn() = default;
    CrossAttn(nn::ParamStore& ps, const std::string& name, int64_t channels,
              int64_t kv_dim, int heads_, Rng& rng);
    Var operator()(const Var& x, const Var& cs, const Tensor& ray_feats) const;
};

class DenoiserNet {
public:
    DenoiserNet(const DiffusionConfig& cfg, uint64_t seed);

    const DiffusionConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    // eps prediction; x_t is [1,3,S,S], output same shape.
    Var forward(const Tensor& x_t, int t, const Conditioning& cond) const;
    Tensor epsilon(const Tensor& x_t, int t, const Conditioning& cond) const;

    void save(const std::string& dir, uint64_t seed) const;
    static DenoiserNet load(const std::string& dir);

private:
    DiffusionConfig cfg_;
    nn::ParamStore params_;
    nn::Conv2d stem_;
    nn::Linear time1_, time2_;
    ResBlock enc0_, enc1_, enc2_, mid1_, mid2_, dec2_, dec1_;
    CrossAttn attn1_, attn2_, attn_mid_, attn_d2_;
    nn::Conv2d out_conv_;
    nn::GroupNorm out_gn_;
    // control branch: ingests c_d, emits zero-initialized per-level residuals
    nn::Conv2d ctrl_in_, ctrl_mid_, ctrl_out_;
    nn::Conv2d zero0_, zero1_, zero2_;
};

// Condition dropout draw: (null c_d, null c_s); only c_d with probability
// 0.05, only c_s with 0.05, both with 0.05.
std::pair<bool, bool> sample_condition_dropout(Rng& rng);

// One optimizer update on a batch; samples t and eps, applies condition
// dropout (only c_d nulled / only c_s / both, 5% each), returns the loss.
float train_step(DenoiserNet& net, const NoiseSchedule& sched,
                 const std::vector<std::pair<Tensor, Conditioning>>& batch,
                 nn::Adam& opt, Rng& rng);

// eps_fn(x_t, t, uncond): epsilon prediction with or without conditioning.
using EpsFn = std::function<Tensor(const Tensor&, int, bool)>;

// Deterministic (eta = 0) DDIM from x_start at schedule index t_start down
// to 0 over `steps` evenly spaced indices, CFG weight w at every step.
Tensor ddim_denoise_from(const EpsFn& eps_fn, const NoiseSchedule& sched,
                         const Tensor& x_start, int t_start, int steps, float w);

// Full sampling from pure noise; same seed + inputs give identical output.
Tensor ddim_sample(const DenoiserNet& net, const NoiseSchedule& sched,
                   const Conditioning& cond, int steps, float w, uint64_t seed);

}  // namespace nvs::diff
