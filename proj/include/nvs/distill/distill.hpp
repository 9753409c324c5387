#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nvs/diffusion/diffusion.hpp"
#include "nvs/srt/srt.hpp"

// Instance-specific 3D distillation: a multiresolution hash-grid field is
// optimized so its volume renderings match multi-step denoised predictions
// of the frozen diffusion model. No input-view rendering loss is used
// anywhere; the only data term is against the denoised target.
namespace nvs::distill {

using ag::Var;

struct FieldConfig {
    int levels = 12;
    int feats = 2;       // features per level
    int log2_table = 17; // hash-table rows per level
    int base_res = 16;
    float level_scale = 1.5f;
    int64_t mlp_width = 64;

    int64_t table_rows() const { return int64_t{1} << log2_table; }
    nlohmann::json to_json() const;
    static FieldConfig from_json(const nlohmann::json& j);
    void validate() const;
};

// Scene bound: axis-aligned cube of side 2 centered at the anchored origin.
// Density is softplus-activated (sigma >= 0), color sigmoid-activated.
class NeuralField {
public:
    NeuralField(const FieldConfig& cfg, uint64_t seed);

    const FieldConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    struct Sample {
        Var sigma;  // [N, 1]
        Var rgb;    // [N, 3]
    };
    Sample query(const std::vector<std::array<float, 3>>& points) const;

    void save(const std::string& dir, uint64_t seed) const;
    static NeuralField load(const std::string& dir);

private:
    FieldConfig cfg_;
    nn::ParamStore params_;
    Var tables_;  // [levels * table_rows, feats]
    nn::Linear fc1_, fc2_, sigma_head_, rgb_head_;
};

// Trilinearly interpolated multiresolution hash encoding of points in
// [-1,1]^3; differentiable w.r.t. the table entries.
Var hash_encode(const Var& tables, const std::vector<std::array<float, 3>>& points,
                const FieldConfig& cfg);

struct RenderVars {
    Var rgb;      // [R, 3], white-composited
    Var opacity;  // [R, 1], accumulated alpha
    Tensor depth; // [R], expected termination distance
};

struct RenderOutput {
    Tensor rgb;      // [H, W, 3]
    Tensor opacity;  // [H, W, 1]
    Tensor depth;    // [H, W, 1]
};

// Stratified quadrature inside the bound; alpha_i = 1 - exp(-sigma_i d_i),
// background weight + sample weights telescope to 1. Rays that miss the
// bound render white with opacity 0.
RenderVars volume_render_vars(const NeuralField& field, const geom::RayGrid& rays,
                              int samples_per_ray, Rng& rng);
RenderOutput volume_render(const NeuralField& field, const geom::CameraPose& pose,
                           int samples_per_ray, uint64_t seed);

struct DistillConfig {
    int total_iters = 3000;
    int warmup_iters = 300;
    int ddim_steps = 30;
    float guidance_weight = 9.0f;
    int views_per_iter = 1;
    float lambda_binarize = 1e-3f;
    float lambda_sparsity = 1e-3f;
    int samples_per_ray = 64;
    float lr = 1e-2f;
    uint64_t seed = 0;

    nlohmann::json to_json() const;
    static DistillConfig from_json(const nlohmann::json& j);
    void validate() const;
};

// (t_min, t_max) as fractions of the schedule: a high-noise band during
// warmup, then both ends decaying linearly to (0.02, 0.30) at the last iter.
std::pair<float, float> anneal_t_range(int iter, const DistillConfig& cfg);

// Frozen models plus the precomputed scene context.
struct DistillContext {
    const srt::SrtModel* srt_model = nullptr;
    const diff::DenoiserNet* denoiser = nullptr;
    const diff::NoiseSchedule* schedule = nullptr;
    srt::SetLatent latent;
};

// Query-pose distribution for distillation renders: look-at-origin, azimuth
// uniform, elevation in [-15, 45] deg, radius log-uniform in [0.8, 1.5].
geom::CameraPose sample_distill_pose(Rng& rng, int image_size);

// One optimization step: render a sampled view, noise its encoding inside
// the annealed band, run multi-step DDIM to a denoised target (held
// constant), and step on ||render - target||^2 plus opacity regularizers.
float sds_step(NeuralField& field, const DistillContext& ctx,
               const DistillConfig& cfg, int iter, nn::Adam& opt, Rng& rng);

NeuralField distill(const DistillContext& ctx, const DistillConfig& cfg,
                    const FieldConfig& field_cfg,
                    std::vector<float>* loss_log = nullptr);

}  // namespace nvs::distill
