#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nvs/core/nn.hpp"
#include "nvs/geometry/geometry.hpp"

// Unposed set-latent scene transformer: a set of context images (the first
// one is the anchor that defines the frame) is patchified and encoded into a
// set latent; query rays in the anchored frame decode to per-ray features and
// RGB. Non-anchor images carry no pose information, only an id embedding.
namespace nvs::srt {

using ag::Var;

struct SrtConfig {
    int image_size = 64;
    int patch = 8;  // conv patchifier stride (3 x stride-2 layers)
    int64_t dim = 256;
    int heads = 8;
    int enc_blocks = 8;
    int dec_blocks = 4;
    int mlp_ratio = 4;
    int pos_freqs = 6;   // patch-position sinusoids
    int ray_freqs = 6;   // Plücker-coordinate sinusoids
    int intr_freqs = 4;  // intrinsics sinusoids

    nlohmann::json to_json() const;
    static SrtConfig from_json(const nlohmann::json& j);
    void validate() const;
};

// Context views. images[i] is [H,W,3] in [0,1], background already
// composited to white. poses[0] is the anchor pose expressed in the anchored
// frame; for all other entries only the intrinsics fields are read.
struct ImageSet {
    std::vector<Tensor> images;
    std::vector<geom::CameraPose> poses;

    size_t count() const { return images.size(); }
    void validate(const SrtConfig& cfg) const;
};

struct TokenProvenance {
    int image = 0;
    int row = 0;
    int col = 0;
};

struct SetLatent {
    Tensor tokens;  // [T, D]
    std::vector<TokenProvenance> provenance;
};

// Per-ray decoder output aligned to a query grid.
struct DecoderFeatures {
    int height = 0, width = 0;
    Tensor features;  // [height*width, D]
    Tensor rgb;       // [height*width, 3] in [0,1], the render head's output
};

class SrtModel {
public:
    SrtModel(const SrtConfig& cfg, uint64_t seed);

    const SrtConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    // Patch tokens for the whole set: conv features + patch-position,
    // intrinsics and anchor/non-anchor id encodings; the anchor image
    // additionally gets its patch-center-ray Plücker encoding.
    Var patchify(const ImageSet& set) const;
    std::vector<TokenProvenance> token_provenance(const ImageSet& set) const;

    // Token-wise transformer encoder; token count preserved.
    Var encode(const Var& tokens) const;

    // Convenience: full frozen-path encode to a plain tensor latent.
    SetLatent encode_set(const ImageSet& set) const;

    // Cross-attention decoder; one feature row per query ray, rays are
    // decoded independently of each other.
    Var decode_rays(const std::vector<geom::Ray>& rays, const Var& set_latent) const;
    Var decode_grid(const geom::RayGrid& grid, const Var& set_latent) const;
    DecoderFeatures decode_features(const geom::RayGrid& grid,
                                    const SetLatent& latent) const;

    // Sigmoid-terminated MLP head; [R, D] features -> [R, 3] in [0,1].
    Var render_rgb(const Var& features) const;

    // Full forward pass: context set + query grid -> [h*w, 3] RGB.
    Var render_view(const ImageSet& set, const geom::RayGrid& grid) const;

    void save(const std::string& dir, uint64_t seed) const;
    static SrtModel load(const std::string& dir);

private:
    SrtConfig cfg_;
    nn::ParamStore params_;
    nn::Conv2d conv1_, conv2_, conv3_;
    nn::Linear pos_proj_, intr_proj_, ray_proj_, query_proj_;
    Var id_table_;  // [2, D]: row 0 anchor, row 1 non-anchor
    std::vector<nn::TransformerBlock> enc_;
    nn::LayerNorm enc_ln_;
    std::vector<nn::CrossBlock> dec_;
    nn::LayerNorm dec_ln_;
    nn::Linear head1_, head2_;
};

// Mean squared error over all pixels of the white-composited target.
Var srt_loss(const Var& pred_rgb, const Tensor& gt_rgb);

}  // namespace nvs::srt
