#include <cstring>

#include <nlohmann/json.hpp>

#include "nvs/core/serialize.hpp"
#include "nvs/data/image.hpp"
#include "nvs/srt/srt.hpp"

namespace nvs::srt {

nlohmann::json SrtConfig::to_json() const {
    return {{"image_size", image_size}, {"patch", patch},
            {"dim", dim},               {"heads", heads},
            {"enc_blocks", enc_blocks}, {"dec_blocks", dec_blocks},
            {"mlp_ratio", mlp_ratio},   {"pos_freqs", pos_freqs},
            {"ray_freqs", ray_freqs},   {"intr_freqs", intr_freqs}};
}

SrtConfig SrtConfig::from_json(const nlohmann::json& j) {
    SrtConfig c;
    c.image_size = j.value("image_size", c.image_size);
    c.patch = j.value("patch", c.patch);
    c.dim = j.value("dim", c.dim);
    c.heads = j.value("heads", c.heads);
    c.enc_blocks = j.value("enc_blocks", c.enc_blocks);
    c.dec_blocks = j.value("dec_blocks", c.dec_blocks);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.pos_freqs = j.value("pos_freqs", c.pos_freqs);
    c.ray_freqs = j.value("ray_freqs", c.ray_freqs);
    c.intr_freqs = j.value("intr_freqs", c.intr_freqs);
    c.validate();
    return c;
}

void SrtConfig::validate() const {
    if (patch != 8) throw BadConfig("srt: patchifier is a fixed 3-layer stride-2 stack (patch=8)");
    if (image_size <= 0 || image_size % patch != 0)
        throw BadConfig("srt: image_size must be a positive multiple of the patch size");
    if (dim % 4 != 0) throw BadConfig("srt: dim must be divisible by 4");
    if (dim % heads != 0) throw BadConfig("srt: heads must divide dim");
    if (enc_blocks < 1 || dec_blocks < 1) throw BadConfig("srt: need at least one block");
}

void ImageSet::validate(const SrtConfig& cfg) const {
    if (images.empty()) throw EmptyInput("srt: image set is empty");
    if (images.size() != poses.size())
        throw ShapeError("srt: image/pose count mismatch");
    for (const auto& img : images) {
        const auto& s = img.shape();
        if (s.size() != 3 || s[0] != cfg.image_size || s[1] != cfg.image_size || s[2] != 3)
            throw ShapeError("srt: images must be [S,S,3] at the configured size");
    }
}

SrtModel::SrtModel(const SrtConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int64_t d = cfg_.dim;
    const int64_t hidden = d * cfg_.mlp_ratio;
    conv1_ = nn::Conv2d(params_, "patch.conv1", 3, d / 4, 3, 2, 1, rng);
    conv2_ = nn::Conv2d(params_, "patch.conv2", d / 4, d / 2, 3, 2, 1, rng);
    conv3_ = nn::Conv2d(params_, "patch.conv3", d / 2, d, 3, 2, 1, rng);
    pos_proj_ = nn::Linear(params_, "patch.pos", nn::sincos_len(2, cfg_.pos_freqs), d, rng);
    intr_proj_ = nn::Linear(params_, "patch.intr", nn::sincos_len(4, cfg_.intr_freqs), d, rng);
    ray_proj_ = nn::Linear(params_, "patch.ray", nn::sincos_len(6, cfg_.ray_freqs), d, rng);
    query_proj_ = nn::Linear(params_, "dec.query", nn::sincos_len(6, cfg_.ray_freqs), d, rng);
    id_table_ = params_.add("patch.id_table", Tensor::randn({2, d}, rng, 0.02f));
    for (int i = 0; i < cfg_.enc_blocks; ++i)
        enc_.emplace_back(params_, "enc.blk" + std::to_string(i), d, cfg_.heads, hidden, rng);
    enc_ln_ = nn::LayerNorm(params_, "enc.ln", d);
    for (int i = 0; i < cfg_.dec_blocks; ++i)
        dec_.emplace_back(params_, "dec.blk" + std::to_string(i), d, d, cfg_.heads,
                          hidden, rng);
    dec_ln_ = nn::LayerNorm(params_, "dec.ln", d);
    head1_ = nn::Linear(params_, "rgb.fc1", d, d, rng);
    head2_ = nn::Linear(params_, "rgb.fc2", d, 3, rng);
}

namespace {

void plucker_sincos(const geom::Ray& ray, int freqs, float* out) {
    const geom::PluckerRay p = geom::plucker_encode(ray);
    float v[6];
    for (int k = 0; k < 3; ++k) {
        v[k] = static_cast<float>(p.direction[k]);
        v[3 + k] = static_cast<float>(p.moment[k]);
    }
    nn::sincos_encode(v, 6, freqs, out);
}

}  // namespace

Var SrtModel::patchify(const ImageSet& set) const {
    set.validate(cfg_);
    const int hp = cfg_.image_size / cfg_.patch;
    const int64_t per_image = static_cast<int64_t>(hp) * hp;
    const int64_t n_tokens = per_image * static_cast<int64_t>(set.count());

    Var tokens;
    for (size_t n = 0; n < set.count(); ++n) {
        Var x(img::hwc_to_nchw(set.images[n]));
        Var h = conv3_(ag::silu(conv2_(ag::silu(conv1_(x)))));
        Var t = ag::transpose(ag::reshape(h, {cfg_.dim, per_image}));
        tokens = n == 0 ? t : ag::concat_rows(tokens, t);
    }

    const int64_t pos_len = nn::sincos_len(2, cfg_.pos_freqs);
    const int64_t intr_len = nn::sincos_len(4, cfg_.intr_freqs);
    const int64_t ray_len = nn::sincos_len(6, cfg_.ray_freqs);
    Tensor pos_in = Tensor::zeros({n_tokens, pos_len});
    Tensor intr_in = Tensor::zeros({n_tokens, intr_len});
    Tensor ray_in = Tensor::zeros({n_tokens, ray_len});
    std::vector<int64_t> ids;
    ids.reserve(static_cast<size_t>(n_tokens));

    int64_t row = 0;
    for (size_t n = 0; n < set.count(); ++n) {
        const geom::CameraPose& pose = set.poses[n];
        const float iv[4] = {static_cast<float>(pose.fx / pose.width),
                             static_cast<float>(pose.fy / pose.height),
                             static_cast<float>(pose.cx / pose.width),
                             static_cast<float>(pose.cy / pose.height)};
        std::vector<float> intr_row(static_cast<size_t>(intr_len));
        nn::sincos_encode(iv, 4, cfg_.intr_freqs, intr_row.data());

        geom::RayGrid anchor_rays;
        if (n == 0) anchor_rays = geom::camera_rays_at(pose, hp, hp);

        for (int r = 0; r < hp; ++r) {
            for (int c = 0; c < hp; ++c) {
                const float pv[2] = {(r + 0.5f) / hp * 2.f - 1.f,
                                     (c + 0.5f) / hp * 2.f - 1.f};
                nn::sincos_encode(pv, 2, cfg_.pos_freqs, pos_in.data() + row * pos_len);
                std::memcpy(intr_in.data() + row * intr_len, intr_row.data(),
                            sizeof(float) * static_cast<size_t>(intr_len));
                if (n == 0)
                    plucker_sincos(anchor_rays.at(r, c), cfg_.ray_freqs,
                                   ray_in.data() + row * ray_len);
                ids.push_back(n == 0 ? 0 : 1);
                ++row;
            }
        }
    }

    tokens = ag::add(tokens, pos_proj_(Var(std::move(pos_in))));
    tokens = ag::add(tokens, intr_proj_(Var(std::move(intr_in))));
    tokens = ag::add(tokens, ray_proj_(Var(std::move(ray_in))));
    tokens = ag::add(tokens, ag::gather_rows(id_table_, ids));
    return tokens;
}

std::vector<TokenProvenance> SrtModel::token_provenance(const ImageSet& set) const {
    const int hp = cfg_.image_size / cfg_.patch;
    std::vector<TokenProvenance> out;
    for (size_t n = 0; n < set.count(); ++n)
        for (int r = 0; r < hp; ++r)
            for (int c = 0; c < hp; ++c)
                out.push_back({static_cast<int>(n), r, c});
    return out;
}

Var SrtModel::encode(const Var& tokens) const {
    Var x = tokens;
    for (const auto& blk : enc_) x = blk(x);
    return enc_ln_(x);
}

SetLatent SrtModel::encode_set(const ImageSet& set) const {
    SetLatent latent;
    latent.tokens = encode(patchify(set)).value();
    latent.provenance = token_provenance(set);
    return latent;
}

Var SrtModel::decode_rays(const std::vector<geom::Ray>& rays, const Var& set_latent) const {
    if (rays.empty()) throw EmptyInput("srt: no query rays");
    const int64_t ray_len = nn::sincos_len(6, cfg_.ray_freqs);
    Tensor q = Tensor::zeros({static_cast<int64_t>(rays.size()), ray_len});
    for (size_t i = 0; i < rays.size(); ++i)
        plucker_sincos(rays[i], cfg_.ray_freqs, q.data() + static_cast<int64_t>(i) * ray_len);
    Var x = query_proj_(Var(std::move(q)));
    for (const auto& blk : dec_) x = blk(x, set_latent);
    return dec_ln_(x);
}

Var SrtModel::decode_grid(const geom::RayGrid& grid, const Var& set_latent) const {
    return decode_rays(grid.rays, set_latent);
}

DecoderFeatures SrtModel::decode_features(const geom::RayGrid& grid,
                                          const SetLatent& latent) const {
    DecoderFeatures f;
    f.height = grid.height;
    f.width = grid.width;
    const Var feats = decode_grid(grid, Var(latent.tokens));
    f.features = feats.value();
    f.rgb = render_rgb(feats).value();
    return f;
}

Var SrtModel::render_rgb(const Var& features) const {
    return ag::sigmoid(head2_(ag::silu(head1_(features))));
}

Var SrtModel::render_view(const ImageSet& set, const geom::RayGrid& grid) const {
    return render_rgb(decode_grid(grid, encode(patchify(set))));
}

void SrtModel::save(const std::string& dir, uint64_t seed) const {
    save_checkpoint(dir, "srt", cfg_.to_json(), seed, params_.state());
}

SrtModel SrtModel::load(const std::string& dir) {
    const CheckpointManifest m = load_manifest(dir);
    if (m.kind != "srt") throw BadConfig("checkpoint at " + dir + " is not an srt model");
    SrtModel model(SrtConfig::from_json(m.hyperparams), m.seed);
    model.params_.load_state(load_checkpoint_arrays(dir, m));
    return model;
}

Var srt_loss(const Var& pred_rgb, const Tensor& gt_rgb) {
    if (!pred_rgb.value().same_shape(gt_rgb))
        throw ShapeError("srt_loss: prediction/target shape mismatch");
    return ag::mse_const(pred_rgb, gt_rgb);
}

}  // namespace nvs::srt
