#include <nlohmann/json.hpp>

#include "nvs/core/serialize.hpp"
#include "nvs/diffusion/diffusion.hpp"

namespace nvs::diff {

nlohmann::json DiffusionConfig::to_json() const {
    return {{"image_size", image_size}, {"base_channels", base_channels},
            {"heads", heads},           {"cond_dim", cond_dim},
            {"cd_channels", cd_channels}, {"time_dim", time_dim},
            {"t_count", t_count}};
}

DiffusionConfig DiffusionConfig::from_json(const nlohmann::json& j) {
    DiffusionConfig c;
    c.image_size = j.value("image_size", c.image_size);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.heads = j.value("heads", c.heads);
    c.cond_dim = j.value("cond_dim", c.cond_dim);
    c.cd_channels = j.value("cd_channels", c.cd_channels);
    c.time_dim = j.value("time_dim", c.time_dim);
    c.t_count = j.value("t_count", c.t_count);
    c.validate();
    return c;
}

void DiffusionConfig::validate() const {
    if (image_size < 4 || image_size % 4 != 0)
        throw BadConfig("diffusion: image_size must be a positive multiple of 4");
    if (base_channels < 8 || base_channels % 8 != 0)
        throw BadConfig("diffusion: base_channels must be a positive multiple of 8");
    if (base_channels % heads != 0)
        throw BadConfig("diffusion: heads must divide base_channels");
    if (t_count < 2) throw BadConfig("diffusion: t_count must be >= 2");
}

ResBlock::ResBlock(nn::ParamStore& ps, const std::string& name, int64_t in,
                   int64_t out, int64_t time_dim, Rng& rng)
    : gn1(ps, name + ".gn1", in, 8),
      gn2(ps, name + ".gn2", out, 8),
      conv1(ps, name + ".conv1", in, out, 3, 1, 1, rng),
      conv2(ps, name + ".conv2", out, out, 3, 1, 1, rng),
      t_scale(ps, name + ".tscale", time_dim, out, rng, 0.f),
      t_shift(ps, name + ".tshift", time_dim, out, rng, 0.f) {
    if (in != out) {
        skip = nn::Conv2d(ps, name + ".skip", in, out, 1, 1, 0, rng);
        has_skip = true;
    }
}

Var ResBlock::operator()(const Var& x, const Var& temb) const {
    Var h = conv1(ag::silu(gn1(x)));
    h = ag::channel_scale_shift(h, t_scale(temb), t_shift(temb));
    h = conv2(ag::silu(gn2(h)));
    return ag::add(h, has_skip ? skip(x) : x);
}

CrossAttn::CrossAttn(nn::ParamStore& ps, const std::string& name, int64_t channels,
                     int64_t kv_dim, int heads_, Rng& rng)
    : ln(ps, name + ".ln", channels),
      wq(ps, name + ".q", channels + 6, channels, rng),
      wk(ps, name + ".k", kv_dim, channels, rng),
      wv(ps, name + ".v", kv_dim, channels, rng),
      wo(ps, name + ".o", channels, channels, rng),
      heads(heads_) {}

Var CrossAttn::operator()(const Var& x, const Var& cs, const Tensor& ray_feats) const {
    const int64_t c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    Var tokens = ag::transpose(ag::reshape(x, {c, h * w}));  // [hw, C]
    Var q_in = ag::concat_cols(ln(tokens), Var(ray_feats));
    Var out = wo(ag::attention(wq(q_in), wk(cs), wv(cs), heads));
    Var mixed = ag::add(tokens, out);
    return ag::reshape(ag::transpose(mixed), {1, c, h, w});
}

DenoiserNet::DenoiserNet(const DiffusionConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int64_t c = cfg_.base_channels;
    const int64_t td = cfg_.time_dim;
    stem_ = nn::Conv2d(params_, "stem", 3, c, 3, 1, 1, rng);
    time1_ = nn::Linear(params_, "time.fc1", td, td, rng);
    time2_ = nn::Linear(params_, "time.fc2", td, td, rng);

    enc0_ = ResBlock(params_, "enc0", c, c, td, rng);
    enc1_ = ResBlock(params_, "enc1", c, 2 * c, td, rng);
    enc2_ = ResBlock(params_, "enc2", 2 * c, 4 * c, td, rng);
    mid1_ = ResBlock(params_, "mid1", 4 * c, 4 * c, td, rng);
    mid2_ = ResBlock(params_, "mid2", 4 * c, 4 * c, td, rng);
    dec2_ = ResBlock(params_, "dec2", 6 * c, 2 * c, td, rng);
    dec1_ = ResBlock(params_, "dec1", 3 * c, c, td, rng);

    attn1_ = CrossAttn(params_, "attn1", 2 * c, cfg_.cond_dim, cfg_.heads, rng);
    attn2_ = CrossAttn(params_, "attn2", 4 * c, cfg_.cond_dim, cfg_.heads, rng);
    attn_mid_ = CrossAttn(params_, "attn_mid", 4 * c, cfg_.cond_dim, cfg_.heads, rng);
    attn_d2_ = CrossAttn(params_, "attn_d2", 2 * c, cfg_.cond_dim, cfg_.heads, rng);

    out_gn_ = nn::GroupNorm(params_, "out.gn", c, 8);
    out_conv_ = nn::Conv2d(params_, "out.conv", c, 3, 3, 1, 1, rng, /*zero_init=*/true);

    ctrl_in_ = nn::Conv2d(params_, "ctrl.in", cfg_.cd_channels, c, 3, 1, 1, rng);
    ctrl_mid_ = nn::Conv2d(params_, "ctrl.mid", c, 2 * c, 3, 1, 1, rng);
    ctrl_out_ = nn::Conv2d(params_, "ctrl.out", 2 * c, 4 * c, 3, 1, 1, rng);
    zero0_ = nn::Conv2d(params_, "ctrl.zero0", c, c, 1, 1, 0, rng, /*zero_init=*/true);
    zero1_ = nn::Conv2d(params_, "ctrl.zero1", 2 * c, 2 * c, 1, 1, 0, rng, true);
    zero2_ = nn::Conv2d(params_, "ctrl.zero2", 4 * c, 4 * c, 1, 1, 0, rng, true);
}

namespace {

// [hw, 6] raw Plücker coordinates of the query frustum at a level resolution
Tensor level_ray_feats(const geom::RayGrid& grid, int size) {
    const geom::RayGrid g = geom::camera_rays_at(grid.pose, size, size);
    Tensor out({static_cast<int64_t>(size) * size, 6});
    for (int64_t i = 0; i < static_cast<int64_t>(g.rays.size()); ++i) {
        const geom::PluckerRay p = geom::plucker_encode(g.rays[static_cast<size_t>(i)]);
        for (int k = 0; k < 3; ++k) {
            out[i * 6 + k] = static_cast<float>(p.direction[k]);
            out[i * 6 + 3 + k] = static_cast<float>(p.moment[k]);
        }
    }
    return out;
}

Var concat_channels(const Var& a, const Var& b) {
    const int64_t ca = a.shape()[1], cb = b.shape()[1];
    const int64_t h = a.shape()[2], w = a.shape()[3];
    Var fa = ag::reshape(a, {ca, h * w});
    Var fb = ag::reshape(b, {cb, h * w});
    return ag::reshape(ag::concat_rows(fa, fb), {1, ca + cb, h, w});
}

}  // namespace

Var DenoiserNet::forward(const Tensor& x_t, int t, const Conditioning& cond) const {
    const int s = cfg_.image_size;
    if (x_t.shape() != std::vector<int64_t>{1, 3, s, s})
        throw ShapeError("denoiser: x_t must be [1,3,S,S] at the working size");
    if (t < 0 || t >= cfg_.t_count) throw BadConfig("denoiser: t out of range");

    const Var cd(cond.null_cd ? Tensor::zeros(cond.c_d.shape()) : cond.c_d);
    const Var cs(cond.null_cs ? Tensor::zeros(cond.c_s.shape()) : cond.c_s);

    Var temb = time2_(ag::silu(time1_(
        Var(nn::timestep_embedding(static_cast<float>(t), cfg_.time_dim)))));

    // control branch residuals (zero-initialized taps)
    Var h0c = ag::silu(ctrl_in_(cd));
    Var h1c = ag::silu(ctrl_mid_(ag::avg_pool2(h0c)));
    Var h2c = ag::silu(ctrl_out_(ag::avg_pool2(h1c)));

    const Tensor rays_half = level_ray_feats(cond.grid, s / 2);
    const Tensor rays_quarter = level_ray_feats(cond.grid, s / 4);

    Var x = stem_(Var(x_t));
    Var e0 = ag::add(enc0_(x, temb), zero0_(h0c));
    Var e1 = enc1_(ag::avg_pool2(e0), temb);
    e1 = attn1_(ag::add(e1, zero1_(h1c)), cs, rays_half);
    Var e2 = enc2_(ag::avg_pool2(e1), temb);
    e2 = attn2_(ag::add(e2, zero2_(h2c)), cs, rays_quarter);

    Var m = mid1_(e2, temb);
    m = attn_mid_(m, cs, rays_quarter);
    m = mid2_(m, temb);

    Var d2 = dec2_(concat_channels(ag::upsample_nearest2(m), e1), temb);
    d2 = attn_d2_(d2, cs, rays_half);
    Var d1 = dec1_(concat_channels(ag::upsample_nearest2(d2), e0), temb);

    return out_conv_(ag::silu(out_gn_(d1)));
}

Tensor DenoiserNet::epsilon(const Tensor& x_t, int t, const Conditioning& cond) const {
    return forward(x_t, t, cond).value();
}

void DenoiserNet::save(const std::string& dir, uint64_t seed) const {
    save_checkpoint(dir, "diffusion", cfg_.to_json(), seed, params_.state());
}

DenoiserNet DenoiserNet::load(const std::string& dir) {
    const CheckpointManifest m = load_manifest(dir);
    if (m.kind != "diffusion")
        throw BadConfig("checkpoint at " + dir + " is not a diffusion model");
    DenoiserNet net(DiffusionConfig::from_json(m.hyperparams), m.seed);
    net.params_.load_state(load_checkpoint_arrays(dir, m));
    return net;
}

}  // namespace nvs::diff
