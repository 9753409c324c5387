#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "nvs/core/autograd.hpp"

namespace nvs::nn {

using ag::Var;

// Flat registry of named trainable tensors. Layers register parameters at
// construction; the optimizer and checkpoint code iterate it.
class ParamStore {
public:
    Var add(const std::string& name, Tensor init) {
        Var v(std::move(init), true);
        names_.push_back(name);
        params_.push_back(v);
        return v;
    }

    size_t size() const { return params_.size(); }
    const std::string& name(size_t i) const { return names_[i]; }
    Var& param(size_t i) { return params_[i]; }
    const Var& param(size_t i) const { return params_[i]; }

    Var* find(const std::string& name) {
        for (size_t i = 0; i < params_.size(); ++i)
            if (names_[i] == name) return &params_[i];
        return nullptr;
    }

    int64_t total_count() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    // Named-array views for checkpointing.
    std::map<std::string, Tensor> state() const {
        std::map<std::string, Tensor> out;
        for (size_t i = 0; i < params_.size(); ++i) out[names_[i]] = params_[i].value();
        return out;
    }
    void load_state(const std::map<std::string, Tensor>& st);

private:
    std::vector<std::string> names_;
    std::vector<Var> params_;
};

struct Linear {
    Var w;  // [in, out]
    Var b;  // [out]
    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, int64_t in, int64_t out, Rng& rng,
           float w_scale = -1.f) {
        const float s = w_scale >= 0.f ? w_scale : 1.f / std::sqrt(static_cast<float>(in));
        w = ps.add(name + ".w", Tensor::randn({in, out}, rng, s));
        b = ps.add(name + ".b", Tensor::zeros({out}));
    }
    Var operator()(const Var& x) const { return ag::add_rowvec(ag::matmul(x, w), b); }
};

struct LayerNorm {
    Var gamma, beta;
    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& name, int64_t dim) {
        gamma = ps.add(name + ".gamma", Tensor::full({dim}, 1.f));
        beta = ps.add(name + ".beta", Tensor::zeros({dim}));
    }
    Var operator()(const Var& x) const { return ag::layernorm(x, gamma, beta); }
};

struct Mlp {
    Linear fc1, fc2;
    Mlp() = default;
    Mlp(ParamStore& ps, const std::string& name, int64_t dim, int64_t hidden, Rng& rng)
        : fc1(ps, name + ".fc1", dim, hidden, rng), fc2(ps, name + ".fc2", hidden, dim, rng) {}
    Var operator()(const Var& x) const { return fc2(ag::silu(fc1(x))); }
};

// Multi-head attention; self-attention when kv == q source.
struct Attention {
    Linear wq, wk, wv, wo;
    int heads = 1;
    Attention() = default;
    Attention(ParamStore& ps, const std::string& name, int64_t dim, int64_t kv_dim,
              int h, Rng& rng)
        : wq(ps, name + ".q", dim, dim, rng),
          wk(ps, name + ".k", kv_dim, dim, rng),
          wv(ps, name + ".v", kv_dim, dim, rng),
          wo(ps, name + ".o", dim, dim, rng),
          heads(h) {}
    Var operator()(const Var& x, const Var& kv) const {
        return wo(ag::attention(wq(x), wk(kv), wv(kv), heads));
    }
};

// Pre-LN transformer block: x += attn(ln(x)); x += mlp(ln(x)).
struct TransformerBlock {
    LayerNorm ln1, ln2;
    Attention attn;
    Mlp mlp;
    TransformerBlock() = default;
    TransformerBlock(ParamStore& ps, const std::string& name, int64_t dim, int heads,
                     int64_t mlp_hidden, Rng& rng)
        : ln1(ps, name + ".ln1", dim),
          ln2(ps, name + ".ln2", dim),
          attn(ps, name + ".attn", dim, dim, heads, rng),
          mlp(ps, name + ".mlp", dim, mlp_hidden, rng) {}
    Var operator()(const Var& x) const {
        Var h = ag::add(x, attn(ln1(x), ln1(x)));
        return ag::add(h, mlp(ln2(h)));
    }
};

// Pre-LN cross-attention block; queries stay per-row independent.
struct CrossBlock {
    LayerNorm ln1, ln2;
    Attention attn;
    Mlp mlp;
    CrossBlock() = default;
    CrossBlock(ParamStore& ps, const std::string& name, int64_t dim, int64_t kv_dim,
               int heads, int64_t mlp_hidden, Rng& rng)
        : ln1(ps, name + ".ln1", dim),
          ln2(ps, name + ".ln2", dim),
          attn(ps, name + ".attn", dim, kv_dim, heads, rng),
          mlp(ps, name + ".mlp", dim, mlp_hidden, rng) {}
    Var operator()(const Var& x, const Var& kv) const {
        Var h = ag::add(x, attn(ln1(x), kv));
        return ag::add(h, mlp(ln2(h)));
    }
};

struct Conv2d {
    Var w;  // [out, in, k, k]
    Var b;  // [out]
    int stride = 1, pad = 0;
    Conv2d() = default;
    Conv2d(ParamStore& ps, const std::string& name, int64_t in, int64_t out, int k,
           int stride_, int pad_, Rng& rng, bool zero_init = false) {
        const float s = zero_init ? 0.f : 1.f / std::sqrt(static_cast<float>(in * k * k));
        w = ps.add(name + ".w", zero_init ? Tensor::zeros({out, in, k, k})
                                          : Tensor::randn({out, in, k, k}, rng, s));
        b = ps.add(name + ".b", Tensor::zeros({out}));
        stride = stride_;
        pad = pad_;
    }
    Var operator()(const Var& x) const { return ag::conv2d(x, w, b, stride, pad); }
};

struct GroupNorm {
    Var gamma, beta;
    int groups = 1;
    GroupNorm() = default;
    GroupNorm(ParamStore& ps, const std::string& name, int64_t channels, int groups_) {
        gamma = ps.add(name + ".gamma", Tensor::full({channels}, 1.f));
        beta = ps.add(name + ".beta", Tensor::zeros({channels}));
        groups = groups_;
    }
    Var operator()(const Var& x) const { return ag::group_norm(x, groups, gamma, beta); }
};

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(ParamStore& ps);
    void set_lr(float lr) { cfg_.lr = lr; }
    float lr() const { return cfg_.lr; }
    int64_t t() const { return t_; }

private:
    AdamConfig cfg_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

// Sinusoidal features of each input component: for every x and frequency
// 2^j (j < freqs), emit sin(2^j * pi * x) and cos(2^j * pi * x).
// Output length = in_len * freqs * 2.
void sincos_encode(const float* x, int64_t in_len, int freqs, float* out);
int64_t sincos_len(int64_t in_len, int freqs);

// Classic transformer timestep embedding of dimension dim (even).
Tensor timestep_embedding(float t, int64_t dim, float max_period = 10000.f);

}  // namespace nvs::nn
