#include <cmath>

#include "nvs/core/kernels.hpp"
#include "nvs/core/nn.hpp"

namespace nvs::nn {

void ParamStore::load_state(const std::map<std::string, Tensor>& st) {
    for (size_t i = 0; i < params_.size(); ++i) {
        auto it = st.find(names_[i]);
        if (it == st.end())
            throw BadConfig("checkpoint missing parameter: " + names_[i]);
        if (!it->second.same_shape(params_[i].value()))
            throw ShapeError("checkpoint shape mismatch for " + names_[i] + ": " +
                             it->second.shape_str() + " vs " +
                             params_[i].value().shape_str());
        params_[i].value() = it->second;
    }
}

void Adam::step(ParamStore& ps) {
    if (m_.empty()) {
        m_.resize(ps.size());
        v_.resize(ps.size());
        for (size_t i = 0; i < ps.size(); ++i) {
            m_[i] = Tensor::zeros(ps.param(i).value().shape());
            v_[i] = Tensor::zeros(ps.param(i).value().shape());
        }
    }
    ++t_;
    const float bc1 = 1.f - std::pow(cfg_.beta1, static_cast<float>(t_));
    const float bc2 = 1.f - std::pow(cfg_.beta2, static_cast<float>(t_));
    for (size_t i = 0; i < ps.size(); ++i) {
        Var& p = ps.param(i);
        if (p.node()->grad.empty()) continue;
        kern::adam_update(p.value().data(), m_[i].data(), v_[i].data(),
                          p.node()->grad.data(), static_cast<size_t>(p.numel()),
                          cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.eps, bc1, bc2);
    }
}

int64_t sincos_len(int64_t in_len, int freqs) { return in_len * freqs * 2; }

void sincos_encode(const float* x, int64_t in_len, int freqs, float* out) {
    int64_t k = 0;
    for (int64_t i = 0; i < in_len; ++i) {
        float f = static_cast<float>(M_PI);
        for (int j = 0; j < freqs; ++j) {
            out[k++] = std::sin(f * x[i]);
            out[k++] = std::cos(f * x[i]);
            f *= 2.f;
        }
    }
}

Tensor timestep_embedding(float t, int64_t dim, float max_period) {
    Tensor out({1, dim});
    const int64_t half = dim / 2;
    for (int64_t i = 0; i < half; ++i) {
        const float freq =
            std::exp(-std::log(max_period) * static_cast<float>(i) / half);
        out[i] = std::cos(t * freq);
        out[half + i] = std::sin(t * freq);
    }
    return out;
}

}  // namespace nvs::nn
