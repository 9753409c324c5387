#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "nvs/core/tensor.hpp"

// Tape-based reverse-mode autodiff. A graph is built per training step and
// discarded after backward(); parameters are long-lived leaf nodes.
namespace nvs::ag {

struct Node {
    Tensor value;
    Tensor grad;  // allocated on demand, same shape as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;  // scatter node.grad into parents

    Tensor& ensure_grad() {
        if (grad.empty()) grad = Tensor::zeros(value.shape());
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false) {
        node_ = std::make_shared<Node>();
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& grad() { return node_->ensure_grad(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void zero_grad() {
        if (node_ && !node_->grad.empty()) node_->grad.fill(0.f);
    }
    std::shared_ptr<Node> node() const { return node_; }

    const std::vector<int64_t>& shape() const { return node_->value.shape(); }
    int64_t numel() const { return node_->value.numel(); }
    float item() const { return node_->value[0]; }

private:
    std::shared_ptr<Node> node_;
};

// Runs reverse-mode accumulation from a scalar root (seed gradient 1).
void backward(const Var& root);

// ---- elementwise / arithmetic ----
Var add(const Var& a, const Var& b);            // same shape
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, float s);
Var mul_scalar(const Var& a, float s);
Var silu(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var softplus(const Var& a);                     // log(1+e^x), stable
Var vexp(const Var& a);
Var vlog(const Var& a);                         // log(max(x, 1e-12))

// ---- shape ----
Var reshape(const Var& a, std::vector<int64_t> shape);
Var transpose(const Var& a);                    // [M,N] -> [N,M]
Var concat_cols(const Var& a, const Var& b);    // [M,Na],[M,Nb] -> [M,Na+Nb]
Var concat_rows(const Var& a, const Var& b);    // [Ma,N],[Mb,N] -> [Ma+Mb,N]
Var slice_rows(const Var& a, int64_t start, int64_t count);
Var gather_rows(const Var& table, const std::vector<int64_t>& idx);

// ---- linear algebra ----
// [M,K]x[K,N] -> [M,N]; trans flags apply to the stored layout.
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
Var add_rowvec(const Var& a, const Var& v);     // a [M,N] + v [N] broadcast
Var softmax_rows(const Var& a);
Var layernorm(const Var& x, const Var& gamma, const Var& beta, float eps = 1e-5f);

// Fused multi-head scaled dot-product attention.
// q [Tq,D], k [Tk,D], v [Tk,D]; D divisible by heads.
Var attention(const Var& q, const Var& k, const Var& v, int heads);

// ---- conv / spatial (NCHW) ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var avg_pool2(const Var& x);                    // 2x2 mean, stride 2
Var upsample_nearest2(const Var& x);
// y[n,c,h,w] = x[n,c,h,w] * (1 + s[n,c]) + t[n,c]
Var channel_scale_shift(const Var& x, const Var& s, const Var& t);
Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta,
               float eps = 1e-5f);

// ---- reductions / losses ----
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var mse(const Var& a, const Var& b);            // mean squared error, scalar
Var mse_const(const Var& a, const Tensor& b);   // target held constant

}  // namespace nvs::ag
