#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "nvs/core/autograd.hpp"
#include "nvs/core/kernels.hpp"

namespace nvs::ag {

namespace {

using NodePtr = std::shared_ptr<Node>;

Var make_node(Tensor value, std::vector<Var> parents,
              std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool needs = false;
    for (const auto& p : parents) {
        if (p.requires_grad()) needs = true;
        n->parents.push_back(p.node());
    }
    n->requires_grad = needs;
    if (needs) n->backward_fn = std::move(backward_fn);
    return Var(std::move(n));
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value()))
        throw ShapeError(std::string(op) + ": shape mismatch " +
                         a.value().shape_str() + " vs " + b.value().shape_str());
}

// im2col for NCHW, one sample. col is [C*kh*kw, Ho*Wo].
void im2col(const float* x, int c, int h, int w, int kh, int kw, int stride,
            int pad, int ho, int wo, float* col) {
    for (int ci = 0; ci < c; ++ci) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                float* dst = col + static_cast<size_t>((ci * kh + ki) * kw + kj) * ho * wo;
                for (int oi = 0; oi < ho; ++oi) {
                    const int ii = oi * stride + ki - pad;
                    if (ii < 0 || ii >= h) {
                        std::memset(dst + static_cast<size_t>(oi) * wo, 0,
                                    sizeof(float) * wo);
                        continue;
                    }
                    const float* src = x + (static_cast<size_t>(ci) * h + ii) * w;
                    for (int oj = 0; oj < wo; ++oj) {
                        const int jj = oj * stride + kj - pad;
                        dst[static_cast<size_t>(oi) * wo + oj] =
                            (jj >= 0 && jj < w) ? src[jj] : 0.f;
                    }
                }
            }
        }
    }
}

void col2im_accum(const float* col, int c, int h, int w, int kh, int kw,
                  int stride, int pad, int ho, int wo, float* x) {
    for (int ci = 0; ci < c; ++ci) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const float* src =
                    col + static_cast<size_t>((ci * kh + ki) * kw + kj) * ho * wo;
                for (int oi = 0; oi < ho; ++oi) {
                    const int ii = oi * stride + ki - pad;
                    if (ii < 0 || ii >= h) continue;
                    float* dst = x + (static_cast<size_t>(ci) * h + ii) * w;
                    for (int oj = 0; oj < wo; ++oj) {
                        const int jj = oj * stride + kj - pad;
                        if (jj >= 0 && jj < w)
                            dst[jj] += src[static_cast<size_t>(oi) * wo + oj];
                    }
                }
            }
        }
    }
}

}  // namespace

void backward(const Var& root) {
    if (root.numel() != 1) throw ShapeError("backward: root must be scalar");
    // Topological order by iterative DFS.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    root.node()->ensure_grad().fill(1.f);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out(a.value().shape());
    kern::add(a.value().data(), b.value().data(), out.data(),
              static_cast<size_t>(out.numel()));
    auto an = a.node().get();
    auto bn = b.node().get();
    return make_node(std::move(out), {a, b}, [an, bn](Node& n) {
        const size_t sz = static_cast<size_t>(n.grad.numel());
        if (an->requires_grad)
            kern::axpy(1.f, n.grad.data(), an->ensure_grad().data(), sz);
        if (bn->requires_grad)
            kern::axpy(1.f, n.grad.data(), bn->ensure_grad().data(), sz);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a.value().shape());
    kern::sub(a.value().data(), b.value().data(), out.data(),
              static_cast<size_t>(out.numel()));
    auto an = a.node().get();
    auto bn = b.node().get();
    return make_node(std::move(out), {a, b}, [an, bn](Node& n) {
        const size_t sz = static_cast<size_t>(n.grad.numel());
        if (an->requires_grad)
            kern::axpy(1.f, n.grad.data(), an->ensure_grad().data(), sz);
        if (bn->requires_grad)
            kern::axpy(-1.f, n.grad.data(), bn->ensure_grad().data(), sz);
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a.value().shape());
    kern::mul(a.value().data(), b.value().data(), out.data(),
              static_cast<size_t>(out.numel()));
    auto an = a.node().get();
    auto bn = b.node().get();
    return make_node(std::move(out), {a, b}, [an, bn](Node& n) {
        const size_t sz = static_cast<size_t>(n.grad.numel());
        if (an->requires_grad) {
            float* ga = an->ensure_grad().data();
            const float* g = n.grad.data();
            const float* bv = bn->value.data();
            for (size_t i = 0; i < sz; ++i) ga[i] += g[i] * bv[i];
        }
        if (bn->requires_grad) {
            float* gb = bn->ensure_grad().data();
            const float* g = n.grad.data();
            const float* av = an->value.data();
            for (size_t i = 0; i < sz; ++i) gb[i] += g[i] * av[i];
        }
    });
}

Var add_scalar(const Var& a, float s) {
    Tensor out(a.value().shape());
    const size_t sz = static_cast<size_t>(out.numel());
    for (size_t i = 0; i < sz; ++i) out.data()[i] = a.value().data()[i] + s;
    auto an = a.node().get();
    return make_node(std::move(out), {a}, [an](Node& n) {
        kern::axpy(1.f, n.grad.data(), an->ensure_grad().data(),
                   static_cast<size_t>(n.grad.numel()));
    });
}

Var mul_scalar(const Var& a, float s) {
    Tensor out(a.value().shape());
    kern::scale(a.value().data(), s, out.data(), static_cast<size_t>(out.numel()));
    auto an = a.node().get();
    return make_node(std::move(out), {a}, [an, s](Node& n) {
        kern::axpy(s, n.grad.data(), an->ensure_grad().data(),
                   static_cast<size_t>(n.grad.numel()));
    });
}

Var silu(const Var& a) {
    const size_t sz = static_cast<size_t>(a.numel());
    Tensor sig(a.value().shape());
    kern::vsigmoid(a.value().data(), sig.data(), sz);
    Tensor out(a.value().shape());
    kern::mul(a.value().data(), sig.data(), out.data(), sz);
    auto an = a.node().get();
    return make_node(std::move(out), {a}, [an, sig = std::move(sig)](Node& n) {
        float* ga = an->ensure_grad().data();
        const float* g = n.grad.data();
        const float* x = an->value.data();
        const float* s = sig.data();
        const size_t m = static_cast<size_t>(n.grad.numel());
        for (size_t i = 0; i < m; ++i) {
            const float d = s[i] * (1.f + x[i] * (1.f - s[i]));
            ga[i] += g[i] * d;
        }
    });
}

Var sigmoid(const Var& a) {
    Tensor out(a.value().shape());
    kern::vsigmoid(a.value().data(), out.data(), static_cast<size_t>(a.numel()));
    auto an = a.node().get();
    return make_node(std::move(out), {a}, [an](Node& n) {
        float* ga = an->ensure_grad().data();
        const float* g = n.grad.data();
        const float* y = n.value.data();
        const size_t m = static_cast<size_t>(n.grad.numel());
        for (size_t i = 0; i < m; ++i) ga[i] += g[i] * y[i] * (1.f - y[i]);
    });
}

Var relu(const Var& a) {
    Tensor out(a.value().shape());
    const size_t sz = static_cast<size_t>(a.numel());
    for (size_t i = 0; i < sz; ++i) out.data()[i] = std::max(0.f, a.value().data()[i]);
    auto an = a.node().get();
    return make_node(std::move(out), {a}, [an](Node& n) {
        float* ga = an->ensure_grad().data();
        const float* g = n.grad.data();
        const float* x = an->value.data();
        const size_t m = static_cast<size_t>(n.grad.numel());
        for (size_t i = 0; i < m; ++i)
            if (x[i] > 0.f) ga[i] += g[i];
    });
}

Var softplus(const Var& a) {
    Tensor out(a.value().shape());
    const size_t sz = static_cast<size_t>(a.numel());
    for (size_t i = 0; i < sz; ++i) {
        const float x = a.value().data()[i];
        out.data()[i] = x > 20.f ? x : std::log1p(std::exp(x));
    }
    auto an = a.node().get();
    return make_node(std::move(out), {a}, [an](Node& n) {
        float* ga = an->ensure_grad().data();
        const float* g = n.grad.data();
        const float* x = an->value.data();
        const size_t m = static_cast<size_t>(n.grad.numel());
        for (size_t i = 0; i < m; ++i) ga[i] += g[i] / (1.f + std::exp(-x[i]));
    });
}

Var vexp(const Var& a) {
    Tensor out(a.value().shape());
    kern::vexp(a.value().data(), out.data(), static_cast<size_t>(a.numel()));
    auto an = a.node().get();
    return make_node(std::move(out), {a}, [an](Node& n) {
        float* ga = an->ensure_grad().data();
        const float* g = n.grad.data();
        const float* y = n.value.data();
        const size_t m = static_cast<size_t>(n.grad.numel());
        for (size_t i = 0; i < m; ++i) ga[i] += g[i] * y[i];
    });
}

Var vlog(const Var& a) {
    const int64_t m = a.numel();
    Tensor out(a.value().shape());
    Tensor clamped(a.value().shape());
    for (int64_t i = 0; i < m; ++i) {
        clamped[i] = std::max(a.value()[i], 1e-12f);
        out[i] = std::log(clamped[i]);
    }
    auto an = a.node().get();
    return make_node(std::move(out), {a},
                     [an, clamped = std::move(clamped)](Node& n) {
                         float* ga = an->ensure_grad().data();
                         for (int64_t i = 0; i < n.grad.numel(); ++i)
                             ga[i] += n.grad[i] / clamped[i];
                     });
}

Var reshape(const Var& a, std::vector<int64_t> shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    auto an = a.node().get();
    return make_node(std::move(out), {a}, [an](Node& n) {
        kern::axpy(1.f, n.grad.data(), an->ensure_grad().data(),
                   static_cast<size_t>(n.grad.numel()));
    });
}

Var transpose(const Var& a) {
    if (a.shape().size() != 2) throw ShapeError("transpose: need a 2-d tensor");
    const int64_t m = a.shape()[0], k = a.shape()[1];
    Tensor out({k, m});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < k; ++j) out[j * m + i] = a.value()[i * k + j];
    auto an = a.node().get();
    return make_node(std::move(out), {a}, [an, m, k](Node& n) {
        float* g = an->ensure_grad().data();
        for (int64_t j = 0; j < k; ++j)
            for (int64_t i = 0; i < m; ++i) g[i * k + j] += n.grad[j * m + i];
    });
}

Var concat_cols(const Var& a, const Var& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[0] != b.shape()[0])
        throw ShapeError("concat_cols: need [M,Na],[M,Nb]");
    const int64_t m = a.shape()[0], na = a.shape()[1], nb = b.shape()[1];
    Tensor out({m, na + nb});
    for (int64_t i = 0; i < m; ++i) {
        std::memcpy(out.data() + i * (na + nb), a.value().data() + i * na,
                    sizeof(float) * na);
        std::memcpy(out.data() + i * (na + nb) + na, b.value().data() + i * nb,
                    sizeof(float) * nb);
    }
    auto an = a.node().get();
    auto bn = b.node().get();
    return make_node(std::move(out), {a, b}, [an, bn, m, na, nb](Node& n) {
        for (int64_t i = 0; i < m; ++i) {
            const float* g = n.grad.data() + i * (na + nb);
            if (an->requires_grad)
                kern::axpy(1.f, g, an->ensure_grad().data() + i * na,
                           static_cast<size_t>(na));
            if (bn->requires_grad)
                kern::axpy(1.f, g + na, bn->ensure_grad().data() + i * nb,
                           static_cast<size_t>(nb));
        }
    });
}

Var concat_rows(const Var& a, const Var& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[1])
        throw ShapeError("concat_rows: need [Ma,N],[Mb,N]");
    const int64_t ma = a.shape()[0], mb = b.shape()[0], nn = a.shape()[1];
    Tensor out({ma + mb, nn});
    std::memcpy(out.data(), a.value().data(), sizeof(float) * ma * nn);
    std::memcpy(out.data() + ma * nn, b.value().data(), sizeof(float) * mb * nn);
    auto an = a.node().get();
    auto bn = b.node().get();
    return make_node(std::move(out), {a, b}, [an, bn, ma, mb, nn](Node& n) {
        if (an->requires_grad)
            kern::axpy(1.f, n.grad.data(), an->ensure_grad().data(),
                       static_cast<size_t>(ma * nn));
        if (bn->requires_grad)
            kern::axpy(1.f, n.grad.data() + ma * nn, bn->ensure_grad().data(),
                       static_cast<size_t>(mb * nn));
    });
}

Var slice_rows(const Var& a, int64_t start, int64_t count) {
    if (a.shape().size() != 2) throw ShapeError("slice_rows: need 2D");
    const int64_t nn = a.shape()[1];
    if (start < 0 || start + count > a.shape()[0])
        throw ShapeError("slice_rows: out of range");
    Tensor out({count, nn});
    std::memcpy(out.data(), a.value().data() + start * nn, sizeof(float) * count * nn);
    auto an = a.node().get();
    return make_node(std::move(out), {a}, [an, start, count, nn](Node& n) {
        kern::axpy(1.f, n.grad.data(), an->ensure_grad().data() + start * nn,
                   static_cast<size_t>(count * nn));
    });
}

Var gather_rows(const Var& table, const std::vector<int64_t>& idx) {
    if (table.shape().size() != 2) throw ShapeError("gather_rows: need 2D table");
    const int64_t nn = table.shape()[1];
    Tensor out({static_cast<int64_t>(idx.size()), nn});
    for (size_t i = 0; i < idx.size(); ++i)
        std::memcpy(out.data() + i * nn, table.value().data() + idx[i] * nn,
                    sizeof(float) * nn);
    auto tn = table.node().get();
    return make_node(std::move(out), {table}, [tn, idx, nn](Node& n) {
        float* gt = tn->ensure_grad().data();
        for (size_t i = 0; i < idx.size(); ++i)
            kern::axpy(1.f, n.grad.data() + i * nn, gt + idx[i] * nn,
                       static_cast<size_t>(nn));
    });
}

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
        throw ShapeError("matmul: need 2D operands");
    const int64_t am = a.shape()[0], an_ = a.shape()[1];
    const int64_t bm = b.shape()[0], bn_ = b.shape()[1];
    const int64_t m = trans_a ? an_ : am;
    const int64_t k = trans_a ? am : an_;
    const int64_t k2 = trans_b ? bn_ : bm;
    const int64_t n = trans_b ? bm : bn_;
    if (k != k2) throw ShapeError("matmul: inner dims mismatch");
    Tensor out({m, n});
    kern::gemm(trans_a, trans_b, static_cast<int>(m), static_cast<int>(n),
               static_cast<int>(k), 1.f, a.value().data(), static_cast<int>(an_),
               b.value().data(), static_cast<int>(bn_), 0.f, out.data(),
               static_cast<int>(n));
    auto anode = a.node().get();
    auto bnode = b.node().get();
    return make_node(
        std::move(out), {a, b},
        [anode, bnode, trans_a, trans_b, m, n, k, an_, bn_](Node& node) {
            const float* g = node.grad.data();
            if (anode->requires_grad) {
                float* ga = anode->ensure_grad().data();
                if (!trans_a) {
                    // dA = dC * op(B)^T  -> [m,k]
                    kern::gemm(false, !trans_b, static_cast<int>(m),
                               static_cast<int>(k), static_cast<int>(n), 1.f, g,
                               static_cast<int>(n), bnode->value.data(),
                               static_cast<int>(bn_), 1.f, ga, static_cast<int>(an_));
                } else {
                    // A stored [k,m]; dA_stored = op(B) * dC^T ... = (dC^T * op(B)^T)^T
                    // dA_stored[k,m] = op(B)[k?,..]: dA_stored = Bop * dC^T where
                    // Bop is [k,n]: if trans_b, B stored [n,k] so Bop = B^T.
                    kern::gemm(trans_b, true, static_cast<int>(k), static_cast<int>(m),
                               static_cast<int>(n), 1.f, bnode->value.data(),
                               static_cast<int>(bn_), g, static_cast<int>(n), 1.f, ga,
                               static_cast<int>(an_));
                }
            }
            if (bnode->requires_grad) {
                float* gb = bnode->ensure_grad().data();
                if (!trans_b) {
                    // dB[k,n] = op(A)^T * dC
                    kern::gemm(!trans_a, false, static_cast<int>(k),
                               static_cast<int>(n), static_cast<int>(m), 1.f,
                               anode->value.data(), static_cast<int>(an_), g,
                               static_cast<int>(n), 1.f, gb, static_cast<int>(bn_));
                } else {
                    // B stored [n,k]; dB_stored = dC^T * op(A)
                    kern::gemm(true, trans_a, static_cast<int>(n), static_cast<int>(k),
                               static_cast<int>(m), 1.f, g, static_cast<int>(n),
                               anode->value.data(), static_cast<int>(an_), 1.f, gb,
                               static_cast<int>(bn_));
                }
            }
        });
}

Var add_rowvec(const Var& a, const Var& v) {
    if (a.shape().size() != 2 || v.numel() != a.shape()[1])
        throw ShapeError("add_rowvec: need [M,N] + [N]");
    const int64_t m = a.shape()[0], n = a.shape()[1];
    Tensor out({m, n});
    for (int64_t i = 0; i < m; ++i)
        kern::add(a.value().data() + i * n, v.value().data(), out.data() + i * n,
                  static_cast<size_t>(n));
    auto an = a.node().get();
    auto vn = v.node().get();
    return make_node(std::move(out), {a, v}, [an, vn, m, n](Node& node) {
        if (an->requires_grad)
            kern::axpy(1.f, node.grad.data(), an->ensure_grad().data(),
                       static_cast<size_t>(m * n));
        if (vn->requires_grad) {
            float* gv = vn->ensure_grad().data();
            for (int64_t i = 0; i < m; ++i)
                kern::axpy(1.f, node.grad.data() + i * n, gv, static_cast<size_t>(n));
        }
    });
}

Var softmax_rows(const Var& a) {
    if (a.shape().size() != 2) throw ShapeError("softmax_rows: need 2D");
    const int64_t m = a.shape()[0], n = a.shape()[1];
    Tensor out({m, n});
    for (int64_t i = 0; i < m; ++i) {
        const float* x = a.value().data() + i * n;
        float* y = out.data() + i * n;
        float mx = x[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        float s = 0.f;
        for (int64_t j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            s += y[j];
        }
        const float inv = 1.f / s;
        kern::scale(y, inv, y, static_cast<size_t>(n));
    }
    auto an = a.node().get();
    return make_node(std::move(out), {a}, [an, m, n](Node& node) {
        float* ga = an->ensure_grad().data();
        for (int64_t i = 0; i < m; ++i) {
            const float* y = node.value.data() + i * n;
            const float* g = node.grad.data() + i * n;
            const float d = kern::dot(y, g, static_cast<size_t>(n));
            for (int64_t j = 0; j < n; ++j) ga[i * n + j] += y[j] * (g[j] - d);
        }
    });
}

Var layernorm(const Var& x, const Var& gamma, const Var& beta, float eps) {
    if (x.shape().size() != 2) throw ShapeError("layernorm: need 2D");
    const int64_t m = x.shape()[0], n = x.shape()[1];
    if (gamma.numel() != n || beta.numel() != n)
        throw ShapeError("layernorm: gamma/beta size mismatch");
    Tensor out({m, n});
    Tensor xhat({m, n});
    Tensor inv_std({m});
    for (int64_t i = 0; i < m; ++i) {
        const float* xi = x.value().data() + i * n;
        float mean = kern::sum(xi, static_cast<size_t>(n)) / n;
        float var = 0.f;
        for (int64_t j = 0; j < n; ++j) {
            const float d = xi[j] - mean;
            var += d * d;
        }
        var /= n;
        const float is = 1.f / std::sqrt(var + eps);
        inv_std[i] = is;
        for (int64_t j = 0; j < n; ++j) {
            const float h = (xi[j] - mean) * is;
            xhat.data()[i * n + j] = h;
            out.data()[i * n + j] = h * gamma.value()[j] + beta.value()[j];
        }
    }
    auto xn = x.node().get();
    auto gn = gamma.node().get();
    auto bn = beta.node().get();
    return make_node(
        std::move(out), {x, gamma, beta},
        [xn, gn, bn, m, n, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](Node& node) {
            const float* g = node.grad.data();
            for (int64_t i = 0; i < m; ++i) {
                const float* gi = g + i * n;
                const float* hi = xhat.data() + i * n;
                if (gn->requires_grad) {
                    float* gg = gn->ensure_grad().data();
                    for (int64_t j = 0; j < n; ++j) gg[j] += gi[j] * hi[j];
                }
                if (bn->requires_grad) {
                    float* gb = bn->ensure_grad().data();
                    kern::axpy(1.f, gi, gb, static_cast<size_t>(n));
                }
                if (xn->requires_grad) {
                    float* gx = xn->ensure_grad().data() + i * n;
                    // dxhat = g * gamma
                    float s1 = 0.f, s2 = 0.f;
                    for (int64_t j = 0; j < n; ++j) {
                        const float dh = gi[j] * gn->value[j];
                        s1 += dh;
                        s2 += dh * hi[j];
                    }
                    const float is = inv_std[i];
                    for (int64_t j = 0; j < n; ++j) {
                        const float dh = gi[j] * gn->value[j];
                        gx[j] += is * (dh - s1 / n - hi[j] * s2 / n);
                    }
                }
            }
        });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads) {
    if (q.shape().size() != 2 || k.shape().size() != 2 || v.shape().size() != 2)
        throw ShapeError("attention: need 2D q/k/v");
    const int64_t tq = q.shape()[0], d = q.shape()[1];
    const int64_t tk = k.shape()[0];
    if (k.shape()[1] != d || v.shape()[1] != d || v.shape()[0] != tk)
        throw ShapeError("attention: q/k/v dim mismatch");
    if (d % heads != 0) throw ShapeError("attention: dim not divisible by heads");
    const int64_t dh = d / heads;
    const float scale_f = 1.f / std::sqrt(static_cast<float>(dh));

    Tensor out({tq, d});
    // probs stored per head for backward: heads x [tq, tk]
    Tensor probs({heads, tq, tk});
    std::vector<float> scores(static_cast<size_t>(tq * tk));
    for (int h = 0; h < heads; ++h) {
        const int64_t off = h * dh;
        // scores = Qh Kh^T * scale (strided rows)
        for (int64_t i = 0; i < tq; ++i) {
            const float* qi = q.value().data() + i * d + off;
            for (int64_t j = 0; j < tk; ++j) {
                scores[i * tk + j] =
                    scale_f * kern::dot(qi, k.value().data() + j * d + off,
                                        static_cast<size_t>(dh));
            }
        }
        // row softmax
        float* ph = probs.data() + static_cast<size_t>(h) * tq * tk;
        for (int64_t i = 0; i < tq; ++i) {
            const float* s = scores.data() + i * tk;
            float* p = ph + i * tk;
            float mx = s[0];
            for (int64_t j = 1; j < tk; ++j) mx = std::max(mx, s[j]);
            float sum = 0.f;
            for (int64_t j = 0; j < tk; ++j) {
                p[j] = std::exp(s[j] - mx);
                sum += p[j];
            }
            kern::scale(p, 1.f / sum, p, static_cast<size_t>(tk));
        }
        // out_h = P Vh
        for (int64_t i = 0; i < tq; ++i) {
            float* oi = out.data() + i * d + off;
            std::memset(oi, 0, sizeof(float) * dh);
            const float* p = ph + i * tk;
            for (int64_t j = 0; j < tk; ++j)
                kern::axpy(p[j], v.value().data() + j * d + off, oi,
                           static_cast<size_t>(dh));
        }
    }
    auto qn = q.node().get();
    auto kn = k.node().get();
    auto vn = v.node().get();
    return make_node(
        std::move(out), {q, k, v},
        [qn, kn, vn, heads, tq, tk, d, dh, scale_f, probs = std::move(probs)](Node& n) {
            const float* g = n.grad.data();
            std::vector<float> dp(static_cast<size_t>(tk));
            for (int h = 0; h < heads; ++h) {
                const int64_t off = h * dh;
                const float* ph = probs.data() + static_cast<size_t>(h) * tq * tk;
                for (int64_t i = 0; i < tq; ++i) {
                    const float* gi = g + i * d + off;
                    const float* p = ph + i * tk;
                    // dV += p_j * g_i ; dp_j = g_i . v_j
                    for (int64_t j = 0; j < tk; ++j) {
                        dp[j] = kern::dot(gi, vn->value.data() + j * d + off,
                                          static_cast<size_t>(dh));
                        if (vn->requires_grad)
                            kern::axpy(p[j], gi,
                                       vn->ensure_grad().data() + j * d + off,
                                       static_cast<size_t>(dh));
                    }
                    // softmax backward: ds = p * (dp - sum(dp*p))
                    const float dsum = kern::dot(dp.data(), p, static_cast<size_t>(tk));
                    for (int64_t j = 0; j < tk; ++j) {
                        const float ds = p[j] * (dp[j] - dsum) * scale_f;
                        if (ds == 0.f) continue;
                        if (qn->requires_grad)
                            kern::axpy(ds, kn->value.data() + j * d + off,
                                       qn->ensure_grad().data() + i * d + off,
                                       static_cast<size_t>(dh));
                        if (kn->requires_grad)
                            kern::axpy(ds, qn->value.data() + i * d + off,
                                       kn->ensure_grad().data() + j * d + off,
                                       static_cast<size_t>(dh));
                    }
                }
            }
        });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    if (x.shape().size() != 4 || w.shape().size() != 4)
        throw ShapeError("conv2d: need NCHW input and OIKK weight");
    const int64_t bn_ = x.shape()[0], c = x.shape()[1], h = x.shape()[2],
                  wd = x.shape()[3];
    const int64_t o = w.shape()[0], kc = w.shape()[1], kh = w.shape()[2],
                  kw = w.shape()[3];
    if (kc != c) throw ShapeError("conv2d: channel mismatch");
    if (b.numel() != o) throw ShapeError("conv2d: bias size mismatch");
    const int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const int64_t wo = (wd + 2 * pad - kw) / stride + 1;
    const int64_t ck = c * kh * kw;
    Tensor out({bn_, o, ho, wo});
    std::vector<float> col(static_cast<size_t>(ck * ho * wo));
    for (int64_t s = 0; s < bn_; ++s) {
        im2col(x.value().data() + s * c * h * wd, static_cast<int>(c),
               static_cast<int>(h), static_cast<int>(wd), static_cast<int>(kh),
               static_cast<int>(kw), stride, pad, static_cast<int>(ho),
               static_cast<int>(wo), col.data());
        float* os = out.data() + s * o * ho * wo;
        kern::gemm(false, false, static_cast<int>(o), static_cast<int>(ho * wo),
                   static_cast<int>(ck), 1.f, w.value().data(),
                   static_cast<int>(ck), col.data(), static_cast<int>(ho * wo), 0.f,
                   os, static_cast<int>(ho * wo));
        for (int64_t oc = 0; oc < o; ++oc) {
            float* plane = os + oc * ho * wo;
            const float bias = b.value()[oc];
            for (int64_t i = 0; i < ho * wo; ++i) plane[i] += bias;
        }
    }
    auto xn = x.node().get();
    auto wn = w.node().get();
    auto bnn = b.node().get();
    return make_node(
        std::move(out), {x, w, b},
        [xn, wn, bnn, bn_, c, h, wd, o, kh, kw, stride, pad, ho, wo, ck](Node& n) {
            std::vector<float> col(static_cast<size_t>(ck * ho * wo));
            std::vector<float> dcol(static_cast<size_t>(ck * ho * wo));
            for (int64_t s = 0; s < bn_; ++s) {
                const float* g = n.grad.data() + s * o * ho * wo;
                if (bnn->requires_grad) {
                    float* gb = bnn->ensure_grad().data();
                    for (int64_t oc = 0; oc < o; ++oc)
                        gb[oc] += kern::sum(g + oc * ho * wo,
                                            static_cast<size_t>(ho * wo));
                }
                if (wn->requires_grad) {
                    im2col(xn->value.data() + s * c * h * wd, static_cast<int>(c),
                           static_cast<int>(h), static_cast<int>(wd),
                           static_cast<int>(kh), static_cast<int>(kw), stride, pad,
                           static_cast<int>(ho), static_cast<int>(wo), col.data());
                    // dW += g [o, hw] * col^T [hw, ck]
                    kern::gemm(false, true, static_cast<int>(o), static_cast<int>(ck),
                               static_cast<int>(ho * wo), 1.f, g,
                               static_cast<int>(ho * wo), col.data(),
                               static_cast<int>(ho * wo), 1.f,
                               wn->ensure_grad().data(), static_cast<int>(ck));
                }
                if (xn->requires_grad) {
                    // dcol = W^T [ck, o] * g [o, hw]
                    kern::gemm(true, false, static_cast<int>(ck),
                               static_cast<int>(ho * wo), static_cast<int>(o), 1.f,
                               wn->value.data(), static_cast<int>(ck), g,
                               static_cast<int>(ho * wo), 0.f, dcol.data(),
                               static_cast<int>(ho * wo));
                    col2im_accum(dcol.data(), static_cast<int>(c), static_cast<int>(h),
                                 static_cast<int>(wd), static_cast<int>(kh),
                                 static_cast<int>(kw), stride, pad,
                                 static_cast<int>(ho), static_cast<int>(wo),
                                 xn->ensure_grad().data() + s * c * h * wd);
                }
            }
        });
}

Var avg_pool2(const Var& x) {
    if (x.shape().size() != 4) throw ShapeError("avg_pool2: need NCHW");
    const int64_t bn_ = x.shape()[0], c = x.shape()[1], h = x.shape()[2],
                  w = x.shape()[3];
    if (h % 2 || w % 2) throw ShapeError("avg_pool2: odd spatial dims");
    const int64_t ho = h / 2, wo = w / 2;
    Tensor out({bn_, c, ho, wo});
    for (int64_t s = 0; s < bn_ * c; ++s) {
        const float* xp = x.value().data() + s * h * w;
        float* op = out.data() + s * ho * wo;
        for (int64_t i = 0; i < ho; ++i)
            for (int64_t j = 0; j < wo; ++j)
                op[i * wo + j] = 0.25f * (xp[(2 * i) * w + 2 * j] +
                                          xp[(2 * i) * w + 2 * j + 1] +
                                          xp[(2 * i + 1) * w + 2 * j] +
                                          xp[(2 * i + 1) * w + 2 * j + 1]);
    }
    auto xn = x.node().get();
    return make_node(std::move(out), {x}, [xn, bn_, c, h, w, ho, wo](Node& n) {
        float* gx = xn->ensure_grad().data();
        for (int64_t s = 0; s < bn_ * c; ++s) {
            const float* g = n.grad.data() + s * ho * wo;
            float* gp = gx + s * h * w;
            for (int64_t i = 0; i < ho; ++i)
                for (int64_t j = 0; j < wo; ++j) {
                    const float gv = 0.25f * g[i * wo + j];
                    gp[(2 * i) * w + 2 * j] += gv;
                    gp[(2 * i) * w + 2 * j + 1] += gv;
                    gp[(2 * i + 1) * w + 2 * j] += gv;
                    gp[(2 * i + 1) * w + 2 * j + 1] += gv;
                }
        }
    });
}

Var upsample_nearest2(const Var& x) {
    if (x.shape().size() != 4) throw ShapeError("upsample_nearest2: need NCHW");
    const int64_t bn_ = x.shape()[0], c = x.shape()[1], h = x.shape()[2],
                  w = x.shape()[3];
    const int64_t ho = h * 2, wo = w * 2;
    Tensor out({bn_, c, ho, wo});
    for (int64_t s = 0; s < bn_ * c; ++s) {
        const float* xp = x.value().data() + s * h * w;
        float* op = out.data() + s * ho * wo;
        for (int64_t i = 0; i < ho; ++i)
            for (int64_t j = 0; j < wo; ++j)
                op[i * wo + j] = xp[(i / 2) * w + j / 2];
    }
    auto xn = x.node().get();
    return make_node(std::move(out), {x}, [xn, bn_, c, h, w, ho, wo](Node& n) {
        float* gx = xn->ensure_grad().data();
        for (int64_t s = 0; s < bn_ * c; ++s) {
            const float* g = n.grad.data() + s * ho * wo;
            float* gp = gx + s * h * w;
            for (int64_t i = 0; i < ho; ++i)
                for (int64_t j = 0; j < wo; ++j)
                    gp[(i / 2) * w + j / 2] += g[i * wo + j];
        }
    });
}

Var channel_scale_shift(const Var& x, const Var& s, const Var& t) {
    if (x.shape().size() != 4 || s.shape().size() != 2 || t.shape().size() != 2)
        throw ShapeError("channel_scale_shift: need NCHW x and [N,C] s,t");
    const int64_t bn_ = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    if (s.shape()[0] != bn_ || s.shape()[1] != c || !s.value().same_shape(t.value()))
        throw ShapeError("channel_scale_shift: s/t shape mismatch");
    Tensor out(x.value().shape());
    for (int64_t n0 = 0; n0 < bn_; ++n0)
        for (int64_t ci = 0; ci < c; ++ci) {
            const float sc = 1.f + s.value().at(n0, ci);
            const float sh = t.value().at(n0, ci);
            const float* xp = x.value().data() + (n0 * c + ci) * hw;
            float* op = out.data() + (n0 * c + ci) * hw;
            for (int64_t i = 0; i < hw; ++i) op[i] = xp[i] * sc + sh;
        }
    auto xn = x.node().get();
    auto sn = s.node().get();
    auto tn = t.node().get();
    return make_node(std::move(out), {x, s, t}, [xn, sn, tn, bn_, c, hw](Node& n) {
        for (int64_t n0 = 0; n0 < bn_; ++n0)
            for (int64_t ci = 0; ci < c; ++ci) {
                const float* g = n.grad.data() + (n0 * c + ci) * hw;
                const float* xp = xn->value.data() + (n0 * c + ci) * hw;
                if (xn->requires_grad) {
                    const float sc = 1.f + sn->value.at(n0, ci);
                    kern::axpy(sc, g, xn->ensure_grad().data() + (n0 * c + ci) * hw,
                               static_cast<size_t>(hw));
                }
                if (sn->requires_grad)
                    sn->ensure_grad().at(n0, ci) +=
                        kern::dot(g, xp, static_cast<size_t>(hw));
                if (tn->requires_grad)
                    tn->ensure_grad().at(n0, ci) +=
                        kern::sum(g, static_cast<size_t>(hw));
            }
    });
}

Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta,
               float eps) {
    if (x.shape().size() != 4) throw ShapeError("group_norm: need NCHW");
    const int64_t bn_ = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    if (c % groups != 0) throw ShapeError("group_norm: channels not divisible");
    if (gamma.numel() != c || beta.numel() != c)
        throw ShapeError("group_norm: gamma/beta size");
    const int64_t cg = c / groups;
    const int64_t gsize = cg * hw;
    Tensor out(x.value().shape());
    Tensor xhat(x.value().shape());
    Tensor inv_std({bn_, static_cast<int64_t>(groups)});
    for (int64_t n0 = 0; n0 < bn_; ++n0)
        for (int64_t g0 = 0; g0 < groups; ++g0) {
            const float* xp = x.value().data() + (n0 * c + g0 * cg) * hw;
            const float mean = kern::sum(xp, static_cast<size_t>(gsize)) / gsize;
            float var = 0.f;
            for (int64_t i = 0; i < gsize; ++i) {
                const float d = xp[i] - mean;
                var += d * d;
            }
            var /= gsize;
            const float is = 1.f / std::sqrt(var + eps);
            inv_std.at(n0, g0) = is;
            float* hp = xhat.data() + (n0 * c + g0 * cg) * hw;
            float* op = out.data() + (n0 * c + g0 * cg) * hw;
            for (int64_t ci = 0; ci < cg; ++ci) {
                const float ga = gamma.value()[g0 * cg + ci];
                const float be = beta.value()[g0 * cg + ci];
                for (int64_t i = 0; i < hw; ++i) {
                    const float h = (xp[ci * hw + i] - mean) * is;
                    hp[ci * hw + i] = h;
                    op[ci * hw + i] = h * ga + be;
                }
            }
        }
    auto xn = x.node().get();
    auto gn = gamma.node().get();
    auto bnn = beta.node().get();
    return make_node(
        std::move(out), {x, gamma, beta},
        [xn, gn, bnn, bn_, c, hw, groups, cg, gsize, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](Node& n) {
            for (int64_t n0 = 0; n0 < bn_; ++n0)
                for (int64_t g0 = 0; g0 < groups; ++g0) {
                    const float* g = n.grad.data() + (n0 * c + g0 * cg) * hw;
                    const float* hp = xhat.data() + (n0 * c + g0 * cg) * hw;
                    for (int64_t ci = 0; ci < cg; ++ci) {
                        if (gn->requires_grad)
                            gn->ensure_grad()[g0 * cg + ci] +=
                                kern::dot(g + ci * hw, hp + ci * hw,
                                          static_cast<size_t>(hw));
                        if (bnn->requires_grad)
                            bnn->ensure_grad()[g0 * cg + ci] +=
                                kern::sum(g + ci * hw, static_cast<size_t>(hw));
                    }
                    if (xn->requires_grad) {
                        float s1 = 0.f, s2 = 0.f;
                        for (int64_t ci = 0; ci < cg; ++ci) {
                            const float ga = gn->value[g0 * cg + ci];
                            for (int64_t i = 0; i < hw; ++i) {
                                const float dh = g[ci * hw + i] * ga;
                                s1 += dh;
                                s2 += dh * hp[ci * hw + i];
                            }
                        }
                        const float is = inv_std.at(n0, g0);
                        float* gx = xn->ensure_grad().data() + (n0 * c + g0 * cg) * hw;
                        for (int64_t ci = 0; ci < cg; ++ci) {
                            const float ga = gn->value[g0 * cg + ci];
                            for (int64_t i = 0; i < hw; ++i) {
                                const float dh = g[ci * hw + i] * ga;
                                gx[ci * hw + i] +=
                                    is * (dh - s1 / gsize -
                                          hp[ci * hw + i] * s2 / gsize);
                            }
                        }
                    }
                }
        });
}

Var sum_all(const Var& a) {
    Tensor out({1});
    out[0] = kern::sum(a.value().data(), static_cast<size_t>(a.numel()));
    auto an = a.node().get();
    return make_node(std::move(out), {a}, [an](Node& n) {
        const float g = n.grad[0];
        float* ga = an->ensure_grad().data();
        const size_t m = static_cast<size_t>(an->value.numel());
        for (size_t i = 0; i < m; ++i) ga[i] += g;
    });
}

Var mean_all(const Var& a) { return mul_scalar(sum_all(a), 1.f / a.numel()); }

Var mse(const Var& a, const Var& b) {
    check_same_shape(a, b, "mse");
    const size_t m = static_cast<size_t>(a.numel());
    Tensor out({1});
    double acc = 0.0;
    const float* av = a.value().data();
    const float* bv = b.value().data();
    for (size_t i = 0; i < m; ++i) {
        const double d = static_cast<double>(av[i]) - bv[i];
        acc += d * d;
    }
    out[0] = static_cast<float>(acc / m);
    auto an = a.node().get();
    auto bn = b.node().get();
    return make_node(std::move(out), {a, b}, [an, bn, m](Node& n) {
        const float g = 2.f * n.grad[0] / m;
        const float* av = an->value.data();
        const float* bv = bn->value.data();
        if (an->requires_grad) {
            float* ga = an->ensure_grad().data();
            for (size_t i = 0; i < m; ++i) ga[i] += g * (av[i] - bv[i]);
        }
        if (bn->requires_grad) {
            float* gb = bn->ensure_grad().data();
            for (size_t i = 0; i < m; ++i) gb[i] -= g * (av[i] - bv[i]);
        }
    });
}

Var mse_const(const Var& a, const Tensor& b) {
    if (!a.value().same_shape(b)) throw ShapeError("mse_const: shape mismatch");
    return mse(a, Var(b, false));
}

}  // namespace nvs::ag
