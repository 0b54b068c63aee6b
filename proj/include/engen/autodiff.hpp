#pragma once

// Reverse-mode autodiff over dense tensors. Eager tape: each op computes its
// value immediately and records a backward closure. Graphs are rebuilt per
// training step and freed wholesale. Templated on the scalar type so the
// gradient checker can run the exact same model code in double precision.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "engen/tensor.hpp"

namespace engen {

template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Param() = default;
    Param(std::string n, Tensor<T> v)
        : name(std::move(n)), value(std::move(v)), grad(Tensor<T>::zeros(value.shape)) {}

    void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
class Graph {
public:
    using NodeId = int;

    // record=false gives a forward-only graph (params enter as constants);
    // used for cheap re-evaluation inside finite-difference checks.
    explicit Graph(bool record = true) : record_(record) {}

    NodeId constant(Tensor<T> v) {
        return push(std::move(v), /*needs_grad=*/false, nullptr, {});
    }

    NodeId param(Param<T>& p) {
        if (!record_) return push(p.value, false, nullptr, {});
        return push(p.value, /*needs_grad=*/true, &p, {});
    }

    const Tensor<T>& val(NodeId id) const { return nodes_[size_t(id)].value; }
    Tensor<T>& grad_of(NodeId id) { return nodes_[size_t(id)].grad; }
    bool needs_grad(NodeId id) const { return nodes_[size_t(id)].needs_grad; }

    T scalar_value(NodeId id) const { return nodes_[size_t(id)].value.data[0]; }

    size_t size() const { return nodes_.size(); }

    // ---- binary / unary elementwise ----

    NodeId add(NodeId a, NodeId b) {
        const auto& av = val(a);
        const auto& bv = val(b);
        require(av.shape == bv.shape, "add: shape mismatch");
        Tensor<T> out = av;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
        return push_op(std::move(out), {a, b}, [this, a, b](Node& n) {
            accumulate(a, n.grad.data.data(), n.grad.numel());
            accumulate(b, n.grad.data.data(), n.grad.numel());
        });
    }

    NodeId sub(NodeId a, NodeId b) {
        const auto& av = val(a);
        const auto& bv = val(b);
        require(av.shape == bv.shape, "sub: shape mismatch");
        Tensor<T> out = av;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv.data[i];
        return push_op(std::move(out), {a, b}, [this, a, b](Node& n) {
            accumulate(a, n.grad.data.data(), n.grad.numel());
            accumulate_scaled(b, n.grad.data.data(), n.grad.numel(), T(-1));
        });
    }

    NodeId mul(NodeId a, NodeId b) {
        const auto& av = val(a);
        const auto& bv = val(b);
        require(av.shape == bv.shape, "mul: shape mismatch");
        Tensor<T> out = av;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
        return push_op(std::move(out), {a, b}, [this, a, b](Node& n) {
            if (needs_grad(a)) {
                auto& ga = grad_of(a);
                const auto& bv2 = val(b);
                for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += n.grad.data[i] * bv2.data[i];
            }
            if (needs_grad(b)) {
                auto& gb = grad_of(b);
                const auto& av2 = val(a);
                for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += n.grad.data[i] * av2.data[i];
            }
        });
    }

    NodeId scale(NodeId a, T s) {
        Tensor<T> out = val(a);
        for (auto& x : out.data) x *= s;
        return push_op(std::move(out), {a}, [this, a, s](Node& n) {
            accumulate_scaled(a, n.grad.data.data(), n.grad.numel(), s);
        });
    }

    NodeId add_const(NodeId a, const Tensor<T>& c) {
        require(val(a).shape == c.shape, "add_const: shape mismatch");
        Tensor<T> out = val(a);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += c.data[i];
        return push_op(std::move(out), {a}, [this, a](Node& n) {
            accumulate(a, n.grad.data.data(), n.grad.numel());
        });
    }

    NodeId gelu(NodeId a) {
        const T inv_sqrt2 = T(0.70710678118654752440);
        const T inv_sqrt2pi = T(0.39894228040143267794);
        Tensor<T> out = val(a);
        for (auto& x : out.data) x = T(0.5) * x * (T(1) + T(std::erf(double(x) * double(inv_sqrt2))));
        return push_op(std::move(out), {a}, [this, a, inv_sqrt2, inv_sqrt2pi](Node& n) {
            auto& g = grad_of(a);
            const auto& xv = val(a);
            for (size_t i = 0; i < g.data.size(); ++i) {
                T x = xv.data[i];
                T cdf = T(0.5) * (T(1) + T(std::erf(double(x) * double(inv_sqrt2))));
                T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
                g.data[i] += n.grad.data[i] * (cdf + x * pdf);
            }
        });
    }

    NodeId tanh_(NodeId a) {
        Tensor<T> out = val(a);
        for (auto& x : out.data) x = std::tanh(x);
        return push_op(std::move(out), {a}, [this, a](Node& n) {
            auto& g = grad_of(a);
            for (size_t i = 0; i < g.data.size(); ++i) {
                T t = n.value.data[i];
                g.data[i] += n.grad.data[i] * (T(1) - t * t);
            }
        });
    }

    NodeId sigmoid_(NodeId a) {
        Tensor<T> out = val(a);
        for (auto& x : out.data) x = T(1) / (T(1) + std::exp(-x));
        return push_op(std::move(out), {a}, [this, a](Node& n) {
            auto& g = grad_of(a);
            for (size_t i = 0; i < g.data.size(); ++i) {
                T s = n.value.data[i];
                g.data[i] += n.grad.data[i] * s * (T(1) - s);
            }
        });
    }

    NodeId leaky_relu(NodeId a, T slope) {
        Tensor<T> out = val(a);
        for (auto& x : out.data) x = x >= T(0) ? x : slope * x;
        return push_op(std::move(out), {a}, [this, a, slope](Node& n) {
            auto& g = grad_of(a);
            const auto& xv = val(a);
            for (size_t i = 0; i < g.data.size(); ++i)
                g.data[i] += n.grad.data[i] * (xv.data[i] >= T(0) ? T(1) : slope);
        });
    }

    NodeId log_(NodeId a) {
        Tensor<T> out = val(a);
        for (auto& x : out.data) x = std::log(x);
        return push_op(std::move(out), {a}, [this, a](Node& n) {
            auto& g = grad_of(a);
            const auto& xv = val(a);
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i] / xv.data[i];
        });
    }

    NodeId clamp(NodeId a, T lo, T hi) {
        Tensor<T> out = val(a);
        for (auto& x : out.data) x = x < lo ? lo : (x > hi ? hi : x);
        return push_op(std::move(out), {a}, [this, a, lo, hi](Node& n) {
            auto& g = grad_of(a);
            const auto& xv = val(a);
            for (size_t i = 0; i < g.data.size(); ++i)
                if (xv.data[i] > lo && xv.data[i] < hi) g.data[i] += n.grad.data[i];
        });
    }

    NodeId reshape(NodeId a, std::vector<int> new_shape) {
        Tensor<T> out(std::move(new_shape), val(a).data);
        return push_op(std::move(out), {a}, [this, a](Node& n) {
            accumulate(a, n.grad.data.data(), n.grad.numel());
        });
    }

    // ---- linear algebra ----

    NodeId matmul(NodeId a, NodeId b) {
        const auto& av = val(a);
        const auto& bv = val(b);
        require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
                "matmul: incompatible shapes");
        int m = av.dim(0), k = av.dim(1), n2 = bv.dim(1);
        Tensor<T> out({m, n2});
        gemm_acc(m, k, n2, av.data.data(), bv.data.data(), out.data.data());
        return push_op(std::move(out), {a, b}, [this, a, b, m, k, n2](Node& n) {
            if (needs_grad(a))
                gemm_a_bt_acc(m, n2, k, n.grad.data.data(), val(b).data.data(),
                              grad_of(a).data.data());
            if (needs_grad(b))
                gemm_at_b_acc(k, m, n2, val(a).data.data(), n.grad.data.data(),
                              grad_of(b).data.data());
        });
    }

    // y = x*W + b, x [R,Din], W [Din,Dout], b [Dout]
    NodeId linear(NodeId x, NodeId w, NodeId b) {
        const auto& xv = val(x);
        const auto& wv = val(w);
        const auto& bv = val(b);
        require(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(0) &&
                    bv.numel() == size_t(wv.dim(1)),
                "linear: incompatible shapes");
        int r = xv.dim(0), din = xv.dim(1), dout = wv.dim(1);
        Tensor<T> out({r, dout});
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < dout; ++j) out.at(i, j) = bv.at(j);
        gemm_acc(r, din, dout, xv.data.data(), wv.data.data(), out.data.data());
        return push_op(std::move(out), {x, w, b}, [this, x, w, b, r, din, dout](Node& n) {
            if (needs_grad(x))
                gemm_a_bt_acc(r, dout, din, n.grad.data.data(), val(w).data.data(),
                              grad_of(x).data.data());
            if (needs_grad(w))
                gemm_at_b_acc(din, r, dout, val(x).data.data(), n.grad.data.data(),
                              grad_of(w).data.data());
            if (needs_grad(b)) {
                auto& gb = grad_of(b);
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < dout; ++j) gb.at(j) += n.grad.at(i, j);
            }
        });
    }

    NodeId softmax_rows(NodeId a) {
        const auto& av = val(a);
        int r = av.dim(0), c = av.dim(1);
        Tensor<T> out({r, c});
        for (int i = 0; i < r; ++i) {
            const T* x = av.row(i);
            T* y = out.row(i);
            T mx = x[0];
            for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
            T sum = T(0);
            for (int j = 0; j < c; ++j) {
                y[j] = std::exp(x[j] - mx);
                sum += y[j];
            }
            T inv = T(1) / sum;
            for (int j = 0; j < c; ++j) y[j] *= inv;
        }
        return push_op(std::move(out), {a}, [this, a, r, c](Node& n) {
            auto& g = grad_of(a);
            for (int i = 0; i < r; ++i) {
                const T* p = n.value.row(i);
                const T* dy = n.grad.row(i);
                T dot = T(0);
                for (int j = 0; j < c; ++j) dot += dy[j] * p[j];
                T* dx = g.row(i);
                for (int j = 0; j < c; ++j) dx[j] += p[j] * (dy[j] - dot);
            }
        });
    }

    NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, T eps = T(1e-5)) {
        const auto& xv = val(x);
        int r = xv.dim(0), c = xv.dim(1);
        auto xhat = std::make_shared<Tensor<T>>(std::vector<int>{r, c});
        auto inv_sigma = std::make_shared<std::vector<T>>(static_cast<size_t>(r));
        Tensor<T> out({r, c});
        const auto& gv = val(gamma);
        const auto& bv = val(beta);
        for (int i = 0; i < r; ++i) {
            const T* xr = xv.row(i);
            T mu = T(0);
            for (int j = 0; j < c; ++j) mu += xr[j];
            mu /= T(c);
            T var = T(0);
            for (int j = 0; j < c; ++j) {
                T d = xr[j] - mu;
                var += d * d;
            }
            var /= T(c);
            T inv = T(1) / std::sqrt(var + eps);
            (*inv_sigma)[size_t(i)] = inv;
            T* h = xhat->row(i);
            T* y = out.row(i);
            for (int j = 0; j < c; ++j) {
                h[j] = (xr[j] - mu) * inv;
                y[j] = gv.at(j) * h[j] + bv.at(j);
            }
        }
        return push_op(std::move(out), {x, gamma, beta},
                       [this, x, gamma, beta, r, c, xhat, inv_sigma](Node& n) {
            const auto& gv = val(gamma);
            if (needs_grad(gamma) || needs_grad(beta)) {
                auto& gg = grad_of(gamma);
                auto& gb = grad_of(beta);
                for (int i = 0; i < r; ++i) {
                    const T* dy = n.grad.row(i);
                    const T* h = xhat->row(i);
                    for (int j = 0; j < c; ++j) {
                        gg.at(j) += dy[j] * h[j];
                        gb.at(j) += dy[j];
                    }
                }
            }
            if (needs_grad(x)) {
                auto& gx = grad_of(x);
                for (int i = 0; i < r; ++i) {
                    const T* dy = n.grad.row(i);
                    const T* h = xhat->row(i);
                    T m1 = T(0), m2 = T(0);
                    for (int j = 0; j < c; ++j) {
                        T dh = dy[j] * gv.at(j);
                        m1 += dh;
                        m2 += dh * h[j];
                    }
                    m1 /= T(c);
                    m2 /= T(c);
                    T inv = (*inv_sigma)[size_t(i)];
                    T* dx = gx.row(i);
                    for (int j = 0; j < c; ++j) {
                        T dh = dy[j] * gv.at(j);
                        dx[j] += inv * (dh - m1 - h[j] * m2);
                    }
                }
            }
        });
    }

    // Multi-head scaled dot-product attention. q [Tq,D], k/v [Tk,D].
    // With causal=true, query row i may attend keys j <= i + q_offset
    // (q_offset is the absolute position of query row 0; used by the KV cache).
    NodeId attention(NodeId q, NodeId k, NodeId v, int n_heads, bool causal, int q_offset = 0) {
        const auto& qv = val(q);
        const auto& kv = val(k);
        const auto& vv = val(v);
        int tq = qv.dim(0), d = qv.dim(1), tk = kv.dim(0);
        require(kv.dim(1) == d && vv.dim(0) == tk && vv.dim(1) == d && d % n_heads == 0,
                "attention: incompatible shapes");
        int dh = d / n_heads;
        T att_scale = T(1) / std::sqrt(T(dh));
        auto probs = std::make_shared<Tensor<T>>(std::vector<int>{n_heads, tq, tk});
        Tensor<T> out({tq, d});
        std::vector<T> s(static_cast<size_t>(tk));
        for (int h = 0; h < n_heads; ++h) {
            int off = h * dh;
            for (int i = 0; i < tq; ++i) {
                int lim = causal ? std::min(tk - 1, i + q_offset) : tk - 1;
                const T* qr = qv.row(i) + off;
                T mx = -std::numeric_limits<T>::infinity();
                for (int j = 0; j <= lim; ++j) {
                    const T* kr = kv.row(j) + off;
                    T dot = T(0);
                    for (int e = 0; e < dh; ++e) dot += qr[e] * kr[e];
                    s[size_t(j)] = dot * att_scale;
                    mx = std::max(mx, s[size_t(j)]);
                }
                T sum = T(0);
                T* pr = probs->data.data() + (size_t(h) * size_t(tq) + size_t(i)) * size_t(tk);
                for (int j = 0; j <= lim; ++j) {
                    pr[j] = std::exp(s[size_t(j)] - mx);
                    sum += pr[j];
                }
                T inv = T(1) / sum;
                for (int j = 0; j <= lim; ++j) pr[j] *= inv;
                for (int j = lim + 1; j < tk; ++j) pr[j] = T(0);
                T* orow = out.row(i) + off;
                for (int e = 0; e < dh; ++e) orow[e] = T(0);
                for (int j = 0; j <= lim; ++j) {
                    const T* vr = vv.row(j) + off;
                    T p = pr[j];
                    for (int e = 0; e < dh; ++e) orow[e] += p * vr[e];
                }
            }
        }
        return push_op(std::move(out), {q, k, v},
                       [this, q, k, v, n_heads, causal, q_offset, tq, tk, dh, att_scale,
                        probs](Node& n) {
            std::vector<T> dp(static_cast<size_t>(tk)), ds(static_cast<size_t>(tk));
            const auto& qv2 = val(q);
            const auto& kv2 = val(k);
            const auto& vv2 = val(v);
            bool gq = needs_grad(q), gk = needs_grad(k), gv2 = needs_grad(v);
            for (int h = 0; h < n_heads; ++h) {
                int off = h * dh;
                for (int i = 0; i < tq; ++i) {
                    int lim = causal ? std::min(tk - 1, i + q_offset) : tk - 1;
                    const T* pr = probs->data.data() + (size_t(h) * size_t(tq) + size_t(i)) * size_t(tk);
                    const T* dout = n.grad.row(i) + off;
                    T pdot = T(0);
                    for (int j = 0; j <= lim; ++j) {
                        const T* vr = vv2.row(j) + off;
                        T acc = T(0);
                        for (int e = 0; e < dh; ++e) acc += dout[e] * vr[e];
                        dp[size_t(j)] = acc;
                        pdot += acc * pr[j];
                    }
                    for (int j = 0; j <= lim; ++j) ds[size_t(j)] = pr[j] * (dp[size_t(j)] - pdot);
                    if (gv2) {
                        auto& gvt = grad_of(v);
                        for (int j = 0; j <= lim; ++j) {
                            T* gvr = gvt.row(j) + off;
                            T p = pr[j];
                            for (int e = 0; e < dh; ++e) gvr[e] += p * dout[e];
                        }
                    }
                    if (gq) {
                        auto& gqt = grad_of(q);
                        T* gqr = gqt.row(i) + off;
                        for (int j = 0; j <= lim; ++j) {
                            const T* kr = kv2.row(j) + off;
                            T w = ds[size_t(j)] * att_scale;
                            for (int e = 0; e < dh; ++e) gqr[e] += w * kr[e];
                        }
                    }
                    if (gk) {
                        auto& gkt = grad_of(k);
                        const T* qr = qv2.row(i) + off;
                        for (int j = 0; j <= lim; ++j) {
                            T* gkr = gkt.row(j) + off;
                            T w = ds[size_t(j)] * att_scale;
                            for (int e = 0; e < dh; ++e) gkr[e] += w * qr[e];
                        }
                    }
                }
            }
        });
    }

    // ---- convolutions (x is [C,L]) ----

    // w [Cout,Cin,K], b [Cout]; zero padding
    NodeId conv1d(NodeId x, NodeId w, NodeId b, int stride, int pad) {
        const auto& xv = val(x);
        const auto& wv = val(w);
        const auto& bv = val(b);
        int cin = xv.dim(0), len = xv.dim(1);
        int cout = wv.dim(0), kk = wv.dim(2);
        int out_len = (len + 2 * pad - kk) / stride + 1;
        Tensor<T> out({cout, out_len});
        for (int co = 0; co < cout; ++co) {
            T* orow = out.row(co);
            for (int t = 0; t < out_len; ++t) orow[t] = bv.at(co);
            for (int ci = 0; ci < cin; ++ci) {
                const T* xr = xv.row(ci);
                const T* wr = &wv.data[(size_t(co) * size_t(cin) + size_t(ci)) * size_t(kk)];
                for (int t = 0; t < out_len; ++t) {
                    int base = t * stride - pad;
                    T acc = T(0);
                    int k0 = std::max(0, -base), k1 = std::min(kk, len - base);
                    for (int k2 = k0; k2 < k1; ++k2) acc += wr[k2] * xr[base + k2];
                    orow[t] += acc;
                }
            }
        }
        return push_op(std::move(out), {x, w, b},
                       [this, x, w, b, stride, pad, cin, len, cout, kk, out_len](Node& n) {
            const auto& xv2 = val(x);
            const auto& wv2 = val(w);
            if (needs_grad(b)) {
                auto& gb = grad_of(b);
                for (int co = 0; co < cout; ++co) {
                    const T* gr = n.grad.row(co);
                    T acc = T(0);
                    for (int t = 0; t < out_len; ++t) acc += gr[t];
                    gb.at(co) += acc;
                }
            }
            bool gx = needs_grad(x), gw = needs_grad(w);
            for (int co = 0; co < cout; ++co) {
                const T* gr = n.grad.row(co);
                for (int ci = 0; ci < cin; ++ci) {
                    const T* xr = xv2.row(ci);
                    const T* wr = &wv2.data[(size_t(co) * size_t(cin) + size_t(ci)) * size_t(kk)];
                    T* gxr = gx ? grad_of(x).row(ci) : nullptr;
                    T* gwr = gw ? &grad_of(w).data[(size_t(co) * size_t(cin) + size_t(ci)) * size_t(kk)]
                                : nullptr;
                    for (int t = 0; t < out_len; ++t) {
                        int base = t * stride - pad;
                        T g = gr[t];
                        int k0 = std::max(0, -base), k1 = std::min(kk, len - base);
                        if (gx)
                            for (int k2 = k0; k2 < k1; ++k2) gxr[base + k2] += g * wr[k2];
                        if (gw)
                            for (int k2 = k0; k2 < k1; ++k2) gwr[k2] += g * xr[base + k2];
                    }
                }
            }
        });
    }

    // w [Cin,Cout,K], b [Cout]; out_len = (L-1)*stride + K
    NodeId conv_transpose1d(NodeId x, NodeId w, NodeId b, int stride) {
        const auto& xv = val(x);
        const auto& wv = val(w);
        const auto& bv = val(b);
        int cin = xv.dim(0), len = xv.dim(1);
        int cout = wv.dim(1), kk = wv.dim(2);
        int out_len = (len - 1) * stride + kk;
        Tensor<T> out({cout, out_len});
        for (int co = 0; co < cout; ++co) {
            T* orow = out.row(co);
            for (int t = 0; t < out_len; ++t) orow[t] = bv.at(co);
        }
        for (int ci = 0; ci < cin; ++ci) {
            const T* xr = xv.row(ci);
            for (int co = 0; co < cout; ++co) {
                const T* wr = &wv.data[(size_t(ci) * size_t(cout) + size_t(co)) * size_t(kk)];
                T* orow = out.row(co);
                for (int l = 0; l < len; ++l) {
                    T xl = xr[l];
                    T* dst = orow + l * stride;
                    for (int k2 = 0; k2 < kk; ++k2) dst[k2] += xl * wr[k2];
                }
            }
        }
        return push_op(std::move(out), {x, w, b},
                       [this, x, w, b, stride, cin, len, cout, kk, out_len](Node& n) {
            if (needs_grad(b)) {
                auto& gb = grad_of(b);
                for (int co = 0; co < cout; ++co) {
                    const T* gr = n.grad.row(co);
                    T acc = T(0);
                    for (int t = 0; t < out_len; ++t) acc += gr[t];
                    gb.at(co) += acc;
                }
            }
            const auto& xv2 = val(x);
            const auto& wv2 = val(w);
            bool gx = needs_grad(x), gw = needs_grad(w);
            for (int ci = 0; ci < cin; ++ci) {
                const T* xr = xv2.row(ci);
                T* gxr = gx ? grad_of(x).row(ci) : nullptr;
                for (int co = 0; co < cout; ++co) {
                    const T* wr = &wv2.data[(size_t(ci) * size_t(cout) + size_t(co)) * size_t(kk)];
                    T* gwr = gw ? &grad_of(w).data[(size_t(ci) * size_t(cout) + size_t(co)) * size_t(kk)]
                                : nullptr;
                    const T* gr = n.grad.row(co);
                    for (int l = 0; l < len; ++l) {
                        const T* src = gr + l * stride;
                        if (gx) {
                            T acc = T(0);
                            for (int k2 = 0; k2 < kk; ++k2) acc += src[k2] * wr[k2];
                            gxr[l] += acc;
                        }
                        if (gw) {
                            T xl = xr[l];
                            for (int k2 = 0; k2 < kk; ++k2) gwr[k2] += xl * src[k2];
                        }
                    }
                }
            }
        });
    }

    NodeId add_channel_bias(NodeId x, NodeId bias) {
        const auto& xv = val(x);
        const auto& bv = val(bias);
        int c = xv.dim(0), len = xv.dim(1);
        Tensor<T> out = xv;
        for (int ci = 0; ci < c; ++ci) {
            T* r2 = out.row(ci);
            T bb = bv.at(ci);
            for (int t = 0; t < len; ++t) r2[t] += bb;
        }
        return push_op(std::move(out), {x, bias}, [this, x, bias, c, len](Node& n) {
            if (needs_grad(x)) accumulate(x, n.grad.data.data(), n.grad.numel());
            if (needs_grad(bias)) {
                auto& gb = grad_of(bias);
                for (int ci = 0; ci < c; ++ci) {
                    const T* gr = n.grad.row(ci);
                    T acc = T(0);
                    for (int t = 0; t < len; ++t) acc += gr[t];
                    gb.at(ci) += acc;
                }
            }
        });
    }

    // ---- indexing ----

    NodeId gather_rows(NodeId table, const std::vector<int>& ids) {
        const auto& tv = val(table);
        int d = tv.dim(1);
        Tensor<T> out({int(ids.size()), d});
        for (size_t i = 0; i < ids.size(); ++i)
            std::copy_n(tv.row(ids[i]), d, out.row(int(i)));
        return push_op(std::move(out), {table}, [this, table, ids, d](Node& n) {
            auto& g = grad_of(table);
            for (size_t i = 0; i < ids.size(); ++i) {
                const T* gr = n.grad.row(int(i));
                T* dst = g.row(ids[i]);
                for (int j = 0; j < d; ++j) dst[j] += gr[j];
            }
        });
    }

    NodeId slice_rows(NodeId x, int r0, int r1) {
        const auto& xv = val(x);
        int c = xv.dim(1), h = r1 - r0;
        Tensor<T> out({h, c});
        std::copy_n(xv.row(r0), size_t(h) * size_t(c), out.data.data());
        return push_op(std::move(out), {x}, [this, x, r0, h, c](Node& n) {
            auto& g = grad_of(x);
            T* dst = g.row(r0);
            for (size_t i = 0; i < size_t(h) * size_t(c); ++i) dst[i] += n.grad.data[i];
        });
    }

    NodeId transpose2d(NodeId x) {
        const auto& xv = val(x);
        int r = xv.dim(0), c = xv.dim(1);
        Tensor<T> out({c, r});
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) out.at(j, i) = xv.at(i, j);
        return push_op(std::move(out), {x}, [this, x, r, c](Node& n) {
            auto& g = grad_of(x);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) g.at(i, j) += n.grad.at(j, i);
        });
    }

    NodeId slice_cols(NodeId x, int c0, int c1) {
        const auto& xv = val(x);
        int r = xv.dim(0), w = c1 - c0;
        Tensor<T> out({r, w});
        for (int i = 0; i < r; ++i) std::copy_n(xv.row(i) + c0, w, out.row(i));
        return push_op(std::move(out), {x}, [this, x, c0, r, w](Node& n) {
            auto& g = grad_of(x);
            for (int i = 0; i < r; ++i) {
                const T* gr = n.grad.row(i);
                T* dst = g.row(i) + c0;
                for (int j = 0; j < w; ++j) dst[j] += gr[j];
            }
        });
    }

    // ---- reductions / losses ----

    NodeId mean_all(NodeId a) {
        const auto& av = val(a);
        T acc = T(0);
        for (const T& x : av.data) acc += x;
        size_t n = av.numel();
        Tensor<T> out = Tensor<T>::scalar(acc / T(n));
        return push_op(std::move(out), {a}, [this, a, n](Node& nd) {
            T g = nd.grad.data[0] / T(n);
            auto& ga = grad_of(a);
            for (auto& x : ga.data) x += g;
        });
    }

    // mean |a - b| over all entries
    NodeId mae_mean(NodeId a, NodeId b) {
        const auto& av = val(a);
        const auto& bv = val(b);
        require(av.shape == bv.shape, "mae_mean: shape mismatch");
        size_t n = av.numel();
        T acc = T(0);
        for (size_t i = 0; i < n; ++i) acc += std::abs(av.data[i] - bv.data[i]);
        Tensor<T> out = Tensor<T>::scalar(acc / T(n));
        return push_op(std::move(out), {a, b}, [this, a, b, n](Node& nd) {
            T g = nd.grad.data[0] / T(n);
            const auto& av2 = val(a);
            const auto& bv2 = val(b);
            if (needs_grad(a)) {
                auto& ga = grad_of(a);
                for (size_t i = 0; i < n; ++i) {
                    T d = av2.data[i] - bv2.data[i];
                    ga.data[i] += d > T(0) ? g : (d < T(0) ? -g : T(0));
                }
            }
            if (needs_grad(b)) {
                auto& gb = grad_of(b);
                for (size_t i = 0; i < n; ++i) {
                    T d = av2.data[i] - bv2.data[i];
                    gb.data[i] -= d > T(0) ? g : (d < T(0) ? -g : T(0));
                }
            }
        });
    }

    // Mean next-token NLL over positions where mask != 0.
    NodeId cross_entropy_mean(NodeId logits, const std::vector<int>& targets,
                              const std::vector<uint8_t>& mask) {
        const auto& lv = val(logits);
        int t = lv.dim(0), vcb = lv.dim(1);
        size_t n_active = 0;
        for (uint8_t m : mask)
            if (m) ++n_active;
        if (n_active == 0) throw DataError("cross_entropy_mean: all positions masked out");
        auto probs = std::make_shared<Tensor<T>>(std::vector<int>{t, vcb});
        T total = T(0);
        for (int i = 0; i < t; ++i) {
            const T* x = lv.row(i);
            T* p = probs->row(i);
            T mx = x[0];
            for (int j = 1; j < vcb; ++j) mx = std::max(mx, x[j]);
            T sum = T(0);
            for (int j = 0; j < vcb; ++j) {
                p[j] = std::exp(x[j] - mx);
                sum += p[j];
            }
            T inv = T(1) / sum;
            for (int j = 0; j < vcb; ++j) p[j] *= inv;
            if (mask[size_t(i)]) total += std::log(sum) + mx - x[targets[size_t(i)]];
        }
        Tensor<T> out = Tensor<T>::scalar(total / T(n_active));
        return push_op(std::move(out), {logits},
                       [this, logits, targets, mask, n_active, t, vcb, probs](Node& nd) {
            T g = nd.grad.data[0] / T(n_active);
            auto& gl = grad_of(logits);
            for (int i = 0; i < t; ++i) {
                if (!mask[size_t(i)]) continue;
                const T* p = probs->row(i);
                T* dst = gl.row(i);
                for (int j = 0; j < vcb; ++j) dst[j] += g * p[j];
                dst[targets[size_t(i)]] -= g;
            }
        });
    }

    void backward(NodeId loss) {
        Node& top = nodes_[size_t(loss)];
        if (top.value.numel() != 1) throw ModelError("backward: loss must be scalar");
        for (auto& nd : nodes_)
            if (nd.needs_grad && nd.grad.numel() == 0) nd.grad = Tensor<T>::zeros(nd.value.shape);
        if (!top.needs_grad) return;
        top.grad.data[0] = T(1);
        for (int i = loss; i >= 0; --i) {
            Node& nd = nodes_[size_t(i)];
            if (nd.needs_grad && nd.back) nd.back(nd);
        }
        for (auto& nd : nodes_)
            if (nd.bound)
                for (size_t i = 0; i < nd.grad.data.size(); ++i)
                    nd.bound->grad.data[i] += nd.grad.data[i];
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool needs_grad = false;
        Param<T>* bound = nullptr;
        std::function<void(Node&)> back;
    };

    bool record_ = true;
    std::vector<Node> nodes_;

    NodeId push(Tensor<T> v, bool needs, Param<T>* bound, std::function<void(Node&)> back) {
        Node nd;
        nd.value = std::move(v);
        nd.needs_grad = needs;
        nd.bound = bound;
        nd.back = std::move(back);
        nodes_.push_back(std::move(nd));
        return NodeId(nodes_.size() - 1);
    }

    NodeId push_op(Tensor<T> v, std::initializer_list<NodeId> parents,
                   std::function<void(Node&)> back) {
        bool needs = false;
        for (NodeId p : parents) needs = needs || nodes_[size_t(p)].needs_grad;
        return push(std::move(v), needs, nullptr, needs ? std::move(back) : nullptr);
    }

    static void require(bool ok, const char* msg) {
        if (!ok) throw ModelError(msg);
    }

    void accumulate(NodeId target, const T* src, size_t n) {
        if (!needs_grad(target)) return;
        auto& g = grad_of(target);
        for (size_t i = 0; i < n; ++i) g.data[i] += src[i];
    }

    void accumulate_scaled(NodeId target, const T* src, size_t n, T s) {
        if (!needs_grad(target)) return;
        auto& g = grad_of(target);
        for (size_t i = 0; i < n; ++i) g.data[i] += s * src[i];
    }
};

} // namespace engen
