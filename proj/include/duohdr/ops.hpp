#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "duohdr/tape.hpp"

namespace duohdr {

namespace detail {

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape != b.shape)
        throw ShapeError(std::string(op) + ": operand shapes " + a.shape.str() + " and " + b.shape.str() + " differ");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
    detail::check_same_shape(a.value(), b.value(), "add");
    return a.tape->push_op(a.value().shape, {a.id, b.id},
                           [pa = a.id, pb = b.id](Tape<S>& t, int self) {
                               t.value_mut(self).arr() = t.value(pa).arr() + t.value(pb).arr();
                           },
                           [pa = a.id, pb = b.id](Tape<S>& t, int self) {
                               t.grad(pa).arr() += t.grad(self).arr();
                               t.grad(pb).arr() += t.grad(self).arr();
                           },
                           "add");
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
    detail::check_same_shape(a.value(), b.value(), "sub");
    return a.tape->push_op(a.value().shape, {a.id, b.id},
                           [pa = a.id, pb = b.id](Tape<S>& t, int self) {
                               t.value_mut(self).arr() = t.value(pa).arr() - t.value(pb).arr();
                           },
                           [pa = a.id, pb = b.id](Tape<S>& t, int self) {
                               t.grad(pa).arr() += t.grad(self).arr();
                               t.grad(pb).arr() -= t.grad(self).arr();
                           },
                           "sub");
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {  // Hadamard
    detail::check_same_shape(a.value(), b.value(), "mul");
    return a.tape->push_op(a.value().shape, {a.id, b.id},
                           [pa = a.id, pb = b.id](Tape<S>& t, int self) {
                               t.value_mut(self).arr() = t.value(pa).arr() * t.value(pb).arr();
                           },
                           [pa = a.id, pb = b.id](Tape<S>& t, int self) {
                               t.grad(pa).arr() += t.grad(self).arr() * t.value(pb).arr();
                               t.grad(pb).arr() += t.grad(self).arr() * t.value(pa).arr();
                           },
                           "mul");
}

template <typename S>
Var<S> divide(Var<S> a, Var<S> b) {
    detail::check_same_shape(a.value(), b.value(), "div");
    return a.tape->push_op(a.value().shape, {a.id, b.id},
                           [pa = a.id, pb = b.id](Tape<S>& t, int self) {
                               t.value_mut(self).arr() = t.value(pa).arr() / t.value(pb).arr();
                           },
                           [pa = a.id, pb = b.id](Tape<S>& t, int self) {
                               auto g = t.grad(self).arr();
                               auto bv = t.value(pb).arr();
                               t.grad(pa).arr() += g / bv;
                               t.grad(pb).arr() -= g * t.value(pa).arr() / (bv * bv);
                           },
                           "div");
}

template <typename S>
Var<S> add_const(Var<S> a, S c) {
    return a.tape->push_op(a.value().shape, {a.id},
                           [pa = a.id, c](Tape<S>& t, int self) { t.value_mut(self).arr() = t.value(pa).arr() + c; },
                           [pa = a.id](Tape<S>& t, int self) { t.grad(pa).arr() += t.grad(self).arr(); },
                           "add_const");
}

template <typename S>
Var<S> mul_const(Var<S> a, S c) {
    return a.tape->push_op(a.value().shape, {a.id},
                           [pa = a.id, c](Tape<S>& t, int self) { t.value_mut(self).arr() = t.value(pa).arr() * c; },
                           [pa = a.id, c](Tape<S>& t, int self) { t.grad(pa).arr() += c * t.grad(self).arr(); },
                           "mul_const");
}

template <typename S>
Var<S> rsub_const(S c, Var<S> a) {  // c - a
    return a.tape->push_op(a.value().shape, {a.id},
                           [pa = a.id, c](Tape<S>& t, int self) { t.value_mut(self).arr() = c - t.value(pa).arr(); },
                           [pa = a.id](Tape<S>& t, int self) { t.grad(pa).arr() -= t.grad(self).arr(); },
                           "rsub_const");
}

template <typename S>
Var<S> neg(Var<S> a) {
    return mul_const(a, S(-1));
}

// tensor * scalar variable (shape {1})
template <typename S>
Var<S> mul_scalar(Var<S> a, Var<S> s) {
    if (s.value().numel() != 1) throw ShapeError("mul_scalar: scale must be a scalar, got " + s.value().shape.str());
    return a.tape->push_op(a.value().shape, {a.id, s.id},
                           [pa = a.id, ps = s.id](Tape<S>& t, int self) {
                               t.value_mut(self).arr() = t.value(pa).arr() * t.value(ps).data[0];
                           },
                           [pa = a.id, ps = s.id](Tape<S>& t, int self) {
                               t.grad(pa).arr() += t.value(ps).data[0] * t.grad(self).arr();
                               t.grad(ps).data[0] += (t.grad(self).arr() * t.value(pa).arr()).sum();
                           },
                           "mul_scalar");
}

template <typename S>
Var<S> exp_op(Var<S> a) {
    return a.tape->push_op(a.value().shape, {a.id},
                           [pa = a.id](Tape<S>& t, int self) { t.value_mut(self).arr() = t.value(pa).arr().exp(); },
                           [pa = a.id](Tape<S>& t, int self) {
                               t.grad(pa).arr() += t.grad(self).arr() * t.value(self).arr();
                           },
                           "exp");
}

template <typename S>
Var<S> abs_op(Var<S> a) {
    return a.tape->push_op(a.value().shape, {a.id},
                           [pa = a.id](Tape<S>& t, int self) { t.value_mut(self).arr() = t.value(pa).arr().abs(); },
                           [pa = a.id](Tape<S>& t, int self) {
                               t.grad(pa).arr() += t.grad(self).arr() * t.value(pa).arr().sign();
                           },
                           "abs");
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class Act { Relu, LRelu, RReluPaper, Sigmoid };

inline const char* act_name(Act a) {
    switch (a) {
        case Act::Relu: return "relu";
        case Act::LRelu: return "lrelu";
        case Act::RReluPaper: return "rrelu";
        case Act::Sigmoid: return "sigmoid";
    }
    return "?";
}

constexpr double kLReluSlope = 0.2;

template <typename S>
Var<S> activate(Var<S> a, Act mode) {
    return a.tape->push_op(a.value().shape, {a.id},
                           [pa = a.id, mode](Tape<S>& t, int self) {
                               const Tensor<S>& x = t.value(pa);
                               Tensor<S>& y = t.value_mut(self);
                               const std::int64_t n = x.numel();
                               switch (mode) {
                                   case Act::Relu:
                                       for (std::int64_t i = 0; i < n; ++i)
                                           y.data[static_cast<size_t>(i)] = std::max(x.data[static_cast<size_t>(i)], S(0));
                                       break;
                                   case Act::LRelu:
                                       for (std::int64_t i = 0; i < n; ++i) {
                                           const S v = x.data[static_cast<size_t>(i)];
                                           y.data[static_cast<size_t>(i)] = v > S(0) ? v : S(kLReluSlope) * v;
                                       }
                                       break;
                                   case Act::RReluPaper:
                                       // -min(0, x): the rectified negative part
                                       for (std::int64_t i = 0; i < n; ++i) {
                                           const S v = x.data[static_cast<size_t>(i)];
                                           y.data[static_cast<size_t>(i)] = v < S(0) ? -v : S(0);
                                       }
                                       break;
                                   case Act::Sigmoid:
                                       for (std::int64_t i = 0; i < n; ++i)
                                           y.data[static_cast<size_t>(i)] =
                                               S(1) / (S(1) + std::exp(-static_cast<double>(x.data[static_cast<size_t>(i)])));
                                       break;
                               }
                           },
                           [pa = a.id, mode](Tape<S>& t, int self) {
                               const Tensor<S>& x = t.value(pa);
                               const Tensor<S>& y = t.value(self);
                               Tensor<S>& gx = t.grad(pa);
                               const Tensor<S>& g = t.grad(self);
                               const std::int64_t n = x.numel();
                               for (std::int64_t i = 0; i < n; ++i) {
                                   S d = S(0);
                                   switch (mode) {
                                       case Act::Relu: d = x.data[static_cast<size_t>(i)] > S(0) ? S(1) : S(0); break;
                                       case Act::LRelu:
                                           d = x.data[static_cast<size_t>(i)] > S(0) ? S(1) : S(kLReluSlope);
                                           break;
                                       case Act::RReluPaper:
                                           d = x.data[static_cast<size_t>(i)] < S(0) ? S(-1) : S(0);
                                           break;
                                       case Act::Sigmoid: {
                                           const S yv = y.data[static_cast<size_t>(i)];
                                           d = yv * (S(1) - yv);
                                           break;
                                       }
                                   }
                                   gx.data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)] * d;
                               }
                           },
                           act_name(mode));
}

// Pass-through gradient inside (0,1), zero outside.
template <typename S>
Var<S> clamp01(Var<S> a) {
    return a.tape->push_op(a.value().shape, {a.id},
                           [pa = a.id](Tape<S>& t, int self) {
                               const Tensor<S>& x = t.value(pa);
                               Tensor<S>& y = t.value_mut(self);
                               for (std::int64_t i = 0; i < x.numel(); ++i)
                                   y.data[static_cast<size_t>(i)] = std::clamp(x.data[static_cast<size_t>(i)], S(0), S(1));
                           },
                           [pa = a.id](Tape<S>& t, int self) {
                               const Tensor<S>& x = t.value(pa);
                               Tensor<S>& gx = t.grad(pa);
                               const Tensor<S>& g = t.grad(self);
                               for (std::int64_t i = 0; i < x.numel(); ++i)
                                   if (x.data[static_cast<size_t>(i)] > S(0) && x.data[static_cast<size_t>(i)] < S(1))
                                       gx.data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)];
                           },
                           "clamp01");
}

// mu-law tone mapping T(h) = log(1 + mu*h) / log(1 + mu). Inputs are expected
// in [0,1]; callers clamp first.
template <typename S>
Var<S> mu_law_op(Var<S> a, S mu) {
    const S denom = static_cast<S>(std::log1p(static_cast<double>(mu)));
    return a.tape->push_op(a.value().shape, {a.id},
                           [pa = a.id, mu, denom](Tape<S>& t, int self) {
                               const Tensor<S>& x = t.value(pa);
                               Tensor<S>& y = t.value_mut(self);
                               for (std::int64_t i = 0; i < x.numel(); ++i)
                                   y.data[static_cast<size_t>(i)] = static_cast<S>(
                                       std::log1p(static_cast<double>(mu) * x.data[static_cast<size_t>(i)])) / denom;
                           },
                           [pa = a.id, mu, denom](Tape<S>& t, int self) {
                               const Tensor<S>& x = t.value(pa);
                               Tensor<S>& gx = t.grad(pa);
                               const Tensor<S>& g = t.grad(self);
                               for (std::int64_t i = 0; i < x.numel(); ++i)
                                   gx.data[static_cast<size_t>(i)] +=
                                       g.data[static_cast<size_t>(i)] * mu /
                                       ((S(1) + mu * x.data[static_cast<size_t>(i)]) * denom);
                           },
                           "mu_law");
}

template <typename S>
Var<S> mean_all(Var<S> a) {
    const std::int64_t n = a.value().numel();
    return a.tape->push_op(Shape{1}, {a.id},
                           [pa = a.id, n](Tape<S>& t, int self) {
                               t.value_mut(self).data[0] = t.value(pa).arr().sum() / static_cast<S>(n);
                           },
                           [pa = a.id, n](Tape<S>& t, int self) {
                               t.grad(pa).arr() += t.grad(self).data[0] / static_cast<S>(n);
                           },
                           "mean_all");
}

// ---------------------------------------------------------------------------
// Matrix products and softmax
// ---------------------------------------------------------------------------

// matmul for rank-2 (M,K)x(K,N) or rank-3 batched (B,M,K)x(B,K,N).
// trans_b treats b as (.,N,K) and multiplies by its transpose.
template <typename S>
Var<S> matmul(Var<S> a, Var<S> b, bool trans_b = false) {
    const Tensor<S>& av = a.value();
    const Tensor<S>& bv = b.value();
    if (av.shape.rank() != bv.shape.rank() || (av.shape.rank() != 2 && av.shape.rank() != 3))
        throw ShapeError("matmul: expected matching rank-2 or rank-3 operands, got " + av.shape.str() + " and " +
                         bv.shape.str());
    const bool batched = av.shape.rank() == 3;
    const int B = batched ? av.shape[0] : 1;
    if (batched && bv.shape[0] != B)
        throw ShapeError("matmul: batch extents differ (axis 0): " + av.shape.str() + " vs " + bv.shape.str());
    const int M = av.shape[batched ? 1 : 0];
    const int K = av.shape[batched ? 2 : 1];
    const int bK = trans_b ? bv.shape[batched ? 2 : 1] : bv.shape[batched ? 1 : 0];
    const int N = trans_b ? bv.shape[batched ? 1 : 0] : bv.shape[batched ? 2 : 1];
    if (K != bK)
        throw ShapeError("matmul: inner (token) dimension mismatch: " + std::to_string(K) + " vs " + std::to_string(bK));

    return a.tape->push_op(
        batched ? Shape{B, M, N} : Shape{M, N}, {a.id, b.id},
        [pa = a.id, pb = b.id, B, M, K, N, trans_b](Tape<S>& t, int self) {
            const Tensor<S>& av = t.value(pa);
            const Tensor<S>& bv = t.value(pb);
            Tensor<S>& out = t.value_mut(self);
            for (int i = 0; i < B; ++i) {
                typename Tensor<S>::CMapM am(av.ptr() + static_cast<std::int64_t>(i) * M * K, M, K);
                typename Tensor<S>::MapM om(out.ptr() + static_cast<std::int64_t>(i) * M * N, M, N);
                if (trans_b) {
                    typename Tensor<S>::CMapM bm(bv.ptr() + static_cast<std::int64_t>(i) * N * K, N, K);
                    om.noalias() = am * bm.transpose();
                } else {
                    typename Tensor<S>::CMapM bm(bv.ptr() + static_cast<std::int64_t>(i) * K * N, K, N);
                    om.noalias() = am * bm;
                }
            }
        },
        [pa = a.id, pb = b.id, B, M, K, N, trans_b](Tape<S>& t, int self) {
            const Tensor<S>& av = t.value(pa);
            const Tensor<S>& bv = t.value(pb);
            const Tensor<S>& g = t.grad(self);
            Tensor<S>& ga = t.grad(pa);
            Tensor<S>& gb = t.grad(pb);
            for (int i = 0; i < B; ++i) {
                typename Tensor<S>::CMapM gm(g.ptr() + static_cast<std::int64_t>(i) * M * N, M, N);
                typename Tensor<S>::CMapM am(av.ptr() + static_cast<std::int64_t>(i) * M * K, M, K);
                typename Tensor<S>::MapM gam(ga.ptr() + static_cast<std::int64_t>(i) * M * K, M, K);
                if (trans_b) {
                    typename Tensor<S>::CMapM bm(bv.ptr() + static_cast<std::int64_t>(i) * N * K, N, K);
                    typename Tensor<S>::MapM gbm(gb.ptr() + static_cast<std::int64_t>(i) * N * K, N, K);
                    gam.noalias() += gm * bm;              // dA = G * B
                    gbm.noalias() += gm.transpose() * am;  // dB = G^T * A
                } else {
                    typename Tensor<S>::CMapM bm(bv.ptr() + static_cast<std::int64_t>(i) * K * N, K, N);
                    typename Tensor<S>::MapM gbm(gb.ptr() + static_cast<std::int64_t>(i) * K * N, K, N);
                    gam.noalias() += gm * bm.transpose();
                    gbm.noalias() += am.transpose() * gm;
                }
            }
        },
        "matmul");
}

// Softmax over the last axis of a rank-2 or rank-3 tensor.
template <typename S>
Var<S> softmax_last(Var<S> a) {
    const Tensor<S>& av = a.value();
    if (av.shape.rank() < 2) throw ShapeError("softmax: expected rank >= 2, got " + av.shape.str());
    const int cols = av.shape[av.shape.rank() - 1];
    const std::int64_t rows = av.numel() / cols;
    return a.tape->push_op(av.shape, {a.id},
                           [pa = a.id, rows, cols](Tape<S>& t, int self) {
                               const Tensor<S>& x = t.value(pa);
                               Tensor<S>& y = t.value_mut(self);
                               for (std::int64_t r = 0; r < rows; ++r) {
                                   const S* xp = x.ptr() + r * cols;
                                   S* p = y.ptr() + r * cols;
                                   S mx = xp[0];
                                   for (int j = 1; j < cols; ++j) mx = std::max(mx, xp[j]);
                                   S sum = S(0);
                                   for (int j = 0; j < cols; ++j) {
                                       p[j] = std::exp(static_cast<double>(xp[j] - mx));
                                       sum += p[j];
                                   }
                                   for (int j = 0; j < cols; ++j) p[j] /= sum;
                               }
                           },
                           [pa = a.id, rows, cols](Tape<S>& t, int self) {
                               const Tensor<S>& y = t.value(self);
                               const Tensor<S>& g = t.grad(self);
                               Tensor<S>& gx = t.grad(pa);
                               for (std::int64_t r = 0; r < rows; ++r) {
                                   const S* yp = y.ptr() + r * cols;
                                   const S* gp = g.ptr() + r * cols;
                                   S dot = S(0);
                                   for (int j = 0; j < cols; ++j) dot += yp[j] * gp[j];
                                   S* gxp = gx.ptr() + r * cols;
                                   for (int j = 0; j < cols; ++j) gxp[j] += (gp[j] - dot) * yp[j];
                               }
                           },
                           "softmax");
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

namespace detail {

// im2col for a (C,H,W) input, kernel k, zero padding p, stride 1.
// cols is (C*k*k) x (Ho*Wo), row-major.
template <typename S>
void im2col(const Tensor<S>& x, int k, int p, Tensor<S>& cols) {
    const int C = x.shape[0], H = x.shape[1], W = x.shape[2];
    const int Ho = H + 2 * p - k + 1, Wo = W + 2 * p - k + 1;
    cols = Tensor<S>(Shape{C * k * k, Ho * Wo});
    S* dst = cols.ptr();
    for (int c = 0; c < C; ++c)
        for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) {
                for (int y = 0; y < Ho; ++y) {
                    const int iy = y + dy - p;
                    if (iy < 0 || iy >= H) {
                        for (int xx = 0; xx < Wo; ++xx) *dst++ = S(0);
                        continue;
                    }
                    const S* src = x.ptr() + (static_cast<std::int64_t>(c) * H + iy) * W;
                    for (int xx = 0; xx < Wo; ++xx) {
                        const int ix = xx + dx - p;
                        *dst++ = (ix < 0 || ix >= W) ? S(0) : src[ix];
                    }
                }
            }
}

template <typename S>
void col2im_add(const Tensor<S>& cols, int C, int H, int W, int k, int p, Tensor<S>& gx) {
    const int Ho = H + 2 * p - k + 1, Wo = W + 2 * p - k + 1;
    const S* src = cols.ptr();
    for (int c = 0; c < C; ++c)
        for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) {
                for (int y = 0; y < Ho; ++y) {
                    const int iy = y + dy - p;
                    if (iy < 0 || iy >= H) {
                        src += Wo;
                        continue;
                    }
                    S* dst = gx.ptr() + (static_cast<std::int64_t>(c) * H + iy) * W;
                    for (int xx = 0; xx < Wo; ++xx) {
                        const int ix = xx + dx - p;
                        if (ix >= 0 && ix < W) dst[ix] += src[xx];
                    }
                    src += Wo;
                }
            }
}

}  // namespace detail

// Standard convolution, stride 1. x: (C,H,W); w: (O,C,k,k); optional bias (O).
// pad defaults to (k-1)/2 so output keeps the spatial size.
template <typename S>
Var<S> conv2d(Var<S> x, Var<S> w, Var<S> b, int pad = -1) {
    const Tensor<S>& xv = x.value();
    const Tensor<S>& wv = w.value();
    if (xv.shape.rank() != 3) throw ShapeError("conv2d: input must be rank-3 (C,H,W), got " + xv.shape.str());
    if (wv.shape.rank() != 4) throw ShapeError("conv2d: weight must be rank-4 (O,C,k,k), got " + wv.shape.str());
    const int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
    const int O = wv.shape[0], k = wv.shape[2];
    if (wv.shape[1] != C)
        throw ShapeError("conv2d: input channels (axis 0 of input = " + std::to_string(C) +
                         ") do not match weight input channels (axis 1 of weight = " + std::to_string(wv.shape[1]) + ")");
    if (wv.shape[3] != k) throw ShapeError("conv2d: kernel must be square, got " + wv.shape.str());
    if (b.valid()) {
        if (b.value().shape.rank() != 1 || b.value().shape[0] != O)
            throw ShapeError("conv2d: bias shape " + b.value().shape.str() + " does not match output channels " +
                             std::to_string(O));
    }
    if (pad < 0) pad = (k - 1) / 2;
    const int Ho = H + 2 * pad - k + 1, Wo = W + 2 * pad - k + 1;
    if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: kernel larger than padded input");

    std::vector<int> parents = {x.id, w.id};
    if (b.valid()) parents.push_back(b.id);
    const int bid = b.valid() ? b.id : -1;
    return x.tape->push_op(
        Shape{O, Ho, Wo}, std::move(parents),
        [px = x.id, pw = w.id, bid, C, H, W, O, k, pad, Ho, Wo](Tape<S>& t, int self) {
            const Tensor<S>& xv = t.value(px);
            const Tensor<S>& wv = t.value(pw);
            Tensor<S>& out = t.value_mut(self);
            if (k == 1 && pad == 0) {
                out.mat(O, Ho * Wo).noalias() = wv.mat(O, C) * xv.mat(C, H * W);
            } else {
                Tensor<S> cols;
                detail::im2col(xv, k, pad, cols);
                out.mat(O, Ho * Wo).noalias() = wv.mat(O, C * k * k) * cols.mat(C * k * k, Ho * Wo);
            }
            if (bid >= 0) {
                const Tensor<S>& bv = t.value(bid);
                for (int o = 0; o < O; ++o) {
                    S* p = out.ptr() + static_cast<std::int64_t>(o) * Ho * Wo;
                    const S bo = bv.data[static_cast<size_t>(o)];
                    for (int i = 0; i < Ho * Wo; ++i) p[i] += bo;
                }
            }
        },
        [px = x.id, pw = w.id, bid, C, H, W, O, k, pad, Ho, Wo](Tape<S>& t, int self) {
            const Tensor<S>& xv = t.value(px);
            const Tensor<S>& wv = t.value(pw);
            const Tensor<S>& g = t.grad(self);
            Tensor<S>& gx = t.grad(px);
            Tensor<S>& gw = t.grad(pw);
            if (k == 1 && pad == 0) {
                gw.mat(O, C).noalias() += g.mat(O, Ho * Wo) * xv.mat(C, H * W).transpose();
                gx.mat(C, H * W).noalias() += wv.mat(O, C).transpose() * g.mat(O, Ho * Wo);
            } else {
                Tensor<S> cols;
                detail::im2col(xv, k, pad, cols);
                gw.mat(O, C * k * k).noalias() += g.mat(O, Ho * Wo) * cols.mat(C * k * k, Ho * Wo).transpose();
                Tensor<S> gcols(Shape{C * k * k, Ho * Wo});
                gcols.mat(C * k * k, Ho * Wo).noalias() = wv.mat(O, C * k * k).transpose() * g.mat(O, Ho * Wo);
                detail::col2im_add(gcols, C, H, W, k, pad, gx);
            }
            if (bid >= 0) {
                Tensor<S>& gb = t.grad(bid);
                for (int o = 0; o < O; ++o) {
                    const S* p = g.ptr() + static_cast<std::int64_t>(o) * Ho * Wo;
                    S s = S(0);
                    for (int i = 0; i < Ho * Wo; ++i) s += p[i];
                    gb.data[static_cast<size_t>(o)] += s;
                }
            }
        },
        "conv2d");
}

// Depthwise convolution (each channel filtered independently). x: (C,H,W);
// w: (C,k,k); optional bias (C). pad defaults to same-size.
template <typename S>
Var<S> depthwise_conv(Var<S> x, Var<S> w, Var<S> b, int pad = -1) {
    const Tensor<S>& xv = x.value();
    const Tensor<S>& wv = w.value();
    if (xv.shape.rank() != 3) throw ShapeError("depthwise_conv: input must be rank-3 (C,H,W), got " + xv.shape.str());
    if (wv.shape.rank() != 3) throw ShapeError("depthwise_conv: weight must be rank-3 (C,k,k), got " + wv.shape.str());
    const int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
    const int k = wv.shape[1];
    if (wv.shape[0] != C)
        throw ShapeError("depthwise_conv: weight channels (axis 0 = " + std::to_string(wv.shape[0]) +
                         ") do not match input channels (axis 0 = " + std::to_string(C) + ")");
    if (pad < 0) pad = (k - 1) / 2;
    const int Ho = H + 2 * pad - k + 1, Wo = W + 2 * pad - k + 1;
    if (Ho <= 0 || Wo <= 0) throw ShapeError("depthwise_conv: kernel larger than padded input");

    std::vector<int> parents = {x.id, w.id};
    if (b.valid()) parents.push_back(b.id);
    const int bid = b.valid() ? b.id : -1;
    return x.tape->push_op(
        Shape{C, Ho, Wo}, std::move(parents),
        [px = x.id, pw = w.id, bid, C, H, W, k, pad, Ho, Wo](Tape<S>& t, int self) {
            const Tensor<S>& xv = t.value(px);
            const Tensor<S>& wv = t.value(pw);
            Tensor<S>& out = t.value_mut(self);
            for (int c = 0; c < C; ++c) {
                const S* xp = xv.ptr() + static_cast<std::int64_t>(c) * H * W;
                const S* wp = wv.ptr() + static_cast<std::int64_t>(c) * k * k;
                S* op = out.ptr() + static_cast<std::int64_t>(c) * Ho * Wo;
                const S bo = bid >= 0 ? t.value(bid).data[static_cast<size_t>(c)] : S(0);
                for (int y = 0; y < Ho; ++y)
                    for (int xx = 0; xx < Wo; ++xx) {
                        S acc = bo;
                        for (int dy = 0; dy < k; ++dy) {
                            const int iy = y + dy - pad;
                            if (iy < 0 || iy >= H) continue;
                            for (int dx = 0; dx < k; ++dx) {
                                const int ix = xx + dx - pad;
                                if (ix < 0 || ix >= W) continue;
                                acc += xp[iy * W + ix] * wp[dy * k + dx];
                            }
                        }
                        op[y * Wo + xx] = acc;
                    }
            }
        },
        [px = x.id, pw = w.id, bid, C, H, W, k, pad, Ho, Wo](Tape<S>& t, int self) {
            const Tensor<S>& xv = t.value(px);
            const Tensor<S>& wv = t.value(pw);
            const Tensor<S>& g = t.grad(self);
            Tensor<S>& gx = t.grad(px);
            Tensor<S>& gw = t.grad(pw);
            for (int c = 0; c < C; ++c) {
                const S* xp = xv.ptr() + static_cast<std::int64_t>(c) * H * W;
                const S* wp = wv.ptr() + static_cast<std::int64_t>(c) * k * k;
                const S* gp = g.ptr() + static_cast<std::int64_t>(c) * Ho * Wo;
                S* gxp = gx.ptr() + static_cast<std::int64_t>(c) * H * W;
                S* gwp = gw.ptr() + static_cast<std::int64_t>(c) * k * k;
                for (int y = 0; y < Ho; ++y)
                    for (int xx = 0; xx < Wo; ++xx) {
                        const S gv = gp[y * Wo + xx];
                        if (gv == S(0)) continue;
                        for (int dy = 0; dy < k; ++dy) {
                            const int iy = y + dy - pad;
                            if (iy < 0 || iy >= H) continue;
                            for (int dx = 0; dx < k; ++dx) {
                                const int ix = xx + dx - pad;
                                if (ix < 0 || ix >= W) continue;
                                gxp[iy * W + ix] += gv * wp[dy * k + dx];
                                gwp[dy * k + dx] += gv * xp[iy * W + ix];
                            }
                        }
                    }
                if (bid >= 0) {
                    S s = S(0);
                    for (int i = 0; i < Ho * Wo; ++i) s += gp[i];
                    t.grad(bid).data[static_cast<size_t>(c)] += s;
                }
            }
        },
        "depthwise_conv");
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

constexpr double kNormEps = 1e-5;
constexpr double kBnMomentum = 0.9;

enum class BnMode { TrainUpdate, TrainNoUpdate, Eval };

// Layer norm over the channel axis at each spatial location. x: (C,H,W);
// gamma, beta: (C).
template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gamma, Var<S> beta) {
    const Tensor<S>& xv = x.value();
    if (xv.shape.rank() != 3) throw ShapeError("layer_norm: input must be rank-3 (C,H,W), got " + xv.shape.str());
    const int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
    if (gamma.value().numel() != C || beta.value().numel() != C)
        throw ShapeError("layer_norm: gamma/beta must have C=" + std::to_string(C) + " elements");
    const int HW = H * W;
    auto stats = std::make_shared<std::vector<S>>(2 * HW);  // mean, inv_std per location
    return x.tape->push_op(
        xv.shape, {x.id, gamma.id, beta.id},
        [px = x.id, pg = gamma.id, pb = beta.id, C, HW, stats](Tape<S>& t, int self) {
            const Tensor<S>& xv = t.value(px);
            const Tensor<S>& gv = t.value(pg);
            const Tensor<S>& bv = t.value(pb);
            Tensor<S>& out = t.value_mut(self);
            for (int i = 0; i < HW; ++i) {
                S m = S(0);
                for (int c = 0; c < C; ++c) m += xv.data[static_cast<size_t>(c) * HW + i];
                m /= static_cast<S>(C);
                S v = S(0);
                for (int c = 0; c < C; ++c) {
                    const S d = xv.data[static_cast<size_t>(c) * HW + i] - m;
                    v += d * d;
                }
                v /= static_cast<S>(C);
                const S inv = S(1) / static_cast<S>(std::sqrt(static_cast<double>(v) + kNormEps));
                (*stats)[static_cast<size_t>(i)] = m;
                (*stats)[static_cast<size_t>(HW + i)] = inv;
                for (int c = 0; c < C; ++c)
                    out.data[static_cast<size_t>(c) * HW + i] =
                        gv.data[static_cast<size_t>(c)] * (xv.data[static_cast<size_t>(c) * HW + i] - m) * inv +
                        bv.data[static_cast<size_t>(c)];
            }
        },
        [px = x.id, pg = gamma.id, pb = beta.id, C, HW, stats](Tape<S>& t, int self) {
            const Tensor<S>& xv = t.value(px);
            const Tensor<S>& gv = t.value(pg);
            const Tensor<S>& g = t.grad(self);
            Tensor<S>& gx = t.grad(px);
            Tensor<S>& gg = t.grad(pg);
            Tensor<S>& gb = t.grad(pb);
            for (int i = 0; i < HW; ++i) {
                const S m = (*stats)[static_cast<size_t>(i)];
                const S inv = (*stats)[static_cast<size_t>(HW + i)];
                S mean_dxh = S(0), mean_dxh_xh = S(0);
                for (int c = 0; c < C; ++c) {
                    const S xh = (xv.data[static_cast<size_t>(c) * HW + i] - m) * inv;
                    const S dy = g.data[static_cast<size_t>(c) * HW + i];
                    const S dxh = dy * gv.data[static_cast<size_t>(c)];
                    gg.data[static_cast<size_t>(c)] += dy * xh;
                    gb.data[static_cast<size_t>(c)] += dy;
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * xh;
                }
                mean_dxh /= static_cast<S>(C);
                mean_dxh_xh /= static_cast<S>(C);
                for (int c = 0; c < C; ++c) {
                    const S xh = (xv.data[static_cast<size_t>(c) * HW + i] - m) * inv;
                    const S dxh = g.data[static_cast<size_t>(c) * HW + i] * gv.data[static_cast<size_t>(c)];
                    gx.data[static_cast<size_t>(c) * HW + i] += inv * (dxh - mean_dxh - xh * mean_dxh_xh);
                }
            }
        },
        "layer_norm");
}

// Batch norm per channel over (batch x) spatial. x: (C,H,W) or (B,C,H,W);
// gamma, beta: (C). Running statistics are owned by the caller (ParamStore
// state) and updated only in TrainUpdate mode.
template <typename S>
Var<S> batch_norm(Var<S> x, Var<S> gamma, Var<S> beta, Tensor<S>& running_mean, Tensor<S>& running_var,
                  BnMode mode) {
    const Tensor<S>& xv0 = x.value();
    const int rank = xv0.shape.rank();
    if (rank != 3 && rank != 4)
        throw ShapeError("batch_norm: input must be rank-3 (C,H,W) or rank-4 (B,C,H,W), got " + xv0.shape.str());
    const int B = rank == 4 ? xv0.shape[0] : 1;
    const int C = xv0.shape[rank == 4 ? 1 : 0];
    const int HW = xv0.shape[rank - 2] * xv0.shape[rank - 1];
    const std::int64_t N = static_cast<std::int64_t>(B) * HW;
    if (gamma.value().numel() != C || beta.value().numel() != C)
        throw ShapeError("batch_norm: gamma/beta must have C=" + std::to_string(C) + " elements");
    if (running_mean.numel() != C || running_var.numel() != C)
        throw ShapeError("batch_norm: running stats must have C=" + std::to_string(C) + " elements");

    auto stats = std::make_shared<std::vector<S>>(2 * C);  // mean, inv_std per channel
    Tensor<S>* rm = &running_mean;
    Tensor<S>* rv = &running_var;
    return x.tape->push_op(
        xv0.shape, {x.id, gamma.id, beta.id},
        [px = x.id, pg = gamma.id, pb = beta.id, B, C, HW, N, stats, rm, rv, mode](Tape<S>& t, int self) {
            const Tensor<S>& xv = t.value(px);
            const Tensor<S>& gv = t.value(pg);
            const Tensor<S>& bv = t.value(pb);
            Tensor<S>& out = t.value_mut(self);
            auto idx = [&](int b, int c) { return (static_cast<std::int64_t>(b) * C + c) * HW; };
            for (int c = 0; c < C; ++c) {
                S m, inv;
                if (mode == BnMode::Eval) {
                    m = rm->data[static_cast<size_t>(c)];
                    inv = S(1) / static_cast<S>(std::sqrt(static_cast<double>(rv->data[static_cast<size_t>(c)]) + kNormEps));
                } else {
                    m = S(0);
                    for (int b = 0; b < B; ++b) {
                        const S* p = xv.ptr() + idx(b, c);
                        for (int i = 0; i < HW; ++i) m += p[i];
                    }
                    m /= static_cast<S>(N);
                    S v = S(0);
                    for (int b = 0; b < B; ++b) {
                        const S* p = xv.ptr() + idx(b, c);
                        for (int i = 0; i < HW; ++i) {
                            const S d = p[i] - m;
                            v += d * d;
                        }
                    }
                    v /= static_cast<S>(N);  // biased variance
                    inv = S(1) / static_cast<S>(std::sqrt(static_cast<double>(v) + kNormEps));
                    if (mode == BnMode::TrainUpdate) {
                        rm->data[static_cast<size_t>(c)] =
                            S(kBnMomentum) * rm->data[static_cast<size_t>(c)] + S(1 - kBnMomentum) * m;
                        rv->data[static_cast<size_t>(c)] =
                            S(kBnMomentum) * rv->data[static_cast<size_t>(c)] + S(1 - kBnMomentum) * v;
                    }
                }
                (*stats)[static_cast<size_t>(c)] = m;
                (*stats)[static_cast<size_t>(C + c)] = inv;
                const S ga = gv.data[static_cast<size_t>(c)], be = bv.data[static_cast<size_t>(c)];
                for (int b = 0; b < B; ++b) {
                    const S* p = xv.ptr() + idx(b, c);
                    S* o = out.ptr() + idx(b, c);
                    for (int i = 0; i < HW; ++i) o[i] = ga * (p[i] - m) * inv + be;
                }
            }
        },
        [px = x.id, pg = gamma.id, pb = beta.id, B, C, HW, N, stats, mode](Tape<S>& t, int self) {
            const Tensor<S>& xv = t.value(px);
            const Tensor<S>& gv = t.value(pg);
            const Tensor<S>& g = t.grad(self);
            Tensor<S>& gx = t.grad(px);
            Tensor<S>& gg = t.grad(pg);
            Tensor<S>& gb = t.grad(pb);
            const bool eval_mode = mode == BnMode::Eval;
            auto idx = [&](int b, int c) { return (static_cast<std::int64_t>(b) * C + c) * HW; };
            for (int c = 0; c < C; ++c) {
                const S m = (*stats)[static_cast<size_t>(c)];
                const S inv = (*stats)[static_cast<size_t>(C + c)];
                const S ga = gv.data[static_cast<size_t>(c)];
                S sum_dy = S(0), sum_dy_xh = S(0);
                for (int b = 0; b < B; ++b) {
                    const S* xp = xv.ptr() + idx(b, c);
                    const S* gp = g.ptr() + idx(b, c);
                    for (int i = 0; i < HW; ++i) {
                        const S xh = (xp[i] - m) * inv;
                        sum_dy += gp[i];
                        sum_dy_xh += gp[i] * xh;
                    }
                }
                gg.data[static_cast<size_t>(c)] += sum_dy_xh;
                gb.data[static_cast<size_t>(c)] += sum_dy;
                const S mean_dy = sum_dy / static_cast<S>(N);
                const S mean_dy_xh = sum_dy_xh / static_cast<S>(N);
                for (int b = 0; b < B; ++b) {
                    const S* xp = xv.ptr() + idx(b, c);
                    const S* gp = g.ptr() + idx(b, c);
                    S* gxp = gx.ptr() + idx(b, c);
                    for (int i = 0; i < HW; ++i) {
                        if (eval_mode) {
                            gxp[i] += gp[i] * ga * inv;
                        } else {
                            const S xh = (xp[i] - m) * inv;
                            gxp[i] += ga * inv * (gp[i] - mean_dy - xh * mean_dy_xh);
                        }
                    }
                }
            }
        },
        "batch_norm");
}

// ---------------------------------------------------------------------------
// Pooling, broadcast, concat, slicing, reshape
// ---------------------------------------------------------------------------

// Global average pooling (C,H,W) -> (C,1,1).
template <typename S>
Var<S> gap(Var<S> x) {
    const Tensor<S>& xv = x.value();
    if (xv.shape.rank() != 3) throw ShapeError("gap: input must be rank-3 (C,H,W), got " + xv.shape.str());
    const int C = xv.shape[0], HW = xv.shape[1] * xv.shape[2];
    return x.tape->push_op(Shape{C, 1, 1}, {x.id},
                           [px = x.id, C, HW](Tape<S>& t, int self) {
                               const Tensor<S>& xv = t.value(px);
                               Tensor<S>& out = t.value_mut(self);
                               for (int c = 0; c < C; ++c) {
                                   const S* p = xv.ptr() + static_cast<std::int64_t>(c) * HW;
                                   S s = S(0);
                                   for (int i = 0; i < HW; ++i) s += p[i];
                                   out.data[static_cast<size_t>(c)] = s / static_cast<S>(HW);
                               }
                           },
                           [px = x.id, C, HW](Tape<S>& t, int self) {
                               const Tensor<S>& g = t.grad(self);
                               Tensor<S>& gx = t.grad(px);
                               for (int c = 0; c < C; ++c) {
                                   const S gv = g.data[static_cast<size_t>(c)] / static_cast<S>(HW);
                                   S* p = gx.ptr() + static_cast<std::int64_t>(c) * HW;
                                   for (int i = 0; i < HW; ++i) p[i] += gv;
                               }
                           },
                           "gap");
}

// (C,1,1) -> (C,H,W)
template <typename S>
Var<S> broadcast_hw(Var<S> x, int H, int W) {
    const Tensor<S>& xv = x.value();
    if (xv.shape.rank() != 3 || xv.shape[1] != 1 || xv.shape[2] != 1)
        throw ShapeError("broadcast_hw: input must be (C,1,1), got " + xv.shape.str());
    const int C = xv.shape[0];
    return x.tape->push_op(Shape{C, H, W}, {x.id},
                           [px = x.id, C, HW = H * W](Tape<S>& t, int self) {
                               const Tensor<S>& xv = t.value(px);
                               Tensor<S>& out = t.value_mut(self);
                               for (int c = 0; c < C; ++c) {
                                   S* p = out.ptr() + static_cast<std::int64_t>(c) * HW;
                                   const S v = xv.data[static_cast<size_t>(c)];
                                   for (int i = 0; i < HW; ++i) p[i] = v;
                               }
                           },
                           [px = x.id, C, HW = H * W](Tape<S>& t, int self) {
                               const Tensor<S>& g = t.grad(self);
                               Tensor<S>& gx = t.grad(px);
                               for (int c = 0; c < C; ++c) {
                                   const S* p = g.ptr() + static_cast<std::int64_t>(c) * HW;
                                   S s = S(0);
                                   for (int i = 0; i < HW; ++i) s += p[i];
                                   gx.data[static_cast<size_t>(c)] += s;
                               }
                           },
                           "broadcast_hw");
}

// Concatenate rank-3 tensors along the channel axis.
template <typename S>
Var<S> concat_ch(const std::vector<Var<S>>& xs) {
    if (xs.empty()) throw ShapeError("concat_ch: no operands");
    const int H = xs[0].value().shape[1], W = xs[0].value().shape[2];
    int C = 0;
    for (const auto& v : xs) {
        if (v.value().shape.rank() != 3 || v.value().shape[1] != H || v.value().shape[2] != W)
            throw ShapeError("concat_ch: spatial extents differ: " + xs[0].value().shape.str() + " vs " +
                             v.value().shape.str());
        C += v.value().shape[0];
    }
    std::vector<int> parents;
    auto chans = std::make_shared<std::vector<int>>();
    for (const auto& v : xs) {
        parents.push_back(v.id);
        chans->push_back(v.value().shape[0]);
    }
    auto pcopy = std::make_shared<std::vector<int>>(parents);
    return xs[0].tape->push_op(
        Shape{C, H, W}, std::move(parents),
        [pcopy, chans, HW = H * W](Tape<S>& t, int self) {
            Tensor<S>& out = t.value_mut(self);
            S* dst = out.ptr();
            for (size_t i = 0; i < pcopy->size(); ++i) {
                const Tensor<S>& v = t.value((*pcopy)[i]);
                std::copy(v.ptr(), v.ptr() + v.numel(), dst);
                dst += v.numel();
            }
        },
        [pcopy, chans, HW = H * W](Tape<S>& t, int self) {
            const Tensor<S>& g = t.grad(self);
            const S* src = g.ptr();
            for (size_t i = 0; i < pcopy->size(); ++i) {
                Tensor<S>& gx = t.grad((*pcopy)[i]);
                const std::int64_t n = static_cast<std::int64_t>((*chans)[i]) * HW;
                for (std::int64_t j = 0; j < n; ++j) gx.data[static_cast<size_t>(j)] += src[j];
                src += n;
            }
        },
        "concat_ch");
}

template <typename S>
Var<S> concat_ch(Var<S> a, Var<S> b) {
    return concat_ch(std::vector<Var<S>>{a, b});
}

// Channel slice [from, from+count) of a rank-3 tensor.
template <typename S>
Var<S> slice_ch(Var<S> x, int from, int count) {
    const Tensor<S>& xv = x.value();
    if (xv.shape.rank() != 3) throw ShapeError("slice_ch: input must be rank-3, got " + xv.shape.str());
    const int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
    if (from < 0 || count <= 0 || from + count > C)
        throw ShapeError("slice_ch: channel range [" + std::to_string(from) + "," + std::to_string(from + count) +
                         ") out of bounds for C=" + std::to_string(C));
    return x.tape->push_op(Shape{count, H, W}, {x.id},
                           [px = x.id, from, count, HW = H * W](Tape<S>& t, int self) {
                               const Tensor<S>& xv = t.value(px);
                               Tensor<S>& out = t.value_mut(self);
                               std::copy(xv.ptr() + static_cast<std::int64_t>(from) * HW,
                                         xv.ptr() + static_cast<std::int64_t>(from + count) * HW, out.ptr());
                           },
                           [px = x.id, from, count, HW = H * W](Tape<S>& t, int self) {
                               const Tensor<S>& g = t.grad(self);
                               Tensor<S>& gx = t.grad(px);
                               S* dst = gx.ptr() + static_cast<std::int64_t>(from) * HW;
                               const std::int64_t n = static_cast<std::int64_t>(count) * HW;
                               for (std::int64_t j = 0; j < n; ++j) dst[j] += g.data[static_cast<size_t>(j)];
                           },
                           "slice_ch");
}

template <typename S>
Var<S> reshape(Var<S> x, const Shape& sh) {
    if (sh.numel() != x.value().numel())
        throw ShapeError("reshape: cannot view " + x.value().shape.str() + " as " + sh.str());
    return x.tape->push_op(sh, {x.id},
                           [px = x.id](Tape<S>& t, int self) {
                               const Tensor<S>& xv = t.value(px);
                               std::copy(xv.data.begin(), xv.data.end(), t.value_mut(self).data.begin());
                           },
                           [px = x.id](Tape<S>& t, int self) { t.grad(px).arr() += t.grad(self).arr(); },
                           "reshape");
}

// ---------------------------------------------------------------------------
// Window partition for local self-attention
// ---------------------------------------------------------------------------

// (C,H,W) -> (numWindows, win*win, C); H and W must be divisible by win.
template <typename S>
Var<S> window_partition(Var<S> x, int win) {
    const Tensor<S>& xv = x.value();
    if (xv.shape.rank() != 3) throw ShapeError("window_partition: input must be rank-3, got " + xv.shape.str());
    const int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
    if (H % win != 0 || W % win != 0)
        throw ShapeError("window attention requires spatial size divisible by " + std::to_string(win) + "; got " +
                         std::to_string(H) + "x" + std::to_string(W) + "; pad input to " +
                         std::to_string((H + win - 1) / win * win) + "x" + std::to_string((W + win - 1) / win * win));
    const int wy = H / win, wx = W / win, T = win * win;
    return x.tape->push_op(Shape{wy * wx, T, C}, {x.id},
                           [px = x.id, C, win, wy, wx](Tape<S>& t, int self) {
                               const Tensor<S>& xv = t.value(px);
                               Tensor<S>& out = t.value_mut(self);
                               for (int a = 0; a < wy; ++a)
                                   for (int b = 0; b < wx; ++b)
                                       for (int ty = 0; ty < win; ++ty)
                                           for (int tx = 0; tx < win; ++tx)
                                               for (int c = 0; c < C; ++c)
                                                   out((a * wx + b), ty * win + tx, c) =
                                                       xv(c, a * win + ty, b * win + tx);
                           },
                           [px = x.id, C, win, wy, wx](Tape<S>& t, int self) {
                               const Tensor<S>& g = t.grad(self);
                               Tensor<S>& gx = t.grad(px);
                               for (int a = 0; a < wy; ++a)
                                   for (int b = 0; b < wx; ++b)
                                       for (int ty = 0; ty < win; ++ty)
                                           for (int tx = 0; tx < win; ++tx)
                                               for (int c = 0; c < C; ++c)
                                                   gx(c, a * win + ty, b * win + tx) +=
                                                       g((a * wx + b), ty * win + tx, c);
                           },
                           "window_partition");
}

// Inverse of window_partition.
template <typename S>
Var<S> window_merge(Var<S> x, int C, int H, int W, int win) {
    const Tensor<S>& xv = x.value();
    const int wy = H / win, wx = W / win, T = win * win;
    if (xv.shape.rank() != 3 || xv.shape[0] != wy * wx || xv.shape[1] != T || xv.shape[2] != C)
        throw ShapeError("window_merge: input " + xv.shape.str() + " does not match target (" + std::to_string(C) +
                         "," + std::to_string(H) + "," + std::to_string(W) + ") win=" + std::to_string(win));
    return x.tape->push_op(Shape{C, H, W}, {x.id},
                           [px = x.id, C, win, wy, wx](Tape<S>& t, int self) {
                               const Tensor<S>& xv = t.value(px);
                               Tensor<S>& out = t.value_mut(self);
                               for (int a = 0; a < wy; ++a)
                                   for (int b = 0; b < wx; ++b)
                                       for (int ty = 0; ty < win; ++ty)
                                           for (int tx = 0; tx < win; ++tx)
                                               for (int c = 0; c < C; ++c)
                                                   out(c, a * win + ty, b * win + tx) =
                                                       xv((a * wx + b), ty * win + tx, c);
                           },
                           [px = x.id, C, win, wy, wx](Tape<S>& t, int self) {
                               const Tensor<S>& g = t.grad(self);
                               Tensor<S>& gx = t.grad(px);
                               for (int a = 0; a < wy; ++a)
                                   for (int b = 0; b < wx; ++b)
                                       for (int ty = 0; ty < win; ++ty)
                                           for (int tx = 0; tx < win; ++tx)
                                               for (int c = 0; c < C; ++c)
                                                   gx((a * wx + b), ty * win + tx, c) +=
                                                       g(c, a * win + ty, b * win + tx);
                           },
                           "window_merge");
}

// ---------------------------------------------------------------------------
// Sobel gradients (reflect-101 padding)
// ---------------------------------------------------------------------------

inline int reflect101(int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
}

namespace detail {
inline constexpr int kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
inline constexpr int kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
}  // namespace detail

// (C,H,W) -> (2C,H,W); channel 2c is the x-gradient of channel c, 2c+1 the
// y-gradient. Standard 3x3 Sobel kernels applied as correlation.
template <typename S>
Var<S> sobel_op(Var<S> x) {
    const Tensor<S>& xv = x.value();
    if (xv.shape.rank() != 3) throw ShapeError("sobel: input must be rank-3 (C,H,W), got " + xv.shape.str());
    const int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
    return x.tape->push_op(
        Shape{2 * C, H, W}, {x.id},
        [px = x.id, C, H, W](Tape<S>& t, int self) {
            const Tensor<S>& xv = t.value(px);
            Tensor<S>& out = t.value_mut(self);
            for (int c = 0; c < C; ++c) {
                const S* xp = xv.ptr() + static_cast<std::int64_t>(c) * H * W;
                S* gx = out.ptr() + static_cast<std::int64_t>(2 * c) * H * W;
                S* gy = out.ptr() + static_cast<std::int64_t>(2 * c + 1) * H * W;
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx) {
                        S ax = S(0), ay = S(0);
                        for (int dy = -1; dy <= 1; ++dy) {
                            const int iy = reflect101(y + dy, H);
                            for (int dx = -1; dx <= 1; ++dx) {
                                const int ix = reflect101(xx + dx, W);
                                const S v = xp[iy * W + ix];
                                ax += v * static_cast<S>(detail::kSobelX[dy + 1][dx + 1]);
                                ay += v * static_cast<S>(detail::kSobelY[dy + 1][dx + 1]);
                            }
                        }
                        gx[y * W + xx] = ax;
                        gy[y * W + xx] = ay;
                    }
            }
        },
        [px = x.id, C, H, W](Tape<S>& t, int self) {
            const Tensor<S>& g = t.grad(self);
            Tensor<S>& gin = t.grad(px);
            for (int c = 0; c < C; ++c) {
                const S* ggx = g.ptr() + static_cast<std::int64_t>(2 * c) * H * W;
                const S* ggy = g.ptr() + static_cast<std::int64_t>(2 * c + 1) * H * W;
                S* gp = gin.ptr() + static_cast<std::int64_t>(c) * H * W;
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx) {
                        const S vx = ggx[y * W + xx], vy = ggy[y * W + xx];
                        for (int dy = -1; dy <= 1; ++dy) {
                            const int iy = reflect101(y + dy, H);
                            for (int dx = -1; dx <= 1; ++dx) {
                                const int ix = reflect101(xx + dx, W);
                                gp[iy * W + ix] += vx * static_cast<S>(detail::kSobelX[dy + 1][dx + 1]) +
                                                   vy * static_cast<S>(detail::kSobelY[dy + 1][dx + 1]);
                            }
                        }
                    }
            }
        },
        "sobel");
}

// ---------------------------------------------------------------------------
// Scaled channel-token attention
// ---------------------------------------------------------------------------

template <typename S>
struct AttentionOut {
    Var<S> out;
    Var<S> weights;  // the row-stochastic matrix after softmax
};

// softmax(Q K^T / s) V with channels as tokens and H*W as the token dimension.
// Q/K/V are (C,H,W); s = exp(log_s) > 0 by construction. Output takes V's
// shape.
template <typename S>
AttentionOut<S> scaled_attention(Var<S> q, Var<S> k, Var<S> v, Var<S> log_s) {
    // copies: pushing nodes may reallocate tape storage
    const Shape qs = q.value().shape;
    const Shape ks = k.value().shape;
    const Shape vs = v.value().shape;
    if (qs.rank() != 3 || ks.rank() != 3 || vs.rank() != 3)
        throw ShapeError("scaled_attention: Q/K/V must be rank-3 (C,H,W)");
    const int tq = qs[0], dq = qs[1] * qs[2];
    const int tk = ks[0], dk = ks[1] * ks[2];
    const int tv = vs[0], dv = vs[1] * vs[2];
    if (dq != dk)
        throw ShapeError("scaled_attention: token dimension mismatch between Q and K: " + std::to_string(dq) + " vs " +
                         std::to_string(dk));
    if (tk != tv)
        throw ShapeError("scaled_attention: K tokens " + std::to_string(tk) + " do not match V tokens " +
                         std::to_string(tv));

    Var<S> q2 = reshape(q, Shape{tq, dq});
    Var<S> k2 = reshape(k, Shape{tk, dk});
    Var<S> v2 = reshape(v, Shape{tv, dv});
    Var<S> inv_s = exp_op(neg(log_s));
    Var<S> logits = mul_scalar(matmul(q2, k2, /*trans_b=*/true), inv_s);
    Var<S> attn = softmax_last(logits);
    Var<S> out = matmul(attn, v2);
    return {reshape(out, Shape{tq, vs[1], vs[2]}), attn};
}

// Operator sugar for readable block code.
template <typename S>
Var<S> operator+(Var<S> a, Var<S> b) { return add(a, b); }
template <typename S>
Var<S> operator-(Var<S> a, Var<S> b) { return sub(a, b); }
template <typename S>
Var<S> operator*(Var<S> a, Var<S> b) { return mul(a, b); }

}  // namespace duohdr
