#pragma once

#include "duohdr/fusion.hpp"
#include "duohdr/metrics.hpp"

namespace duohdr {

struct LossHypers {
    double lambda = 0.5;  // single-frame branch weight
    double alpha = 0.2;   // structural term weight
    double beta = 0.5;    // gradient term weight
    double mu = kDefaultMu;
};

struct LossBreakdown {
    double total = 0, lm = 0, ls = 0;
    double lm_re = 0, lm_ssim = 0, lm_grad = 0;
    double ls_re = 0, ls_ssim = 0, ls_grad = 0;
};

// Differentiable SSIM, same windowed definition as the metric.
template <typename S>
Var<S> ssim_graph(Graph<S>& g, Var<S> a, Var<S> b) {
    detail::check_ssim_input(a.value(), b.value());
    const int C = a.value().shape.rank() == 3 ? a.value().shape[0] : 1;
    if (a.value().shape.rank() == 2) {
        a = reshape(a, Shape{1, a.value().shape[0], a.value().shape[1]});
        b = reshape(b, Shape{1, b.value().shape[0], b.value().shape[1]});
    }

    const std::vector<S> k1 = ssim_gaussian_kernel<S>();
    Tensor<S> kt(Shape{C, kSsimWindow, kSsimWindow});
    for (int c = 0; c < C; ++c)
        std::copy(k1.begin(), k1.end(), kt.data.begin() + static_cast<std::int64_t>(c) * k1.size());
    Var<S> kern = g.input(kt);
    Var<S> none{};

    auto blur = [&](Var<S> x) { return depthwise_conv(x, kern, none, /*pad=*/0); };
    Var<S> mu1 = blur(a);
    Var<S> mu2 = blur(b);
    Var<S> s11 = sub(blur(mul(a, a)), mul(mu1, mu1));
    Var<S> s22 = sub(blur(mul(b, b)), mul(mu2, mu2));
    Var<S> s12 = sub(blur(mul(a, b)), mul(mu1, mu2));
    Var<S> num = mul(add_const(mul_const(mul(mu1, mu2), S(2)), S(kSsimC1)),
                     add_const(mul_const(s12, S(2)), S(kSsimC2)));
    Var<S> den = mul(add_const(add(mul(mu1, mu1), mul(mu2, mu2)), S(kSsimC1)),
                     add_const(add(s11, s22), S(kSsimC2)));
    return mean_all(divide(num, den));
}

template <typename S>
struct BranchLoss {
    Var<S> total;
    double re = 0, ssim = 0, grad = 0, value = 0;
};

// L = L_re + alpha * (1 - SSIM) + beta * L_grad, with the reconstruction and
// structural terms in the tone-mapped domain and the gradient term on the
// untouched (clamped) HDR values. All L1 terms are mean-reduced.
template <typename S>
BranchLoss<S> build_branch_loss(Graph<S>& g, Var<S> h, Var<S> gt, const LossHypers& hyp) {
    detail::check_same_shape(h.value(), gt.value(), "loss");
    Var<S> hc = clamp01(h);
    Var<S> gc = clamp01(gt);
    Var<S> th = mu_law_op(hc, static_cast<S>(hyp.mu));
    Var<S> tg = mu_law_op(gc, static_cast<S>(hyp.mu));

    Var<S> re = mean_all(abs_op(sub(th, tg)));
    Var<S> ssim_loss = rsub_const(S(1), ssim_graph(g, th, tg));
    Var<S> grad = mean_all(abs_op(sub(sobel_op(hc), sobel_op(gc))));

    BranchLoss<S> out;
    out.total = add(re, add(mul_const(ssim_loss, static_cast<S>(hyp.alpha)),
                            mul_const(grad, static_cast<S>(hyp.beta))));
    out.re = static_cast<double>(re.value().data[0]);
    out.ssim = static_cast<double>(ssim_loss.value().data[0]);
    out.grad = static_cast<double>(grad.value().data[0]);
    out.value = static_cast<double>(out.total.value().data[0]);
    return out;
}

template <typename S>
struct BuiltLoss {
    Var<S> total;
    LossBreakdown bd;
};

// Total objective: multi-exposure branch loss plus lambda times the
// single-frame branch loss (when that branch exists).
template <typename S>
BuiltLoss<S> build_total_loss(Graph<S>& g, const ForwardOut<S>& fwd, Var<S> gt, const LossHypers& hyp) {
    BuiltLoss<S> out;
    BranchLoss<S> lm = build_branch_loss(g, fwd.hm, gt, hyp);
    out.bd.lm = lm.value;
    out.bd.lm_re = lm.re;
    out.bd.lm_ssim = lm.ssim;
    out.bd.lm_grad = lm.grad;
    if (fwd.has_hs) {
        BranchLoss<S> ls = build_branch_loss(g, fwd.hs, gt, hyp);
        out.bd.ls = ls.value;
        out.bd.ls_re = ls.re;
        out.bd.ls_ssim = ls.ssim;
        out.bd.ls_grad = ls.grad;
        out.total = add(lm.total, mul_const(ls.total, static_cast<S>(hyp.lambda)));
    } else {
        out.total = lm.total;
    }
    out.bd.total = static_cast<double>(out.total.value().data[0]);
    return out;
}

template <typename S>
BuiltLoss<S> build_total_loss(Graph<S>& g, const ForwardOut<S>& fwd, const Tensor<S>& gt, const LossHypers& hyp) {
    return build_total_loss(g, fwd, g.input(gt), hyp);
}

// loss_total on plain images (builds a throwaway graph).
template <typename S>
LossBreakdown loss_total(const Tensor<S>& hm, const Tensor<S>& hs, const Tensor<S>& gt, const LossHypers& hyp) {
    Graph<S> g;
    g.tape.set_recording(false);
    ForwardOut<S> fwd;
    fwd.hm = g.input(hm);
    fwd.hs = g.input(hs);
    fwd.has_hs = true;
    return build_total_loss(g, fwd, g.input(gt), hyp).bd;
}

}  // namespace duohdr
