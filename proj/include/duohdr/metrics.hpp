#pragma once

#include <cmath>
#include <limits>

#include "duohdr/imaging.hpp"

namespace duohdr {

// SSIM constants: reference values (Wang et al. defaults), dynamic range 1.
constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;  // (K1*L)^2
constexpr double kSsimC2 = 0.03 * 0.03;  // (K2*L)^2

template <typename S>
std::vector<S> ssim_gaussian_kernel() {
    std::vector<S> k(kSsimWindow * kSsimWindow);
    const int r = kSsimWindow / 2;
    double sum = 0.0;
    for (int y = 0; y < kSsimWindow; ++y)
        for (int x = 0; x < kSsimWindow; ++x) {
            const double d2 = double((y - r) * (y - r) + (x - r) * (x - r));
            const double v = std::exp(-d2 / (2.0 * kSsimSigma * kSsimSigma));
            k[static_cast<size_t>(y) * kSsimWindow + x] = static_cast<S>(v);
            sum += v;
        }
    for (auto& v : k) v = static_cast<S>(static_cast<double>(v) / sum);
    return k;
}

namespace detail {

template <typename S>
void check_ssim_input(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape != b.shape) throw ShapeError("ssim: shapes differ: " + a.shape.str() + " vs " + b.shape.str());
    const int rank = a.shape.rank();
    if (rank != 2 && rank != 3) throw ShapeError("ssim: expected (H,W) or (C,H,W), got " + a.shape.str());
    const int H = a.shape[rank - 2], W = a.shape[rank - 1];
    if (H < kSsimWindow || W < kSsimWindow)
        throw ShapeError("ssim: image " + std::to_string(H) + "x" + std::to_string(W) + " smaller than the " +
                         std::to_string(kSsimWindow) + "x" + std::to_string(kSsimWindow) + " window");
    if (rank == 3 && a.shape[0] != 1 && a.shape[0] != 3)
        throw ShapeError("ssim: expected 1 or 3 channels, got " + std::to_string(a.shape[0]));
}

// Valid-region blur of one channel plane, matching depthwise_conv's
// accumulation order so metric and loss agree to rounding.
template <typename S>
void blur_valid(const S* x, int H, int W, const std::vector<S>& k, S* out) {
    const int kw = kSsimWindow;
    const int Ho = H - kw + 1, Wo = W - kw + 1;
    for (int y = 0; y < Ho; ++y)
        for (int xx = 0; xx < Wo; ++xx) {
            S acc = S(0);
            for (int dy = 0; dy < kw; ++dy)
                for (int dx = 0; dx < kw; ++dx) acc += x[(y + dy) * W + (xx + dx)] * k[static_cast<size_t>(dy) * kw + dx];
            out[y * Wo + xx] = acc;
        }
}

}  // namespace detail

// Mean SSIM over the valid region (and channels). ssim(a,a) == 1 exactly.
template <typename S>
double ssim(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_ssim_input(a, b);
    const int rank = a.shape.rank();
    const int C = rank == 3 ? a.shape[0] : 1;
    const int H = a.shape[rank - 2], W = a.shape[rank - 1];
    const int Ho = H - kSsimWindow + 1, Wo = W - kSsimWindow + 1;
    const std::vector<S> kern = ssim_gaussian_kernel<S>();

    std::vector<S> aa(static_cast<size_t>(H) * W), bb(static_cast<size_t>(H) * W), ab(static_cast<size_t>(H) * W);
    std::vector<S> mu1(static_cast<size_t>(Ho) * Wo), mu2(mu1.size()), baa(mu1.size()), bbb(mu1.size()), bab(mu1.size());
    std::vector<S> map(static_cast<size_t>(C) * Ho * Wo);

    for (int c = 0; c < C; ++c) {
        const S* ap = a.ptr() + static_cast<std::int64_t>(c) * H * W;
        const S* bp = b.ptr() + static_cast<std::int64_t>(c) * H * W;
        for (int i = 0; i < H * W; ++i) {
            aa[static_cast<size_t>(i)] = ap[i] * ap[i];
            bb[static_cast<size_t>(i)] = bp[i] * bp[i];
            ab[static_cast<size_t>(i)] = ap[i] * bp[i];
        }
        detail::blur_valid(ap, H, W, kern, mu1.data());
        detail::blur_valid(bp, H, W, kern, mu2.data());
        detail::blur_valid(aa.data(), H, W, kern, baa.data());
        detail::blur_valid(bb.data(), H, W, kern, bbb.data());
        detail::blur_valid(ab.data(), H, W, kern, bab.data());
        S* mp = map.data() + static_cast<std::int64_t>(c) * Ho * Wo;
        for (int i = 0; i < Ho * Wo; ++i) {
            const S m1 = mu1[static_cast<size_t>(i)], m2 = mu2[static_cast<size_t>(i)];
            const S s11 = baa[static_cast<size_t>(i)] - m1 * m1;
            const S s22 = bbb[static_cast<size_t>(i)] - m2 * m2;
            const S s12 = bab[static_cast<size_t>(i)] - m1 * m2;
            const S num = (S(2) * (m1 * m2) + S(kSsimC1)) * (S(2) * s12 + S(kSsimC2));
            const S den = (m1 * m1 + m2 * m2 + S(kSsimC1)) * (s11 + s22 + S(kSsimC2));
            mp[i] = num / den;
        }
    }
    S sum = S(0);
    for (S v : map) sum += v;
    return static_cast<double>(sum) / static_cast<double>(map.size());
}

enum class PsnrMode { Linear, Mu };

// 10*log10(1/MSE) for images in [0,1]; identical inputs report +infinity, a
// sentinel distinct from any finite dB value.
template <typename S>
double psnr(const Tensor<S>& a, const Tensor<S>& b, PsnrMode mode = PsnrMode::Linear, S mu = S(kDefaultMu)) {
    if (a.shape != b.shape) throw ShapeError("psnr: shapes differ: " + a.shape.str() + " vs " + b.shape.str());
    double mse = 0.0;
    if (mode == PsnrMode::Mu) {
        for (std::int64_t i = 0; i < a.numel(); ++i) {
            const double d = static_cast<double>(mu_law_scalar(a.data[static_cast<size_t>(i)], mu)) -
                             static_cast<double>(mu_law_scalar(b.data[static_cast<size_t>(i)], mu));
            mse += d * d;
        }
    } else {
        for (std::int64_t i = 0; i < a.numel(); ++i) {
            const double d = static_cast<double>(a.data[static_cast<size_t>(i)]) -
                             static_cast<double>(b.data[static_cast<size_t>(i)]);
            mse += d * d;
        }
    }
    mse /= static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

struct MetricSet {
    double psnr_l = 0, psnr_mu = 0, ssim_l = 0, ssim_mu = 0;
};

template <typename S>
MetricSet evaluate_metrics(const Tensor<S>& out, const Tensor<S>& gt, S mu = S(kDefaultMu)) {
    MetricSet m;
    m.psnr_l = psnr(out, gt, PsnrMode::Linear);
    m.psnr_mu = psnr(out, gt, PsnrMode::Mu, mu);
    m.ssim_l = ssim(out, gt);
    m.ssim_mu = ssim(mu_law(out, mu), mu_law(gt, mu));
    return m;
}

}  // namespace duohdr
