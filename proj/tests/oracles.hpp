// Independent reference implementations used as test oracles. These
// deliberately share no code with the library: plain scalar loops only.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

// Direct-summation convolution, stride 1, zero padding p.
// x: C*H*W, w: O*C*k*k, b: O (may be empty), out: O*H'*W'.
inline std::vector<double> conv2d_direct(const std::vector<double>& x, int C, int H, int W,
                                         const std::vector<double>& w, int O, int k, int p,
                                         const std::vector<double>& b) {
    const int Ho = H + 2 * p - k + 1, Wo = W + 2 * p - k + 1;
    std::vector<double> out(static_cast<size_t>(O) * Ho * Wo, 0.0);
    for (int o = 0; o < O; ++o)
        for (int y = 0; y < Ho; ++y)
            for (int xx = 0; xx < Wo; ++xx) {
                double acc = b.empty() ? 0.0 : b[static_cast<size_t>(o)];
                for (int c = 0; c < C; ++c)
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx) {
                            const int iy = y + dy - p, ix = xx + dx - p;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                            acc += x[(static_cast<size_t>(c) * H + iy) * W + ix] *
                                   w[((static_cast<size_t>(o) * C + c) * k + dy) * k + dx];
                        }
                out[(static_cast<size_t>(o) * Ho + y) * Wo + xx] = acc;
            }
    return out;
}

// softmax(Q K^T / s) V with explicit exp/normalize/matmul loops.
// q: T x D, k: T x D, v: T x D (row-major), returns T x D.
inline std::vector<double> attention_direct(const std::vector<double>& q, const std::vector<double>& k,
                                            const std::vector<double>& v, int T, int D, double s) {
    std::vector<double> logits(static_cast<size_t>(T) * T, 0.0);
    for (int i = 0; i < T; ++i)
        for (int j = 0; j < T; ++j) {
            double acc = 0.0;
            for (int d = 0; d < D; ++d) acc += q[static_cast<size_t>(i) * D + d] * k[static_cast<size_t>(j) * D + d];
            logits[static_cast<size_t>(i) * T + j] = acc / s;
        }
    std::vector<double> attn(static_cast<size_t>(T) * T, 0.0);
    for (int i = 0; i < T; ++i) {
        double mx = logits[static_cast<size_t>(i) * T];
        for (int j = 1; j < T; ++j) mx = std::max(mx, logits[static_cast<size_t>(i) * T + j]);
        double sum = 0.0;
        for (int j = 0; j < T; ++j) {
            attn[static_cast<size_t>(i) * T + j] = std::exp(logits[static_cast<size_t>(i) * T + j] - mx);
            sum += attn[static_cast<size_t>(i) * T + j];
        }
        for (int j = 0; j < T; ++j) attn[static_cast<size_t>(i) * T + j] /= sum;
    }
    std::vector<double> out(static_cast<size_t>(T) * D, 0.0);
    for (int i = 0; i < T; ++i)
        for (int d = 0; d < D; ++d) {
            double acc = 0.0;
            for (int j = 0; j < T; ++j) acc += attn[static_cast<size_t>(i) * T + j] * v[static_cast<size_t>(j) * D + d];
            out[static_cast<size_t>(i) * D + d] = acc;
        }
    return out;
}

// Two-pass per-channel mean and biased variance over (batch x) spatial.
struct Moments {
    std::vector<double> mean, var;
};
inline Moments channel_moments(const std::vector<double>& x, int B, int C, int HW) {
    Moments m;
    m.mean.assign(static_cast<size_t>(C), 0.0);
    m.var.assign(static_cast<size_t>(C), 0.0);
    const std::int64_t n = static_cast<std::int64_t>(B) * HW;
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int b = 0; b < B; ++b)
            for (int i = 0; i < HW; ++i) s += x[(static_cast<size_t>(b) * C + c) * HW + i];
        m.mean[static_cast<size_t>(c)] = s / static_cast<double>(n);
        double v = 0.0;
        for (int b = 0; b < B; ++b)
            for (int i = 0; i < HW; ++i) {
                const double d = x[(static_cast<size_t>(b) * C + c) * HW + i] - m.mean[static_cast<size_t>(c)];
                v += d * d;
            }
        m.var[static_cast<size_t>(c)] = v / static_cast<double>(n);
    }
    return m;
}

// Reference SSIM: per-window Gaussian statistics computed directly at each
// valid window position, channel planes averaged at the end.
inline double ssim_reference(const std::vector<double>& a, const std::vector<double>& b, int C, int H, int W) {
    const int win = 11;
    const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
    std::vector<double> kern(static_cast<size_t>(win) * win);
    double ksum = 0.0;
    for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
            const double d2 = double((y - 5) * (y - 5) + (x - 5) * (x - 5));
            kern[static_cast<size_t>(y) * win + x] = std::exp(-d2 / (2 * sigma * sigma));
            ksum += kern[static_cast<size_t>(y) * win + x];
        }
    for (auto& v : kern) v /= ksum;

    double total = 0.0;
    std::int64_t count = 0;
    for (int c = 0; c < C; ++c)
        for (int y = 0; y + win <= H; ++y)
            for (int x = 0; x + win <= W; ++x) {
                double m1 = 0, m2 = 0, e11 = 0, e22 = 0, e12 = 0;
                for (int dy = 0; dy < win; ++dy)
                    for (int dx = 0; dx < win; ++dx) {
                        const double kv = kern[static_cast<size_t>(dy) * win + dx];
                        const double av = a[(static_cast<size_t>(c) * H + y + dy) * W + x + dx];
                        const double bv = b[(static_cast<size_t>(c) * H + y + dy) * W + x + dx];
                        m1 += kv * av;
                        m2 += kv * bv;
                        e11 += kv * av * av;
                        e22 += kv * bv * bv;
                        e12 += kv * av * bv;
                    }
                const double s11 = e11 - m1 * m1, s22 = e22 - m2 * m2, s12 = e12 - m1 * m2;
                total += ((2 * m1 * m2 + c1) * (2 * s12 + c2)) / ((m1 * m1 + m2 * m2 + c1) * (s11 + s22 + c2));
                ++count;
            }
    return total / static_cast<double>(count);
}

inline double mu_law_ref(double h, double mu) {
    const double x = std::min(std::max(h, 0.0), 1.0);
    return std::log(1.0 + mu * x) / std::log(1.0 + mu);
}

inline double psnr_reference(const std::vector<double>& a, const std::vector<double>& b) {
    double mse = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    return 10.0 * std::log10(1.0 / mse);
}

// Sobel with reflect-101 borders; returns {gx, gy} planes per channel.
inline std::vector<double> sobel_reference(const std::vector<double>& x, int C, int H, int W) {
    auto refl = [](int i, int n) { return i < 0 ? -i : (i >= n ? 2 * n - 2 - i : i); };
    const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    std::vector<double> out(static_cast<size_t>(2 * C) * H * W, 0.0);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                double ax = 0, ay = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const double v = x[(static_cast<size_t>(c) * H + refl(y + dy, H)) * W + refl(xx + dx, W)];
                        ax += v * kx[dy + 1][dx + 1];
                        ay += v * ky[dy + 1][dx + 1];
                    }
                out[(static_cast<size_t>(2 * c) * H + y) * W + xx] = ax;
                out[(static_cast<size_t>(2 * c + 1) * H + y) * W + xx] = ay;
            }
    return out;
}

// One-dimensional Adam reference.
struct AdamScalarRef {
    double m = 0, v = 0;
    long long t = 0;
    double lr, b1, b2, eps;
    AdamScalarRef(double lr_, double b1_, double b2_, double eps_) : lr(lr_), b1(b1_), b2(b2_), eps(eps_) {}
    double step(double theta, double g) {
        ++t;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, static_cast<double>(t)));
        const double vh = v / (1 - std::pow(b2, static_cast<double>(t)));
        return theta - lr * mh / (std::sqrt(vh) + eps);
    }
};

}  // namespace oracle
