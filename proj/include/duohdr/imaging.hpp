#pragma once

#include <cmath>

#include "duohdr/tensor.hpp"

namespace duohdr {

constexpr double kDefaultGamma = 2.2;
constexpr double kDefaultMu = 5000.0;
constexpr double kDefaultEsiClamp = 1.0;

// Interleaved H x W x C image, values in scene units (LDR in [0,1], HDR
// nonnegative linear radiance).
template <typename S>
struct Image {
    int h = 0, w = 0, c = 0;
    std::vector<S> px;  // (y*w + x)*c + ch

    Image() = default;
    Image(int h_, int w_, int c_, S fill = S(0)) : h(h_), w(w_), c(c_), px(static_cast<size_t>(h_) * w_ * c_, fill) {}

    S& at(int y, int x, int ch) { return px[(static_cast<size_t>(y) * w + x) * c + ch]; }
    S at(int y, int x, int ch) const { return px[(static_cast<size_t>(y) * w + x) * c + ch]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(h) * w * c; }
};

template <typename S>
struct LdrImage {
    Image<S> img;         // H x W x 3 in [0,1]
    S exposure_time = 1;  // t > 0, relative scale
    S ev = 0;

    void validate() const {
        if (img.c != 3) throw ShapeError("LDR image must have 3 channels, got " + std::to_string(img.c));
        if (!(exposure_time > S(0))) throw ShapeError("exposure time must be positive");
        for (S v : img.px)
            if (!(v >= S(0) && v <= S(1))) throw ShapeError("LDR pixel outside [0,1]");
    }
};

template <typename S>
struct HdrImage {
    Image<S> img;  // H x W x 3, nonnegative
};

template <typename S>
struct EsiImage {
    int h = 0, w = 0;
    std::vector<S> v;  // H x W in [0,1]
    S clamp_c = S(kDefaultEsiClamp);

    S at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

// Three LDR exposures, middle one is the reference.
template <typename S>
struct ExposureStack {
    LdrImage<S> under, reference, over;
    static constexpr int kReferenceIndex = 1;

    void validate() const {
        under.validate();
        reference.validate();
        over.validate();
        if (under.img.h != reference.img.h || under.img.w != reference.img.w || over.img.h != reference.img.h ||
            over.img.w != reference.img.w)
            throw ShapeError("exposure stack images must share HxW");
        if (!(under.exposure_time < reference.exposure_time && reference.exposure_time < over.exposure_time))
            throw ShapeError("exposure times must be strictly increasing");
    }
};

// H = L^gamma / t, elementwise.
template <typename S>
HdrImage<S> gamma_correct(const LdrImage<S>& L, S gamma = S(kDefaultGamma)) {
    if (!(L.exposure_time > S(0))) throw ShapeError("gamma_correct: exposure time must be positive");
    HdrImage<S> out;
    out.img = Image<S>(L.img.h, L.img.w, L.img.c);
    for (std::int64_t i = 0; i < L.img.numel(); ++i)
        out.img.px[static_cast<size_t>(i)] =
            static_cast<S>(std::pow(static_cast<double>(L.img.px[static_cast<size_t>(i)]), static_cast<double>(gamma))) /
            L.exposure_time;
    return out;
}

// ---------------------------------------------------------------------------
// IPT color space
// ---------------------------------------------------------------------------

namespace ipt {

// sRGB linearization -> XYZ(D65) -> Hunt-Pointer-Estevez LMS normalized so
// that D65 white maps to (1,1,1) -> sign-preserving |v|^0.43 -> IPT. The P and
// T rows sum to zero, so achromatic input gives P = T = 0 exactly.
inline const Eigen::Matrix3d& srgb_to_xyz() {
    static const Eigen::Matrix3d m = (Eigen::Matrix3d() << 0.4124564, 0.3575761, 0.1804375,
                                      0.2126729, 0.7151522, 0.0721750,
                                      0.0193339, 0.1191920, 0.9503041)
                                         .finished();
    return m;
}

inline const Eigen::Matrix3d& xyz_to_lms() {
    static const Eigen::Matrix3d m = [] {
        Eigen::Matrix3d hpe;
        hpe << 0.4002, 0.7076, -0.0808,
            -0.2263, 1.1653, 0.0457,
            0.0, 0.0, 0.9182;
        const Eigen::Vector3d white = srgb_to_xyz() * Eigen::Vector3d::Ones();
        const Eigen::Vector3d lms_w = hpe * white;
        for (int r = 0; r < 3; ++r) hpe.row(r) /= lms_w(r);
        return hpe;
    }();
    return m;
}

inline const Eigen::Matrix3d& lms_to_ipt() {
    static const Eigen::Matrix3d m = (Eigen::Matrix3d() << 0.4000, 0.4000, 0.2000,
                                      4.4550, -4.8510, 0.3960,
                                      0.8056, 0.3572, -1.1628)
                                         .finished();
    return m;
}

inline double srgb_linearize(double c) {
    c = std::clamp(c, 0.0, 1.0);
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline Eigen::Vector3d rgb_to_ipt_pixel(double r, double g, double b) {
    const Eigen::Vector3d lin(srgb_linearize(r), srgb_linearize(g), srgb_linearize(b));
    const Eigen::Vector3d xyz = srgb_to_xyz() * lin;
    Eigen::Vector3d lms = xyz_to_lms() * xyz;
    for (int i = 0; i < 3; ++i) {
        const double v = lms(i);
        lms(i) = std::copysign(std::pow(std::abs(v), 0.43), v);
    }
    return lms_to_ipt() * lms;
}

}  // namespace ipt

template <typename S>
Image<S> rgb_to_ipt(const Image<S>& rgb) {
    if (rgb.c != 3) throw ShapeError("rgb_to_ipt: expected 3 channels, got " + std::to_string(rgb.c));
    Image<S> out(rgb.h, rgb.w, 3);
    for (int y = 0; y < rgb.h; ++y)
        for (int x = 0; x < rgb.w; ++x) {
            const Eigen::Vector3d p = ipt::rgb_to_ipt_pixel(static_cast<double>(rgb.at(y, x, 0)),
                                                            static_cast<double>(rgb.at(y, x, 1)),
                                                            static_cast<double>(rgb.at(y, x, 2)));
            out.at(y, x, 0) = static_cast<S>(p(0));
            out.at(y, x, 1) = static_cast<S>(p(1));
            out.at(y, x, 2) = static_cast<S>(p(2));
        }
    return out;
}

// Per-pixel chroma magnitude in IPT, clamped: 1 where sqrt(P^2+T^2) >= c.
template <typename S>
S esi_from_pt(S p, S t, S c = S(kDefaultEsiClamp)) {
    const S v = static_cast<S>(std::hypot(static_cast<double>(p), static_cast<double>(t)));
    return v >= c ? S(1) : v;
}

template <typename S>
EsiImage<S> enhancement_stop(const LdrImage<S>& L2, S c = S(kDefaultEsiClamp)) {
    const Image<S> ipt_img = rgb_to_ipt(L2.img);
    EsiImage<S> out;
    out.h = L2.img.h;
    out.w = L2.img.w;
    out.clamp_c = c;
    out.v.resize(static_cast<size_t>(out.h) * out.w);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            out.v[static_cast<size_t>(y) * out.w + x] = esi_from_pt(ipt_img.at(y, x, 1), ipt_img.at(y, x, 2), c);
    return out;
}

// ---------------------------------------------------------------------------
// Tone mapping and image-domain helpers (non-autodiff versions)
// ---------------------------------------------------------------------------

template <typename S>
S mu_law_scalar(S h, S mu = S(kDefaultMu)) {
    const double x = std::clamp(static_cast<double>(h), 0.0, 1.0);
    return static_cast<S>(std::log1p(static_cast<double>(mu) * x) / std::log1p(static_cast<double>(mu)));
}

template <typename S>
Tensor<S> mu_law(const Tensor<S>& h, S mu = S(kDefaultMu)) {
    Tensor<S> out = h;
    for (auto& v : out.data) v = mu_law_scalar(v, mu);
    return out;
}

template <typename S>
Image<S> mu_law(const Image<S>& h, S mu = S(kDefaultMu)) {
    Image<S> out = h;
    for (auto& v : out.px) v = mu_law_scalar(v, mu);
    return out;
}

// Plain Sobel on an interleaved H x W x C image -> H x W x 2C
// ([gx,gy] per source channel), reflect-101 borders.
template <typename S>
Image<S> sobel_grad(const Image<S>& img) {
    static const int KX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    static const int KY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    Image<S> out(img.h, img.w, 2 * img.c);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < img.c; ++ch) {
                S ax = S(0), ay = S(0);
                for (int dy = -1; dy <= 1; ++dy) {
                    const int iy = reflect101(y + dy, img.h);
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ix = reflect101(x + dx, img.w);
                        const S v = img.at(iy, ix, ch);
                        ax += v * static_cast<S>(KX[dy + 1][dx + 1]);
                        ay += v * static_cast<S>(KY[dy + 1][dx + 1]);
                    }
                }
                out.at(y, x, 2 * ch) = ax;
                out.at(y, x, 2 * ch + 1) = ay;
            }
    return out;
}

// Interleaved H x W x C -> planar (C,H,W) tensor and back.
template <typename S>
Tensor<S> to_planar(const Image<S>& img) {
    Tensor<S> t(Shape{img.c, img.h, img.w});
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < img.c; ++ch) t(ch, y, x) = img.at(y, x, ch);
    return t;
}

template <typename S>
Image<S> to_interleaved(const Tensor<S>& t) {
    if (t.shape.rank() != 3) throw ShapeError("to_interleaved: expected rank-3 tensor, got " + t.shape.str());
    Image<S> img(t.shape[1], t.shape[2], t.shape[0]);
    for (int ch = 0; ch < img.c; ++ch)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) img.at(y, x, ch) = t(ch, y, x);
    return img;
}

// Network input: channels 0-2 the LDR image, channels 3-5 its gamma-corrected
// HDR-domain version.
template <typename S>
Tensor<S> pack_input(const LdrImage<S>& L, S gamma = S(kDefaultGamma)) {
    const HdrImage<S> H = gamma_correct(L, gamma);
    Tensor<S> t(Shape{6, L.img.h, L.img.w});
    for (int y = 0; y < L.img.h; ++y)
        for (int x = 0; x < L.img.w; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                t(ch, y, x) = L.img.at(y, x, ch);
                t(ch + 3, y, x) = H.img.at(y, x, ch);
            }
    return t;
}

// ESI as a (1,H,W) tensor.
template <typename S>
Tensor<S> esi_to_tensor(const EsiImage<S>& e) {
    Tensor<S> t(Shape{1, e.h, e.w});
    std::copy(e.v.begin(), e.v.end(), t.data.begin());
    return t;
}

}  // namespace duohdr
