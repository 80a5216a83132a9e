#pragma once

#include "duohdr/imaging.hpp"

namespace duohdr {

// Reference exposure time. The normalized ground-truth radiance is in [0,1]
// with the light source near 1, so the mid exposure needs t > 1 to expose the
// background well while clipping the source.
constexpr double kSynthRefExposure = 4.0;

template <typename S>
struct SynthScene {
    ExposureStack<S> stack;
    HdrImage<S> ground_truth;          // the reference-position radiance, in [0,1]
    std::vector<std::uint8_t> motion_mask;  // H*W, 1 where the foreground moved
    int mask_count = 0;
};

struct SynthOptions {
    int height = 32, width = 32;
    int motion_px = 3;
    double ev_step = 2.0;
    bool quantize = true;  // 8-bit quantization of the LDR frames
};

// Procedural dynamic scene: a smooth colored background, a bright light source
// exceeding the LDR range, and a textured foreground patch that translates
// horizontally between exposures. Fully deterministic in the seed.
template <typename S>
SynthScene<S> synth_scene(std::uint64_t seed, const SynthOptions& opt) {
    const int H = opt.height, W = opt.width;
    if (H < 32 || W < 32) throw ConfigError("synth_scene: size must be at least 32x32");
    if (opt.motion_px < 0) throw ConfigError("synth_scene: motion_px must be >= 0");
    Rng rng(mix64(seed, 0x5ce9e5));

    // background: low-frequency gradient + sinusoid, per-channel tint
    std::array<double, 3> base{}, gx{}, gy{}, amp{}, ph{};
    for (int c = 0; c < 3; ++c) {
        base[c] = rng.uniform(0.06, 0.14);
        gx[c] = rng.uniform(-0.04, 0.08);
        gy[c] = rng.uniform(-0.04, 0.08);
        amp[c] = rng.uniform(0.01, 0.05);
        ph[c] = rng.uniform(0.0, 2.0 * M_PI);
    }
    const double fx = rng.uniform(1.0, 3.0), fy = rng.uniform(1.0, 3.0);

    // light source: bright blob, warm tint, clipped in every exposure core
    const double lcx = rng.uniform(0.25, 0.75) * W;
    const double lcy = rng.uniform(0.15, 0.45) * H;
    const double lsigma = rng.uniform(0.10, 0.16) * std::min(H, W);
    const std::array<double, 3> ltint{1.0, rng.uniform(0.88, 0.98), rng.uniform(0.75, 0.92)};

    Image<S> background(H, W, 3);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double d2 = (x - lcx) * (x - lcx) + (y - lcy) * (y - lcy);
            const double blob = std::exp(-d2 / (2.0 * lsigma * lsigma));
            for (int c = 0; c < 3; ++c) {
                double v = base[c] + gx[c] * (double(x) / W) + gy[c] * (double(y) / H) +
                           amp[c] * std::sin(2.0 * M_PI * (fx * x / W + fy * y / H) + ph[c]);
                v = std::clamp(v, 0.02, 0.35) + ltint[c] * blob;
                background.at(y, x, c) = static_cast<S>(std::min(v, 1.0));
            }
        }

    // foreground patch texture (moves with the object)
    const int ph_px = std::max(6, H / 4), pw_px = std::max(6, W / 4);
    Image<S> tex(ph_px, pw_px, 3);
    const std::array<double, 3> tint{rng.uniform(0.7, 1.0), rng.uniform(0.7, 1.0), rng.uniform(0.7, 1.0)};
    for (int y = 0; y < ph_px; ++y)
        for (int x = 0; x < pw_px; ++x) {
            const double checker = ((x / 2 + y / 2) % 2 == 0) ? 1.0 : 0.0;
            const double wave = 0.5 + 0.5 * std::sin(2.0 * M_PI * (2.0 * x / pw_px + 1.0 * y / ph_px));
            const double noise = rng.uniform(-0.015, 0.015);
            for (int c = 0; c < 3; ++c)
                tex.at(y, x, c) = static_cast<S>(std::clamp(tint[c] * (0.10 + 0.10 * checker + 0.06 * wave) + noise, 0.02, 0.35));
        }

    // patch placement; the trajectory (x0 - m, x0, x0 + m) must stay in frame
    const int m = opt.motion_px;
    const int y0_min = H / 2, y0_max = H - ph_px - 1;
    const int x0_min = m, x0_max = W - pw_px - m;
    if (y0_max < y0_min || x0_max < x0_min)
        throw ConfigError("synth_scene: foreground patch leaves the frame (motion " + std::to_string(m) +
                          " too large for " + std::to_string(H) + "x" + std::to_string(W) + ")");
    const int py0 = y0_min + rng.next_int(y0_max - y0_min + 1);
    const int px0 = x0_min + rng.next_int(x0_max - x0_min + 1);
    const std::array<int, 3> frame_px{px0 - m, px0, px0 + m};

    auto render_radiance = [&](int patch_x) {
        Image<S> r = background;
        for (int y = 0; y < ph_px; ++y)
            for (int x = 0; x < pw_px; ++x)
                for (int c = 0; c < 3; ++c) r.at(py0 + y, patch_x + x, c) = tex.at(y, x, c);
        return r;
    };

    auto expose = [&](const Image<S>& radiance, double t) {
        Image<S> frame(H, W, 3);
        for (std::int64_t i = 0; i < radiance.numel(); ++i) {
            double v = std::clamp(static_cast<double>(radiance.px[static_cast<size_t>(i)]) * t, 0.0, 1.0);
            v = std::pow(v, 1.0 / kDefaultGamma);
            if (opt.quantize) v = std::round(v * 255.0) / 255.0;
            frame.px[static_cast<size_t>(i)] = static_cast<S>(v);
        }
        return frame;
    };

    SynthScene<S> scene;
    const std::array<double, 3> evs{-opt.ev_step, 0.0, opt.ev_step};
    LdrImage<S>* frames[3] = {&scene.stack.under, &scene.stack.reference, &scene.stack.over};
    for (int i = 0; i < 3; ++i) {
        const double t = kSynthRefExposure * std::pow(2.0, evs[static_cast<size_t>(i)]);
        frames[i]->img = expose(render_radiance(frame_px[static_cast<size_t>(i)]), t);
        frames[i]->exposure_time = static_cast<S>(t);
        frames[i]->ev = static_cast<S>(evs[static_cast<size_t>(i)]);
    }
    scene.ground_truth.img = render_radiance(frame_px[1]);

    // moved pixels: covered by the patch in some frames but not all
    scene.motion_mask.assign(static_cast<size_t>(H) * W, 0);
    if (m > 0) {
        auto covered = [&](int fx0, int y, int x) {
            return y >= py0 && y < py0 + ph_px && x >= fx0 && x < fx0 + pw_px;
        };
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                int cnt = 0;
                for (int i = 0; i < 3; ++i) cnt += covered(frame_px[static_cast<size_t>(i)], y, x) ? 1 : 0;
                if (cnt > 0 && cnt < 3) {
                    scene.motion_mask[static_cast<size_t>(y) * W + x] = 1;
                    ++scene.mask_count;
                }
            }
    }
    scene.stack.validate();
    return scene;
}

template <typename S>
SynthScene<S> synth_scene(std::uint64_t seed, int size, int motion_px, double ev_step = 2.0) {
    SynthOptions opt;
    opt.height = size;
    opt.width = size;
    opt.motion_px = motion_px;
    opt.ev_step = ev_step;
    return synth_scene<S>(seed, opt);
}

}  // namespace duohdr
