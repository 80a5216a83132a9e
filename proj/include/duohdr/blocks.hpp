#pragma once

#include <string>
#include <vector>

#include "duohdr/params.hpp"

namespace duohdr {

enum class Ablation { None, NoSrm, NoMrm, NoFifm, NoGsm, NoShdrEsi };

inline const char* ablation_name(Ablation a) {
    switch (a) {
        case Ablation::None: return "none";
        case Ablation::NoSrm: return "no_srm";
        case Ablation::NoMrm: return "no_mrm";
        case Ablation::NoFifm: return "no_fifm";
        case Ablation::NoGsm: return "no_gsm";
        case Ablation::NoShdrEsi: return "no_shdr_esi";
    }
    return "?";
}

inline Ablation ablation_from_name(std::string_view s) {
    if (s == "none") return Ablation::None;
    if (s == "no_srm") return Ablation::NoSrm;
    if (s == "no_mrm") return Ablation::NoMrm;
    if (s == "no_fifm") return Ablation::NoFifm;
    if (s == "no_gsm") return Ablation::NoGsm;
    if (s == "no_shdr_esi") return Ablation::NoShdrEsi;
    throw ConfigError("unknown ablation switch '" + std::string(s) + "'");
}

struct NetworkConfig {
    int channels = 16;   // feature width C
    int dem_count = 2;   // stacked detail-enhancement levels (= ghost-suppression levels)
    int window = 4;      // window size of the local attention blocks
    Ablation ablation = Ablation::None;

    void validate() const {
        if (channels < 4 || channels % 2 != 0)
            throw ConfigError("channels must be >= 4 and divisible by 2, got " + std::to_string(channels));
        if (dem_count < 1) throw ConfigError("dem_count must be >= 1, got " + std::to_string(dem_count));
        if (window < 1) throw ConfigError("window must be >= 1, got " + std::to_string(window));
    }
};

// Applies one ablation switch to a configuration. One switch at a time:
// applying a second (different) switch is rejected.
inline NetworkConfig ablate(const NetworkConfig& cfg, Ablation sw) {
    if (cfg.ablation != Ablation::None && sw != Ablation::None && sw != cfg.ablation)
        throw ConfigError(std::string("conflicting ablation switches: '") + ablation_name(cfg.ablation) + "' and '" +
                          ablation_name(sw) + "'");
    NetworkConfig out = cfg;
    out.ablation = sw;
    return out;
}

// ---------------------------------------------------------------------------
// Layer helpers (parameter creation + op application)
// ---------------------------------------------------------------------------

template <typename S>
Var<S> conv_layer(Graph<S>& g, const std::string& prefix, Var<S> x, int out_ch, int k) {
    const int in_ch = x.value().shape[0];
    Var<S> w = g.param(prefix + ".w", Shape{out_ch, in_ch, k, k}, Init::FanInNormal, double(in_ch) * k * k);
    Var<S> b = g.param(prefix + ".b", Shape{out_ch}, Init::Zeros);
    return conv2d(x, w, b);
}

template <typename S>
Var<S> conv1x1_layer(Graph<S>& g, const std::string& prefix, Var<S> x, int out_ch) {
    return conv_layer(g, prefix, x, out_ch, 1);
}

template <typename S>
Var<S> dw3_layer(Graph<S>& g, const std::string& prefix, Var<S> x) {
    const int C = x.value().shape[0];
    Var<S> w = g.param(prefix + ".w", Shape{C, 3, 3}, Init::FanInNormal, 9.0);
    Var<S> b = g.param(prefix + ".b", Shape{C}, Init::Zeros);
    return depthwise_conv(x, w, b);
}

template <typename S>
Var<S> ln_layer(Graph<S>& g, const std::string& prefix, Var<S> x) {
    const int C = x.value().shape[0];
    Var<S> ga = g.param(prefix + ".g", Shape{C}, Init::Ones);
    Var<S> be = g.param(prefix + ".b", Shape{C}, Init::Zeros);
    return layer_norm(x, ga, be);
}

template <typename S>
Var<S> bn_layer(Graph<S>& g, const std::string& prefix, Var<S> x) {
    const int C = x.value().shape[0];
    Var<S> ga = g.param(prefix + ".g", Shape{C}, Init::Ones);
    Var<S> be = g.param(prefix + ".b", Shape{C}, Init::Zeros);
    Tensor<S>& rm = g.state(prefix + ".rm", Shape{C}, Init::Zeros);
    Tensor<S>& rv = g.state(prefix + ".rv", Shape{C}, Init::Ones);
    return batch_norm(x, ga, be, rm, rv, g.bn);
}

// Learnable attention temperature, stored as log so s stays positive.
// Initialized to s = sqrt(H*W), keeping initial logits O(1).
template <typename S>
Var<S> log_scale_param(Graph<S>& g, const std::string& name, int hw) {
    return g.param(name, Shape{1}, Init::Const, 0.5 * std::log(static_cast<double>(hw)));
}

// 1x1 conv followed by a 3x3 depthwise conv; the Q/K/V feature extraction
// block shared by the representation modules.
template <typename S>
Var<S> pw_dw_block(Graph<S>& g, const std::string& prefix, Var<S> x, int out_ch) {
    return dw3_layer(g, prefix + ".dw", conv1x1_layer(g, prefix + ".pw", x, out_ch));
}

// Modulation parameter generator: 1x1 conv -> ReLU -> 1x1 conv producing a
// (gamma, beta) pair, each C channels.
template <typename S>
struct ModulationPair {
    Var<S> gamma, beta;
};

template <typename S>
ModulationPair<S> modulation_generator(Graph<S>& g, const std::string& prefix, Var<S> x, int C) {
    Var<S> h = activate(conv1x1_layer(g, prefix + ".c1", x, C), Act::Relu);
    Var<S> gb = conv1x1_layer(g, prefix + ".c2", h, 2 * C);
    return {slice_ch(gb, 0, C), slice_ch(gb, C, C)};
}

// ---------------------------------------------------------------------------
// Simplified local-attention block (window self-attention + channel attention
// + pointwise feed-forward, both residual)
// ---------------------------------------------------------------------------

template <typename S>
Var<S> local_attention_block(Graph<S>& g, const std::string& prefix, Var<S> x, const NetworkConfig& cfg) {
    const int C = x.value().shape[0], H = x.value().shape[1], W = x.value().shape[2];
    const int win = cfg.window;
    Var<S> h = ln_layer(g, prefix + ".ln1", x);

    // window self-attention, single head, fixed 1/sqrt(C) scale
    Var<S> q = window_partition(conv1x1_layer(g, prefix + ".attn.q", h, C), win);
    Var<S> k = window_partition(conv1x1_layer(g, prefix + ".attn.k", h, C), win);
    Var<S> v = window_partition(conv1x1_layer(g, prefix + ".attn.v", h, C), win);
    Var<S> logits = mul_const(matmul(q, k, /*trans_b=*/true), static_cast<S>(1.0 / std::sqrt(double(C))));
    Var<S> attn = matmul(softmax_last(logits), v);
    Var<S> wa = conv1x1_layer(g, prefix + ".attn.proj", window_merge(attn, C, H, W, win), C);

    // channel attention gate
    Var<S> pooled = gap(h);
    Var<S> gate = activate(
        conv1x1_layer(g, prefix + ".ca.fc2",
                      activate(conv1x1_layer(g, prefix + ".ca.fc1", pooled, C / 2), Act::Relu), C),
        Act::Sigmoid);
    Var<S> ca = mul(h, broadcast_hw(gate, H, W));

    Var<S> x1 = add(x, add(wa, ca));

    Var<S> h2 = ln_layer(g, prefix + ".ln2", x1);
    Var<S> ff = conv1x1_layer(g, prefix + ".ffn.fc2",
                              activate(conv1x1_layer(g, prefix + ".ffn.fc1", h2, 2 * C), Act::LRelu), C);
    return add(x1, ff);
}

// Feature extractor: 3x3 conv to C channels, then two local-attention blocks.
template <typename S>
Var<S> extract_features(Graph<S>& g, const std::string& prefix, Var<S> x, const NetworkConfig& cfg) {
    Var<S> f = conv_layer(g, prefix + ".stem", x, cfg.channels, 3);
    f = local_attention_block(g, prefix + ".blk1", f, cfg);
    f = local_attention_block(g, prefix + ".blk2", f, cfg);
    return f;
}

// ---------------------------------------------------------------------------
// Self-representation: cross-keyed attention with dynamic gamma/beta
// modulation of the original features.
// ---------------------------------------------------------------------------

template <typename S>
struct SrmOut {
    Var<S> fx, fm;            // enhanced features
    Var<S> attn_x, attn_m;    // row-stochastic attention matrices (probes)
};

template <typename S>
SrmOut<S> self_representation(Graph<S>& g, const std::string& prefix, Var<S> fx, Var<S> fm) {
    detail::check_same_shape(fx.value(), fm.value(), "self_representation");
    const int C = fx.value().shape[0];
    const int hw = fx.value().shape[1] * fx.value().shape[2];

    Var<S> hx = ln_layer(g, prefix + ".norm_x", fx);
    Var<S> hm = ln_layer(g, prefix + ".norm_m", fm);
    Var<S> qx = pw_dw_block(g, prefix + ".q_x", hx, C);
    Var<S> kx = pw_dw_block(g, prefix + ".k_x", hx, C);
    Var<S> vx = pw_dw_block(g, prefix + ".v_x", hx, C);
    Var<S> qm = pw_dw_block(g, prefix + ".q_m", hm, C);
    Var<S> km = pw_dw_block(g, prefix + ".k_m", hm, C);
    Var<S> vm = pw_dw_block(g, prefix + ".v_m", hm, C);

    // queries from one stream, keys from the other, values from the query's
    // own stream
    auto ax = scaled_attention(qx, km, vx, log_scale_param(g, prefix + ".log_s_x", hw));
    auto am = scaled_attention(qm, kx, vm, log_scale_param(g, prefix + ".log_s_m", hw));
    Var<S> attn_x = conv1x1_layer(g, prefix + ".out_x", ax.out, C);
    Var<S> attn_m = conv1x1_layer(g, prefix + ".out_m", am.out, C);

    ModulationPair<S> mx = modulation_generator(g, prefix + ".mod_x", attn_x, C);
    ModulationPair<S> mm = modulation_generator(g, prefix + ".mod_m", attn_m, C);

    SrmOut<S> out;
    out.fx = add(attn_x, add(mul(fx, mx.gamma), mx.beta));
    out.fm = add(attn_m, add(mul(fm, mm.gamma), mm.beta));
    out.attn_x = ax.weights;
    out.attn_m = am.weights;
    return out;
}

// ---------------------------------------------------------------------------
// Mutual representation: bidirectional transfer; values come from the other
// stream, modulated by gamma/beta generated from the receiving stream's raw
// features, with residual back to the receiver.
// ---------------------------------------------------------------------------

template <typename S>
struct MrmOut {
    Var<S> fx, fm;
    Var<S> attn_x, attn_m;
};

template <typename S>
MrmOut<S> mutual_representation(Graph<S>& g, const std::string& prefix, Var<S> fx, Var<S> fm) {
    detail::check_same_shape(fx.value(), fm.value(), "mutual_representation");
    const int C = fx.value().shape[0];
    const int hw = fx.value().shape[1] * fx.value().shape[2];

    Var<S> hx = ln_layer(g, prefix + ".norm_x", fx);
    Var<S> hm = ln_layer(g, prefix + ".norm_m", fm);
    Var<S> qx = pw_dw_block(g, prefix + ".q_x", hx, C);
    Var<S> kx = pw_dw_block(g, prefix + ".k_x", hx, C);
    Var<S> vx = pw_dw_block(g, prefix + ".v_x", hx, C);
    Var<S> qm = pw_dw_block(g, prefix + ".q_m", hm, C);
    Var<S> km = pw_dw_block(g, prefix + ".k_m", hm, C);
    Var<S> vm = pw_dw_block(g, prefix + ".v_m", hm, C);

    ModulationPair<S> mx = modulation_generator(g, prefix + ".mod_x", fx, C);
    ModulationPair<S> mm = modulation_generator(g, prefix + ".mod_m", fm, C);

    auto ax = scaled_attention(qx, km, add(mul(vm, mx.gamma), mx.beta),
                               log_scale_param(g, prefix + ".log_s_x", hw));
    auto am = scaled_attention(qm, kx, add(mul(vx, mm.gamma), mm.beta),
                               log_scale_param(g, prefix + ".log_s_m", hw));

    MrmOut<S> out;
    out.fx = add(conv1x1_layer(g, prefix + ".out_x", ax.out, C), fx);
    out.fm = add(conv1x1_layer(g, prefix + ".out_m", am.out, C), fm);
    out.attn_x = ax.weights;
    out.attn_m = am.weights;
    return out;
}

// ---------------------------------------------------------------------------
// Detail enhancement level: SRM + MRM outputs aggregated spatially and fused
// back with the reference features.
// ---------------------------------------------------------------------------

template <typename S>
Var<S> detail_enhancement(Graph<S>& g, const std::string& prefix, Var<S> f_in, Var<S> fm, Var<S> f_ref,
                          const NetworkConfig& cfg) {
    std::vector<Var<S>> parts;
    if (cfg.ablation != Ablation::NoSrm) {
        SrmOut<S> s = self_representation(g, prefix + ".srm", f_in, fm);
        parts.push_back(s.fx);
        parts.push_back(s.fm);
    }
    if (cfg.ablation != Ablation::NoMrm) {
        MrmOut<S> m = mutual_representation(g, prefix + ".mrm", f_in, fm);
        parts.push_back(m.fx);
        parts.push_back(m.fm);
    }
    Var<S> cat = concat_ch(parts);
    Var<S> agg = conv_layer(g, prefix + ".er.c2",
                            activate(conv_layer(g, prefix + ".er.c1", cat, cfg.channels, 3), Act::LRelu),
                            cfg.channels, 3);
    return conv1x1_layer(g, prefix + ".out", concat_ch(agg, f_ref), cfg.channels);
}

// ---------------------------------------------------------------------------
// Reconstruction network: fuse-in conv, three chains of three residual blocks,
// output conv + sigmoid.
// ---------------------------------------------------------------------------

template <typename S>
Var<S> reconstruct(Graph<S>& g, const std::string& prefix, Var<S> f, Var<S> f_ref, const NetworkConfig& cfg) {
    detail::check_same_shape(f.value(), f_ref.value(), "reconstruct");
    Var<S> x = conv1x1_layer(g, prefix + ".in", concat_ch(f, f_ref), cfg.channels);
    for (int s = 1; s <= 3; ++s)
        for (int r = 1; r <= 3; ++r) {
            const std::string rp = prefix + ".sub" + std::to_string(s) + ".res" + std::to_string(r);
            Var<S> h = conv_layer(g, rp + ".c2",
                                  activate(conv_layer(g, rp + ".c1", x, cfg.channels, 3), Act::LRelu),
                                  cfg.channels, 3);
            x = add(x, h);
        }
    return activate(conv_layer(g, prefix + ".out", x, 3, 3), Act::Sigmoid);
}

// ---------------------------------------------------------------------------
// Single-frame branch
// ---------------------------------------------------------------------------

template <typename S>
struct SingleFrameOut {
    std::vector<Var<S>> levels;  // per-level aggregated features
    Var<S> hs;                   // single-frame HDR output, (3,H,W) in (0,1)
};

template <typename S>
SingleFrameOut<S> single_frame_branch(Graph<S>& g, Var<S> f_ref, Var<S> f_esi, const NetworkConfig& cfg) {
    SingleFrameOut<S> out;
    Var<S> f = f_ref;
    for (int k = 1; k <= cfg.dem_count; ++k) {
        f = detail_enhancement(g, "dem" + std::to_string(k), f, f_esi, f_ref, cfg);
        out.levels.push_back(f);
    }
    out.hs = reconstruct(g, "recon_s", out.levels.back(), f_ref, cfg);
    return out;
}

// Full single-frame forward from a packed reference input and an ESI map.
template <typename S>
SingleFrameOut<S> shdr_forward(Graph<S>& g, const Tensor<S>& x2, const Tensor<S>& esi, const NetworkConfig& cfg) {
    cfg.validate();
    Var<S> x2v = g.input(x2);
    Var<S> esiv = g.input(esi);
    Var<S> esi3 = concat_ch(std::vector<Var<S>>{esiv, esiv, esiv});
    Var<S> f2 = extract_features(g, "e2", x2v, cfg);
    Var<S> f2m = extract_features(g, "e4", esi3, cfg);
    return single_frame_branch(g, f2, f2m, cfg);
}

}  // namespace duohdr
