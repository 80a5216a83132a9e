#pragma once

#include "duohdr/blocks.hpp"
#include "duohdr/imaging.hpp"

namespace duohdr {

// ---------------------------------------------------------------------------
// Multi-scale feature extraction block: 3x3 / 5x5 / 7x7 convs (C channels
// each) plus a pooled branch broadcast back to full resolution; the four maps
// concatenate to 4C channels.
// ---------------------------------------------------------------------------

template <typename S>
Var<S> mfeb(Graph<S>& g, const std::string& prefix, Var<S> x, int C) {
    const int H = x.value().shape[1], W = x.value().shape[2];
    Var<S> m3 = conv_layer(g, prefix + ".k3", x, C, 3);
    Var<S> m5 = conv_layer(g, prefix + ".k5", x, C, 5);
    Var<S> m7 = conv_layer(g, prefix + ".k7", x, C, 7);
    Var<S> pooled = broadcast_hw(conv1x1_layer(g, prefix + ".gap", gap(x), C), H, W);
    return concat_ch(std::vector<Var<S>>{m3, m5, m7, pooled});
}

template <typename S>
struct FusionWeights {
    Var<S> w_ref;     // (2C,H,W)
    Var<S> w_nonref;  // (2C,H,W); w_ref + w_nonref = 1 elementwise
};

template <typename S>
struct FifmOut {
    Var<S> fused;  // (C,H,W)
    FusionWeights<S> weights;
};

// Feature interaction fusion of the reference features with one non-reference
// stream. `branch_ref` / `branch_non` name the two weight-prediction branches;
// tests may pass the same prefix to force identical pre-softmax maps.
template <typename S>
FifmOut<S> interaction_fusion(Graph<S>& g, const std::string& prefix, Var<S> f_ref, Var<S> f_non,
                              const std::string& branch_ref, const std::string& branch_non) {
    detail::check_same_shape(f_ref.value(), f_non.value(), "interaction_fusion");
    const int C = f_ref.value().shape[0];

    auto conv_chain = [&](const std::string& p, Var<S> x) {
        Var<S> h = activate(conv_layer(g, p + ".c1", x, C, 3), Act::LRelu);
        return activate(conv_layer(g, p + ".c2", h, C, 3), Act::LRelu);
    };
    Var<S> ref_conv = conv_chain(prefix + ".ref", f_ref);
    Var<S> non_conv = conv_chain(prefix + ".non", f_non);

    // cross-concatenation: each stream paired with the other's convolved form
    Var<S> cat_ref = concat_ch(f_ref, non_conv);  // 2C
    Var<S> cat_non = concat_ch(f_non, ref_conv);  // 2C

    // weight prediction from the plain concatenation of the inputs
    Var<S> fusion_in = concat_ch(f_ref, f_non);  // 2C
    Var<S> logit_ref = bn_layer(g, branch_ref + ".bn",
                                conv_layer(g, branch_ref + ".head", mfeb(g, branch_ref + ".mfeb", fusion_in, C),
                                           2 * C, 3));
    Var<S> logit_non = bn_layer(g, branch_non + ".bn",
                                conv_layer(g, branch_non + ".head", mfeb(g, branch_non + ".mfeb", fusion_in, C),
                                           2 * C, 3));
    Var<S> map_ref = activate(logit_ref, Act::Sigmoid);
    Var<S> map_non = activate(logit_non, Act::Sigmoid);

    // pairwise softmax across the two maps at each (channel, y, x):
    // w_ref = sigmoid(a - b), w_nonref = 1 - w_ref
    FifmOut<S> out;
    out.weights.w_ref = activate(sub(map_ref, map_non), Act::Sigmoid);
    out.weights.w_nonref = rsub_const(S(1), out.weights.w_ref);
    Var<S> mixed = add(mul(out.weights.w_ref, cat_ref), mul(out.weights.w_nonref, cat_non));
    out.fused = conv1x1_layer(g, prefix + ".out", mixed, C);
    return out;
}

template <typename S>
FifmOut<S> interaction_fusion(Graph<S>& g, const std::string& prefix, Var<S> f_ref, Var<S> f_non) {
    return interaction_fusion(g, prefix, f_ref, f_non, prefix + ".wref", prefix + ".wnon");
}

// Concatenate the two pair-fusion results and reduce to C channels.
template <typename S>
Var<S> fusion_merge(Graph<S>& g, const std::string& prefix, Var<S> f_under, Var<S> f_over, int C) {
    return conv1x1_layer(g, prefix, concat_ch(f_under, f_over), C);
}

// ---------------------------------------------------------------------------
// Ghost suppression: cross-attention with queries from the ghost-free
// single-frame features; keys/values from the fused multi-exposure features
// pass through ReLU / rectified-negative activations so both are nonnegative.
// ---------------------------------------------------------------------------

template <typename S>
struct GsmOut {
    Var<S> out;
    Var<S> k_m, v_m;  // nonnegative activations (probes)
    Var<S> attn;      // row-stochastic attention matrix
};

template <typename S>
GsmOut<S> ghost_suppression(Graph<S>& g, const std::string& prefix, Var<S> f_s, Var<S> f_m_prev,
                            const NetworkConfig& cfg) {
    detail::check_same_shape(f_s.value(), f_m_prev.value(), "ghost_suppression");
    const int C = cfg.channels;
    const int hw = f_s.value().shape[1] * f_s.value().shape[2];

    Var<S> q_s = pw_dw_block(g, prefix + ".q", f_s, C);
    Var<S> k_m = activate(pw_dw_block(g, prefix + ".k", f_m_prev, C), Act::Relu);
    Var<S> v_m = activate(pw_dw_block(g, prefix + ".v", f_m_prev, C), Act::RReluPaper);
    Var<S> k_tilde = conv1x1_layer(g, prefix + ".kc", concat_ch(k_m, v_m), C);

    auto att = scaled_attention(q_s, k_tilde, v_m, log_scale_param(g, prefix + ".log_s", hw));
    Var<S> inner = add(conv1x1_layer(g, prefix + ".attn_out", att.out, C), f_m_prev);

    GsmOut<S> out;
    out.out = conv1x1_layer(g, prefix + ".out", concat_ch(inner, f_s), C);
    out.k_m = k_m;
    out.v_m = v_m;
    out.attn = att.weights;
    return out;
}

// ---------------------------------------------------------------------------
// Full dual-branch forward
// ---------------------------------------------------------------------------

template <typename S>
struct ForwardOut {
    Var<S> hm;                   // multi-exposure HDR output (3,H,W)
    Var<S> hs;                   // single-frame HDR output; invalid when the branch is ablated
    std::vector<Var<S>> levels;  // single-frame per-level features
    bool has_hs = false;
};

// Packed network inputs: one (6,H,W) tensor per exposure plus the (1,H,W)
// enhancement-stop map of the reference frame.
template <typename S>
struct PackedStack {
    Tensor<S> x_under, x_ref, x_over;
    Tensor<S> esi;
};

template <typename S>
PackedStack<S> pack_stack(const ExposureStack<S>& stack, S gamma = S(kDefaultGamma),
                          S esi_clamp = S(kDefaultEsiClamp)) {
    stack.validate();
    PackedStack<S> p;
    p.x_under = pack_input(stack.under, gamma);
    p.x_ref = pack_input(stack.reference, gamma);
    p.x_over = pack_input(stack.over, gamma);
    p.esi = esi_to_tensor(enhancement_stop(stack.reference, esi_clamp));
    return p;
}

template <typename S>
ForwardOut<S> mhdr_forward(Graph<S>& g, const PackedStack<S>& in, const NetworkConfig& cfg) {
    cfg.validate();
    const int C = cfg.channels;

    Var<S> f1 = extract_features(g, "e1", g.input(in.x_under), cfg);
    Var<S> f2 = extract_features(g, "e2", g.input(in.x_ref), cfg);
    Var<S> f3 = extract_features(g, "e3", g.input(in.x_over), cfg);

    ForwardOut<S> out;
    if (cfg.ablation != Ablation::NoShdrEsi) {
        Var<S> esiv = g.input(in.esi);
        Var<S> f2m = extract_features(g, "e4", concat_ch(std::vector<Var<S>>{esiv, esiv, esiv}), cfg);
        SingleFrameOut<S> sf = single_frame_branch(g, f2, f2m, cfg);
        out.levels = sf.levels;
        out.hs = sf.hs;
        out.has_hs = true;
    }

    Var<S> fm0{};
    if (cfg.ablation == Ablation::NoFifm) {
        fm0 = conv1x1_layer(g, "nofifm.fuse", concat_ch(std::vector<Var<S>>{f1, f2, f3}), C);
    } else {
        FifmOut<S> p_under = interaction_fusion(g, "fifm.u", f2, f1);
        FifmOut<S> p_over = interaction_fusion(g, "fifm.o", f2, f3);
        fm0 = fusion_merge(g, "fifm.fuse", p_under.fused, p_over.fused, C);
    }

    Var<S> fm = fm0;
    if (cfg.ablation != Ablation::NoShdrEsi) {
        for (int k = 1; k <= cfg.dem_count; ++k) {
            if (cfg.ablation == Ablation::NoGsm) {
                fm = conv1x1_layer(g, "nogsm" + std::to_string(k) + ".fuse",
                                   concat_ch(fm, out.levels[static_cast<size_t>(k - 1)]), C);
            } else {
                fm = ghost_suppression(g, "gsm" + std::to_string(k), out.levels[static_cast<size_t>(k - 1)], fm, cfg)
                         .out;
            }
        }
    }
    out.hm = reconstruct(g, "recon_m", fm, f2, cfg);
    return out;
}

template <typename S>
ForwardOut<S> mhdr_forward(Graph<S>& g, const ExposureStack<S>& stack, const NetworkConfig& cfg,
                           S gamma = S(kDefaultGamma), S esi_clamp = S(kDefaultEsiClamp)) {
    return mhdr_forward(g, pack_stack(stack, gamma, esi_clamp), cfg);
}

}  // namespace duohdr
