#pragma once

#include <atomic>
#include <chrono>
#include <thread>

#include "duohdr/gradcheck.hpp"
#include "duohdr/loss.hpp"

namespace duohdr {

struct VerifyOptions {
    int seeds = 10;
    double tol = 1e-4;
    double eps = 1e-5;
    bool include_branches = true;
    bool include_ablations = true;
    int threads = 0;  // 0 = hardware concurrency
};

struct CheckResult {
    std::string name;
    double max_rel_err = 0.0;
    std::string worst;
    std::int64_t elements = 0;
    double seconds = 0.0;
    bool pass = false;
};

namespace verify_detail {

template <typename S>
Tensor<S> rand_t(Rng& rng, const Shape& sh, double scale = 1.0) {
    return random_tensor<S>(sh, rng, scale);
}

// Random tensor with |x| >= floor; keeps kinked activations (relu family,
// abs) away from the eps neighborhood of zero where central differences are
// meaningless.
template <typename S>
Tensor<S> rand_nudged(Rng& rng, const Shape& sh, double floor_abs) {
    Tensor<S> t(sh);
    for (auto& v : t.data) {
        double x = rng.normal();
        v = static_cast<S>(std::copysign(std::abs(x) + floor_abs, x));
    }
    return t;
}

template <typename S>
Tensor<S> rand_uniform(Rng& rng, const Shape& sh, double lo, double hi) {
    Tensor<S> t(sh);
    for (auto& v : t.data) v = static_cast<S>(rng.uniform(lo, hi));
    return t;
}

// Scalar probe functional: mean(out * r) with fixed random r.
template <typename S>
Var<S> probe_loss(Graph<S>& g, Var<S> out, Rng& rng) {
    return mean_all(mul(out, g.input(rand_t<S>(rng, out.value().shape))));
}

using Builder = std::function<double(std::uint64_t seed, double eps)>;

template <typename S>
ExposureStack<S> random_stack(Rng& rng, int h, int w) {
    ExposureStack<S> st;
    LdrImage<S>* frames[3] = {&st.under, &st.reference, &st.over};
    const double times[3] = {1.0, 4.0, 16.0};
    for (int i = 0; i < 3; ++i) {
        frames[i]->img = Image<S>(h, w, 3);
        for (auto& v : frames[i]->img.px) v = static_cast<S>(rng.uniform(0.02, 0.98));
        frames[i]->exposure_time = static_cast<S>(times[i]);
        frames[i]->ev = static_cast<S>(2.0 * (i - 1));
    }
    return st;
}

}  // namespace verify_detail

// ---------------------------------------------------------------------------
// Individual checks. Each returns the max relative error over one seed.
// ---------------------------------------------------------------------------

template <typename S = double>
double check_conv2d(int k, std::uint64_t seed, double eps) {
    ParamStore<S> store(seed);
    Rng rng(mix64(seed, fnv1a64("conv2d") + static_cast<std::uint64_t>(k)));
    Tensor<S> x = verify_detail::rand_t<S>(rng, Shape{3, 8, 8});
    Tensor<S> w = verify_detail::rand_t<S>(rng, Shape{4, 3, k, k}, 1.0 / std::sqrt(3.0 * k * k));
    Tensor<S> b = verify_detail::rand_t<S>(rng, Shape{4}, 0.2);
    auto build = [&](Graph<S>& g) {
        Var<S> out = conv2d(g.named_input("x", x), g.named_input("w", w), g.named_input("b", b));
        return verify_detail::probe_loss(g, out, rng);
    };
    return gradcheck<S>(store, build, eps).max_rel_err;
}

template <typename S = double>
double check_depthwise(std::uint64_t seed, double eps) {
    ParamStore<S> store(seed);
    Rng rng(mix64(seed, fnv1a64("depthwise")));
    Tensor<S> x = verify_detail::rand_t<S>(rng, Shape{4, 8, 8});
    Tensor<S> w = verify_detail::rand_t<S>(rng, Shape{4, 3, 3}, 1.0 / 3.0);
    Tensor<S> b = verify_detail::rand_t<S>(rng, Shape{4}, 0.2);
    auto build = [&](Graph<S>& g) {
        Var<S> out = depthwise_conv(g.named_input("x", x), g.named_input("w", w), g.named_input("b", b));
        return verify_detail::probe_loss(g, out, rng);
    };
    return gradcheck<S>(store, build, eps).max_rel_err;
}

template <typename S = double>
double check_scaled_attention(std::uint64_t seed, double eps) {
    ParamStore<S> store(seed);
    Rng rng(mix64(seed, fnv1a64("attention")));
    Tensor<S> q = verify_detail::rand_t<S>(rng, Shape{4, 2, 3});
    Tensor<S> k = verify_detail::rand_t<S>(rng, Shape{4, 2, 3});
    Tensor<S> v = verify_detail::rand_t<S>(rng, Shape{4, 2, 3});
    Tensor<S> ls = Tensor<S>::scalar(static_cast<S>(0.5 * std::log(6.0)));
    auto build = [&](Graph<S>& g) {
        auto a = scaled_attention(g.named_input("q", q), g.named_input("k", k), g.named_input("v", v),
                                  g.named_input("log_s", ls));
        return verify_detail::probe_loss(g, a.out, rng);
    };
    return gradcheck<S>(store, build, eps).max_rel_err;
}

template <typename S = double>
double check_activation(Act mode, std::uint64_t seed, double eps) {
    ParamStore<S> store(seed);
    Rng rng(mix64(seed, fnv1a64(act_name(mode))));
    // keep pre-activations away from the kink at 0
    Tensor<S> x = verify_detail::rand_nudged<S>(rng, Shape{3, 6, 6}, 0.05);
    auto build = [&](Graph<S>& g) { return verify_detail::probe_loss(g, activate(g.named_input("x", x), mode), rng); };
    return gradcheck<S>(store, build, eps).max_rel_err;
}

template <typename S = double>
double check_layer_norm(std::uint64_t seed, double eps) {
    ParamStore<S> store(seed);
    Rng rng(mix64(seed, fnv1a64("layer_norm")));
    Tensor<S> x = verify_detail::rand_t<S>(rng, Shape{4, 5, 5});
    Tensor<S> ga = verify_detail::rand_t<S>(rng, Shape{4}, 0.5);
    Tensor<S> be = verify_detail::rand_t<S>(rng, Shape{4}, 0.5);
    auto build = [&](Graph<S>& g) {
        Var<S> out = layer_norm(g.named_input("x", x), g.named_input("g", ga), g.named_input("b", be));
        return verify_detail::probe_loss(g, out, rng);
    };
    return gradcheck<S>(store, build, eps).max_rel_err;
}

template <typename S = double>
double check_batch_norm(int rank, BnMode mode, std::uint64_t seed, double eps) {
    ParamStore<S> store(seed);
    Rng rng(mix64(seed, fnv1a64("batch_norm") + static_cast<std::uint64_t>(rank)));
    Tensor<S> x = rank == 4 ? verify_detail::rand_t<S>(rng, Shape{2, 4, 5, 5}) : verify_detail::rand_t<S>(rng, Shape{4, 5, 5});
    Tensor<S> ga = verify_detail::rand_t<S>(rng, Shape{4}, 0.5);
    Tensor<S> be = verify_detail::rand_t<S>(rng, Shape{4}, 0.5);
    auto build = [&, mode](Graph<S>& g) {
        g.bn = mode;
        Tensor<S>& rm = g.state("bn.rm", Shape{4}, Init::Zeros);
        Tensor<S>& rv = g.state("bn.rv", Shape{4}, Init::Ones);
        Var<S> out = batch_norm(g.named_input("x", x), g.named_input("g", ga), g.named_input("b", be), rm, rv, g.bn);
        return verify_detail::probe_loss(g, out, rng);
    };
    return gradcheck<S>(store, build, eps).max_rel_err;
}

template <typename S = double>
double check_gap_broadcast(std::uint64_t seed, double eps) {
    ParamStore<S> store(seed);
    Rng rng(mix64(seed, fnv1a64("gap")));
    Tensor<S> x = verify_detail::rand_t<S>(rng, Shape{3, 4, 4});
    auto build = [&](Graph<S>& g) {
        Var<S> out = broadcast_hw(gap(g.named_input("x", x)), 4, 4);
        return verify_detail::probe_loss(g, out, rng);
    };
    return gradcheck<S>(store, build, eps).max_rel_err;
}

template <typename S = double>
double check_softmax_matmul(std::uint64_t seed, double eps) {
    ParamStore<S> store(seed);
    Rng rng(mix64(seed, fnv1a64("softmax_matmul")));
    Tensor<S> a = verify_detail::rand_t<S>(rng, Shape{2, 3, 4});
    Tensor<S> b = verify_detail::rand_t<S>(rng, Shape{2, 5, 4});
    auto build = [&](Graph<S>& g) {
        Var<S> out = softmax_last(matmul(g.named_input("a", a), g.named_input("b", b), /*trans_b=*/true));
        return verify_detail::probe_loss(g, out, rng);
    };
    return gradcheck<S>(store, build, eps).max_rel_err;
}

template <typename S = double>
double check_sobel_mulaw(std::uint64_t seed, double eps) {
    ParamStore<S> store(seed);
    Rng rng(mix64(seed, fnv1a64("sobel_mulaw")));
    Tensor<S> x = verify_detail::rand_uniform<S>(rng, Shape{2, 6, 6}, 0.05, 0.95);
    auto build = [&](Graph<S>& g) {
        Var<S> xin = g.named_input("x", x);
        Var<S> a = verify_detail::probe_loss(g, sobel_op(xin), rng);
        Var<S> b = verify_detail::probe_loss(g, mu_law_op(clamp01(xin), S(kDefaultMu)), rng);
        return add(a, b);
    };
    return gradcheck<S>(store, build, eps).max_rel_err;
}

template <typename S = double>
double check_ssim_graph(std::uint64_t seed, double eps) {
    ParamStore<S> store(seed);
    Rng rng(mix64(seed, fnv1a64("ssim")));
    Tensor<S> a = verify_detail::rand_uniform<S>(rng, Shape{3, 12, 12}, 0.1, 0.9);
    Tensor<S> b = verify_detail::rand_uniform<S>(rng, Shape{3, 12, 12}, 0.1, 0.9);
    auto build = [&](Graph<S>& g) { return ssim_graph(g, g.named_input("a", a), g.named_input("b", b)); };
    // Border pixels enter one window at ~1e-6 Gaussian weight; their true
    // gradients sit below the probe noise floor at eps=1e-5, so this check
    // needs the larger step (truncation is still negligible there).
    return gradcheck<S>(store, build, std::max(eps, 1e-4)).max_rel_err;
}

template <typename S = double>
double check_window_roundtrip(std::uint64_t seed, double eps) {
    ParamStore<S> store(seed);
    Rng rng(mix64(seed, fnv1a64("window")));
    Tensor<S> x = verify_detail::rand_t<S>(rng, Shape{3, 8, 8});
    auto build = [&](Graph<S>& g) {
        Var<S> w = window_partition(g.named_input("x", x), 4);
        return verify_detail::probe_loss(g, window_merge(w, 3, 8, 8, 4), rng);
    };
    return gradcheck<S>(store, build, eps).max_rel_err;
}

// --- composite modules, C=4, 8x8 ---

inline NetworkConfig tiny_config(Ablation abl = Ablation::None) {
    NetworkConfig cfg;
    cfg.channels = 4;
    cfg.dem_count = 2;
    cfg.window = 4;
    cfg.ablation = abl;
    return cfg;
}

template <typename S = double>
double check_extractor(std::uint64_t seed, double eps) {
    ParamStore<S> store(seed);
    Rng rng(mix64(seed, fnv1a64("extractor")));
    Tensor<S> x = verify_detail::rand_t<S>(rng, Shape{6, 8, 8});
    auto build = [&](Graph<S>& g) {
        return verify_detail::probe_loss(g, extract_features(g, "e", g.named_input("x", x), tiny_config()), rng);
    };
    return gradcheck<S>(store, build, eps).max_rel_err;
}

template <typename S = double>
double check_srm(std::uint64_t seed, double eps) {
    ParamStore<S> store(seed);
    Rng rng(mix64(seed, fnv1a64("srm")));
    Tensor<S> fx = verify_detail::rand_t<S>(rng, Shape{4, 8, 8});
    Tensor<S> fm = verify_detail::rand_t<S>(rng, Shape{4, 8, 8});
    auto build = [&](Graph<S>& g) {
        auto out = self_representation(g, "srm", g.named_input("fx", fx), g.named_input("fm", fm));
        return verify_detail::probe_loss(g, concat_ch(out.fx, out.fm), rng);
    };
    return gradcheck<S>(store, build, eps).max_rel_err;
}

template <typename S = double>
double check_mrm(std::uint64_t seed, double eps) {
    ParamStore<S> store(seed);
    Rng rng(mix64(seed, fnv1a64("mrm")));
    Tensor<S> fx = verify_detail::rand_t<S>(rng, Shape{4, 8, 8});
    Tensor<S> fm = verify_detail::rand_t<S>(rng, Shape{4, 8, 8});
    auto build = [&](Graph<S>& g) {
        auto out = mutual_representation(g, "mrm", g.named_input("fx", fx), g.named_input("fm", fm));
        return verify_detail::probe_loss(g, concat_ch(out.fx, out.fm), rng);
    };
    return gradcheck<S>(store, build, eps).max_rel_err;
}

template <typename S = double>
double check_dem(std::uint64_t seed, double eps) {
    ParamStore<S> store(seed);
    Rng rng(mix64(seed, fnv1a64("dem")));
    Tensor<S> fin = verify_detail::rand_t<S>(rng, Shape{4, 8, 8});
    Tensor<S> fm = verify_detail::rand_t<S>(rng, Shape{4, 8, 8});
    Tensor<S> fref = verify_detail::rand_t<S>(rng, Shape{4, 8, 8});
    auto build = [&](Graph<S>& g) {
        Var<S> out = detail_enhancement(g, "dem1", g.named_input("fin", fin), g.named_input("fm", fm),
                                        g.named_input("fref", fref), tiny_config());
        return verify_detail::probe_loss(g, out, rng);
    };
    return gradcheck<S>(store, build, eps).max_rel_err;
}

template <typename S = double>
double check_reconstruct(std::uint64_t seed, double eps) {
    ParamStore<S> store(seed);
    Rng rng(mix64(seed, fnv1a64("reconstruct")));
    Tensor<S> f = verify_detail::rand_t<S>(rng, Shape{4, 8, 8});
    Tensor<S> fref = verify_detail::rand_t<S>(rng, Shape{4, 8, 8});
    auto build = [&](Graph<S>& g) {
        Var<S> out = reconstruct(g, "recon", g.named_input("f", f), g.named_input("fref", fref), tiny_config());
        return verify_detail::probe_loss(g, out, rng);
    };
    return gradcheck<S>(store, build, eps).max_rel_err;
}

template <typename S = double>
double check_fifm(std::uint64_t seed, double eps) {
    ParamStore<S> store(seed);
    Rng rng(mix64(seed, fnv1a64("fifm")));
    Tensor<S> f2 = verify_detail::rand_t<S>(rng, Shape{4, 8, 8});
    Tensor<S> fi = verify_detail::rand_t<S>(rng, Shape{4, 8, 8});
    auto build = [&](Graph<S>& g) {
        auto out = interaction_fusion(g, "fifm", g.named_input("f2", f2), g.named_input("fi", fi));
        return verify_detail::probe_loss(g, out.fused, rng);
    };
    return gradcheck<S>(store, build, eps).max_rel_err;
}

template <typename S = double>
double check_gsm(std::uint64_t seed, double eps) {
    ParamStore<S> store(seed);
    Rng rng(mix64(seed, fnv1a64("gsm")));
    Tensor<S> fs = verify_detail::rand_t<S>(rng, Shape{4, 8, 8});
    Tensor<S> fm = verify_detail::rand_t<S>(rng, Shape{4, 8, 8});
    auto build = [&](Graph<S>& g) {
        auto out = ghost_suppression(g, "gsm", g.named_input("fs", fs), g.named_input("fm", fm), tiny_config());
        return verify_detail::probe_loss(g, out.out, rng);
    };
    return gradcheck<S>(store, build, eps).max_rel_err;
}

// Single-frame branch objective vs. all branch parameters (12x12, C=4).
template <typename S = double>
double check_shdr_branch(std::uint64_t seed, double eps) {
    ParamStore<S> store(seed);
    Rng rng(mix64(seed, fnv1a64("shdr_branch")));
    Tensor<S> x2 = verify_detail::rand_uniform<S>(rng, Shape{6, 12, 12}, 0.02, 0.98);
    Tensor<S> esi = verify_detail::rand_uniform<S>(rng, Shape{1, 12, 12}, 0.05, 0.95);
    Tensor<S> gt = verify_detail::rand_uniform<S>(rng, Shape{3, 12, 12}, 0.05, 0.95);
    LossHypers hyp;
    auto build = [&](Graph<S>& g) {
        auto out = shdr_forward(g, x2, esi, tiny_config());
        return build_branch_loss(g, out.hs, g.input(gt), hyp).total;
    };
    return gradcheck<S>(store, build, eps).max_rel_err;
}

// Full dual-branch objective vs. all parameters (12x12, C=4).
template <typename S = double>
double check_full_model(Ablation abl, std::uint64_t seed, double eps) {
    ParamStore<S> store(seed);
    Rng rng(mix64(seed, fnv1a64("full_model") + static_cast<std::uint64_t>(abl)));
    ExposureStack<S> stack = verify_detail::random_stack<S>(rng, 12, 12);
    Tensor<S> gt = verify_detail::rand_uniform<S>(rng, Shape{3, 12, 12}, 0.05, 0.95);
    PackedStack<S> packed = pack_stack(stack);
    LossHypers hyp;
    auto build = [&](Graph<S>& g) {
        ForwardOut<S> fwd = mhdr_forward(g, packed, tiny_config(abl));
        return build_total_loss(g, fwd, gt, hyp).total;
    };
    return gradcheck<S>(store, build, eps).max_rel_err;
}

// ---------------------------------------------------------------------------
// Suite runner
// ---------------------------------------------------------------------------

inline std::vector<CheckResult> run_gradcheck_suite(const VerifyOptions& opt = {}) {
    struct Job {
        std::string name;
        std::uint64_t seed;
        std::function<double(std::uint64_t, double)> fn;
    };
    std::vector<Job> jobs;
    auto add = [&](const std::string& name, std::function<double(std::uint64_t, double)> fn, int seeds) {
        for (int s = 0; s < seeds; ++s) jobs.push_back({name, static_cast<std::uint64_t>(s), fn});
    };

    for (int k : {1, 3, 5, 7})
        add("conv2d_k" + std::to_string(k), [k](std::uint64_t s, double e) { return check_conv2d<double>(k, s, e); },
            opt.seeds);
    add("depthwise3x3", [](std::uint64_t s, double e) { return check_depthwise<double>(s, e); }, opt.seeds);
    add("scaled_attention", [](std::uint64_t s, double e) { return check_scaled_attention<double>(s, e); }, opt.seeds);
    for (Act a : {Act::Relu, Act::LRelu, Act::RReluPaper, Act::Sigmoid})
        add(std::string("activate_") + act_name(a),
            [a](std::uint64_t s, double e) { return check_activation<double>(a, s, e); }, opt.seeds);
    add("layer_norm", [](std::uint64_t s, double e) { return check_layer_norm<double>(s, e); }, opt.seeds);
    add("batch_norm_train", [](std::uint64_t s, double e) { return check_batch_norm<double>(3, BnMode::TrainNoUpdate, s, e); },
        opt.seeds);
    add("batch_norm_batched", [](std::uint64_t s, double e) { return check_batch_norm<double>(4, BnMode::TrainNoUpdate, s, e); },
        opt.seeds);
    add("batch_norm_eval", [](std::uint64_t s, double e) { return check_batch_norm<double>(3, BnMode::Eval, s, e); },
        opt.seeds);
    add("gap_broadcast", [](std::uint64_t s, double e) { return check_gap_broadcast<double>(s, e); }, opt.seeds);
    add("softmax_matmul", [](std::uint64_t s, double e) { return check_softmax_matmul<double>(s, e); }, opt.seeds);
    add("sobel_mulaw", [](std::uint64_t s, double e) { return check_sobel_mulaw<double>(s, e); }, opt.seeds);
    add("ssim", [](std::uint64_t s, double e) { return check_ssim_graph<double>(s, e); }, opt.seeds);
    add("window_partition", [](std::uint64_t s, double e) { return check_window_roundtrip<double>(s, e); }, opt.seeds);

    add("extractor", [](std::uint64_t s, double e) { return check_extractor<double>(s, e); }, opt.seeds);
    add("srm", [](std::uint64_t s, double e) { return check_srm<double>(s, e); }, opt.seeds);
    add("mrm", [](std::uint64_t s, double e) { return check_mrm<double>(s, e); }, opt.seeds);
    add("dem", [](std::uint64_t s, double e) { return check_dem<double>(s, e); }, opt.seeds);
    add("reconstruct", [](std::uint64_t s, double e) { return check_reconstruct<double>(s, e); }, opt.seeds);
    add("fifm", [](std::uint64_t s, double e) { return check_fifm<double>(s, e); }, opt.seeds);
    add("gsm", [](std::uint64_t s, double e) { return check_gsm<double>(s, e); }, opt.seeds);

    if (opt.include_branches) {
        add("branch_single_frame", [](std::uint64_t s, double e) { return check_shdr_branch<double>(s, e); }, opt.seeds);
        add("branch_full_model",
            [](std::uint64_t s, double e) { return check_full_model<double>(Ablation::None, s, e); }, opt.seeds);
    }
    if (opt.include_ablations) {
        for (Ablation abl : {Ablation::NoSrm, Ablation::NoMrm, Ablation::NoFifm, Ablation::NoGsm, Ablation::NoShdrEsi})
            add(std::string("ablation_") + ablation_name(abl),
                [abl](std::uint64_t s, double e) { return check_full_model<double>(abl, s, e); }, opt.seeds);
    }

    struct Slot {
        double err = 0.0;
        double sec = 0.0;
    };
    std::vector<Slot> slots(jobs.size());
    std::atomic<size_t> next{0};
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const unsigned nthreads = opt.threads > 0 ? static_cast<unsigned>(opt.threads) : hw;
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            const auto t0 = std::chrono::steady_clock::now();
            slots[i].err = jobs[i].fn(jobs[i].seed, opt.eps);
            slots[i].sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
    };
    std::vector<std::thread> pool;
    for (unsigned i = 1; i < nthreads; ++i) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    // aggregate by name, preserving first-seen order
    std::vector<CheckResult> results;
    std::map<std::string, size_t> index;
    for (size_t i = 0; i < jobs.size(); ++i) {
        auto it = index.find(jobs[i].name);
        if (it == index.end()) {
            index.emplace(jobs[i].name, results.size());
            CheckResult r;
            r.name = jobs[i].name;
            results.push_back(r);
            it = index.find(jobs[i].name);
        }
        CheckResult& r = results[it->second];
        if (slots[i].err > r.max_rel_err) {
            r.max_rel_err = slots[i].err;
            r.worst = "seed " + std::to_string(jobs[i].seed);
        }
        r.seconds += slots[i].sec;
        ++r.elements;
    }
    for (auto& r : results) r.pass = r.max_rel_err < opt.tol;
    return results;
}

}  // namespace duohdr
