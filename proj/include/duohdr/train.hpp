#pragma once

#include <chrono>

#include "duohdr/loss.hpp"
#include "duohdr/optim.hpp"
#include "duohdr/synth.hpp"

namespace duohdr {

struct TrainConfig {
    int steps = 200;
    int batch = 2;
    int scene_size = 32;
    int motion_px = 3;
    double ev_step = 2.0;
    int pool = 64;          // fixed pool of pre-generated scenes; one epoch = one pass
    int metrics_every = 25;
};

// Everything a run needs; parsed from JSON by the CLI layer.
struct RunConfig {
    NetworkConfig network;
    LossHypers loss;
    double gamma = kDefaultGamma;
    double esi_clamp = kDefaultEsiClamp;
    AdamConfig optim;
    TrainConfig train;
    std::uint64_t seed = 0;
    std::string out_dir;

    void validate() const {
        network.validate();
        if (train.batch < 1) throw ConfigError("batch must be >= 1");
        if (train.pool < train.batch) throw ConfigError("scene pool smaller than batch");
        if (train.scene_size < 32) throw ConfigError("scene_size must be >= 32");
        if (!(loss.lambda >= 0 && loss.alpha >= 0 && loss.beta >= 0)) throw ConfigError("loss weights must be >= 0");
    }
};

struct StepRecord {
    int step = 0;  // 1-based
    LossBreakdown loss;
    double lr = 0;
    bool applied = true;
    std::string note;
};

struct MetricRecord {
    int step = 0;  // 0 = before training
    MetricSet metrics;
};

struct TrainReport {
    std::vector<StepRecord> steps;
    std::vector<MetricRecord> metrics;
    std::uint64_t seed = 0;
    std::string config_hash;
    double wall_clock_sec = 0;  // the only nondeterministic field
    double initial_total = 0;
    double final_total = 0;
};

namespace detail {

constexpr std::uint64_t kHeldOutStream = 1000003;

template <typename S>
struct PreparedScene {
    PackedStack<S> packed;
    Tensor<S> gt;
};

template <typename S>
PreparedScene<S> prepare_scene(std::uint64_t seed, const RunConfig& cfg) {
    SynthOptions so;
    so.height = cfg.train.scene_size;
    so.width = cfg.train.scene_size;
    so.motion_px = cfg.train.motion_px;
    so.ev_step = cfg.train.ev_step;
    SynthScene<S> sc = synth_scene<S>(seed, so);
    PreparedScene<S> p;
    p.packed = pack_stack(sc.stack, static_cast<S>(cfg.gamma), static_cast<S>(cfg.esi_clamp));
    p.gt = to_planar(sc.ground_truth.img);
    return p;
}

}  // namespace detail

// Evaluate the multi-exposure output on one prepared scene with frozen
// parameters (eval-mode batch norm, no recording).
template <typename S>
Tensor<S> infer_hm(ParamStore<S>& store, const PackedStack<S>& packed, const NetworkConfig& net) {
    Graph<S> g(&store, BnMode::Eval);
    g.tape.set_recording(false);
    return mhdr_forward(g, packed, net).hm.value();
}

// Micro-training loop: batches of synthetic scenes, Adam updates, per-step
// loss records and periodic metrics on a held-out scene. Reproducible
// bit-for-bit from (config, seed).
template <typename S>
TrainReport train_toy(const RunConfig& cfg, ParamStore<S>& store) {
    cfg.validate();
    if (cfg.train.steps < 1) throw ConfigError("steps must be >= 1, got " + std::to_string(cfg.train.steps));
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<detail::PreparedScene<S>> pool;
    pool.reserve(static_cast<size_t>(cfg.train.pool));
    for (int i = 0; i < cfg.train.pool; ++i)
        pool.push_back(detail::prepare_scene<S>(mix64(cfg.seed, static_cast<std::uint64_t>(i)), cfg));
    detail::PreparedScene<S> held_out = detail::prepare_scene<S>(mix64(cfg.seed, detail::kHeldOutStream), cfg);

    AdamConfig ocfg = cfg.optim;
    ocfg.steps_per_epoch = std::max(1, cfg.train.pool / cfg.train.batch);
    Adam<S> adam(ocfg);

    TrainReport report;
    report.seed = cfg.seed;

    auto record_metrics = [&](int step) {
        MetricRecord mr;
        mr.step = step;
        mr.metrics = evaluate_metrics(infer_hm(store, held_out.packed, cfg.network), held_out.gt,
                                      static_cast<S>(cfg.loss.mu));
        report.metrics.push_back(mr);
    };

    // Materialize parameters, then record the pre-training metric point.
    (void)infer_hm(store, pool[0].packed, cfg.network);
    record_metrics(0);

    std::int64_t cursor = 0;
    for (int step = 1; step <= cfg.train.steps; ++step) {
        Graph<S> g(&store, BnMode::TrainUpdate);
        Var<S> total{};
        LossBreakdown bd{};
        for (int b = 0; b < cfg.train.batch; ++b) {
            const auto& scene = pool[static_cast<size_t>(cursor % cfg.train.pool)];
            ++cursor;
            ForwardOut<S> fwd = mhdr_forward(g, scene.packed, cfg.network);
            BuiltLoss<S> bl = build_total_loss(g, fwd, scene.gt, cfg.loss);
            total = b == 0 ? bl.total : add(total, bl.total);
            bd.total += bl.bd.total;
            bd.lm += bl.bd.lm;
            bd.ls += bl.bd.ls;
            bd.lm_re += bl.bd.lm_re;
            bd.lm_ssim += bl.bd.lm_ssim;
            bd.lm_grad += bl.bd.lm_grad;
            bd.ls_re += bl.bd.ls_re;
            bd.ls_ssim += bl.bd.ls_ssim;
            bd.ls_grad += bl.bd.ls_grad;
        }
        if (cfg.train.batch > 1) total = mul_const(total, static_cast<S>(1.0 / cfg.train.batch));
        const double inv_b = 1.0 / cfg.train.batch;
        bd.total *= inv_b;
        bd.lm *= inv_b;
        bd.ls *= inv_b;
        bd.lm_re *= inv_b;
        bd.lm_ssim *= inv_b;
        bd.lm_grad *= inv_b;
        bd.ls_re *= inv_b;
        bd.ls_ssim *= inv_b;
        bd.ls_grad *= inv_b;

        if (!std::isfinite(bd.total))
            throw VerifyError("training diverged: non-finite loss at step " + std::to_string(step));

        g.tape.backward(total);
        std::map<std::string, Tensor<S>> grads;
        for (const auto& [name, binding] : g.bound)
            if (binding.learnable) grads.emplace(name, g.tape.grad(binding.node));

        StepRecord rec;
        rec.step = step;
        rec.loss = bd;
        rec.lr = adam.current_lr();
        auto sr = adam.step(store, grads);
        rec.applied = sr.applied;
        rec.note = sr.reason;
        report.steps.push_back(std::move(rec));

        if (cfg.train.metrics_every > 0 && (step % cfg.train.metrics_every == 0 || step == cfg.train.steps))
            record_metrics(step);
    }

    report.initial_total = report.steps.front().loss.total;
    report.final_total = report.steps.back().loss.total;
    report.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace duohdr
