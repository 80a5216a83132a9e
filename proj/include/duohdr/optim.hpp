#pragma once

#include <map>

#include "duohdr/params.hpp"

namespace duohdr {

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double lr_decay = 0.1;        // multiplicative decay factor
    int lr_decay_epochs = 2000;   // applied every this many epochs
    int steps_per_epoch = 1;
};

// Bias-corrected Adam with a stepwise learning-rate schedule.
template <typename S>
class Adam {
public:
    explicit Adam(const AdamConfig& cfg) : cfg_(cfg) {}

    // Learning rate for the (t+1)-th step (0-based completed-step count t).
    double lr_for_step(long long t) const {
        const long long epoch = cfg_.steps_per_epoch > 0 ? t / cfg_.steps_per_epoch : 0;
        const long long drops = cfg_.lr_decay_epochs > 0 ? epoch / cfg_.lr_decay_epochs : 0;
        return cfg_.lr * std::pow(cfg_.lr_decay, static_cast<double>(drops));
    }
    double current_lr() const { return lr_for_step(t_); }
    long long steps_done() const { return t_; }

    struct StepResult {
        bool applied = true;
        std::string reason;
    };

    StepResult step(ParamStore<S>& store, const std::map<std::string, Tensor<S>>& grads) {
        for (const auto& [name, gt] : grads)
            if (!gt.all_finite()) return {false, "non-finite gradient in '" + name + "'; step rejected"};

        const double lr = lr_for_step(t_);
        const long long t = t_ + 1;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
        for (const auto& [name, gt] : grads) {
            auto& e = store.entry(name);
            if (!e.learnable) throw ConfigError("gradient supplied for non-learnable '" + name + "'");
            if (e.value.shape != gt.shape)
                throw ShapeError("gradient shape " + gt.shape.str() + " does not match parameter '" + name + "' " +
                                 e.value.shape.str());
            if (e.m.numel() == 0) {
                e.m = Tensor<S>(e.value.shape, S(0));
                e.v = Tensor<S>(e.value.shape, S(0));
            }
            for (std::int64_t i = 0; i < e.value.numel(); ++i) {
                double gv = static_cast<double>(gt.data[static_cast<size_t>(i)]);
                if (cfg_.weight_decay != 0.0) gv += cfg_.weight_decay * static_cast<double>(e.value.data[static_cast<size_t>(i)]);
                const double m = cfg_.beta1 * static_cast<double>(e.m.data[static_cast<size_t>(i)]) + (1.0 - cfg_.beta1) * gv;
                const double v = cfg_.beta2 * static_cast<double>(e.v.data[static_cast<size_t>(i)]) + (1.0 - cfg_.beta2) * gv * gv;
                e.m.data[static_cast<size_t>(i)] = static_cast<S>(m);
                e.v.data[static_cast<size_t>(i)] = static_cast<S>(v);
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                e.value.data[static_cast<size_t>(i)] -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
        ++t_;
        return {};
    }

private:
    AdamConfig cfg_;
    long long t_ = 0;
};

}  // namespace duohdr
