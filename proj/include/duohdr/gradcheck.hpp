#pragma once

#include <functional>
#include <string>

#include "duohdr/params.hpp"

namespace duohdr {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst;  // "name[i]" of the worst element
    std::int64_t checked = 0;
};

// Central-difference verification of reverse-mode gradients. `build`
// constructs a scalar-valued graph from the store; every tensor it binds
// (parameters and named inputs) is probed element by element:
//   numeric = (f(x+eps) - f(x-eps)) / (2 eps)
//   rel     = |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
// Probes perturb the bound leaf's value and re-run, in place, only the nodes
// downstream of it. Probes must be pure: the graph runs in TrainNoUpdate mode
// so batch-norm running statistics stay untouched (builders may switch to
// Eval but must not pick TrainUpdate).
template <typename S>
GradCheckResult gradcheck(ParamStore<S>& store, const std::function<Var<S>(Graph<S>&)>& build,
                          double eps = 1e-5) {
    GradCheckResult res;

    Graph<S> g(&store, BnMode::TrainNoUpdate);
    Var<S> out = build(g);
    if (out.value().numel() != 1)
        throw ShapeError("gradcheck requires a scalar graph output, got shape " + out.value().shape.str());
    g.tape.backward(out);

    Tape<S>& tape = g.tape;
    const int n_nodes = static_cast<int>(tape.size());

    // children adjacency for downstream (dirty) sets
    std::vector<std::vector<int>> children(static_cast<size_t>(n_nodes));
    for (int i = 0; i < n_nodes; ++i)
        for (int p : tape.parents(i)) children[static_cast<size_t>(p)].push_back(i);

    std::vector<char> dirty_mark(static_cast<size_t>(n_nodes), 0);
    auto downstream = [&](int leaf) {
        std::fill(dirty_mark.begin(), dirty_mark.end(), 0);
        std::vector<int> order;
        dirty_mark[static_cast<size_t>(leaf)] = 1;
        std::vector<int> stack{leaf};
        while (!stack.empty()) {
            const int v = stack.back();
            stack.pop_back();
            for (int c : children[static_cast<size_t>(v)])
                if (!dirty_mark[static_cast<size_t>(c)]) {
                    dirty_mark[static_cast<size_t>(c)] = 1;
                    stack.push_back(c);
                }
        }
        for (int i = leaf + 1; i < n_nodes; ++i)
            if (dirty_mark[static_cast<size_t>(i)]) order.push_back(i);  // ids ascend in topo order
        return order;
    };

    struct Item {
        std::string name;
        int node;
        Tensor<S> analytic;
    };
    std::vector<Item> items;
    for (auto& [name, b] : g.bound) items.push_back({name, b.node, tape.grad(b.node)});

    for (auto& item : items) {
        const std::vector<int> dirty = downstream(item.node);
        Tensor<S>& leaf_value = tape.value_mut(item.node);
        for (std::int64_t i = 0; i < leaf_value.numel(); ++i) {
            const S keep = leaf_value.data[static_cast<size_t>(i)];
            leaf_value.data[static_cast<size_t>(i)] = keep + static_cast<S>(eps);
            for (int id : dirty) tape.recompute(id);
            const double fp = static_cast<double>(out.value().data[0]);
            leaf_value.data[static_cast<size_t>(i)] = keep - static_cast<S>(eps);
            for (int id : dirty) tape.recompute(id);
            const double fm = static_cast<double>(out.value().data[0]);
            leaf_value.data[static_cast<size_t>(i)] = keep;

            const double numeric = (fp - fm) / (2.0 * eps);
            const double analytic = static_cast<double>(item.analytic.data[static_cast<size_t>(i)]);
            const double rel =
                std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            ++res.checked;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst = item.name + "[" + std::to_string(i) + "]";
            }
        }
        // restore downstream values for the next item
        for (int id : downstream(item.node)) tape.recompute(id);
    }
    return res;
}

}  // namespace duohdr
