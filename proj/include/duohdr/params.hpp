#pragma once

#include <map>
#include <string>
#include <string_view>

#include "duohdr/ops.hpp"

namespace duohdr {

enum class Init { FanInNormal, Zeros, Ones, Const };

// Named tree of learnable tensors plus non-learnable state (batch-norm running
// statistics) and Adam moment buffers. Creation is deterministic: each entry's
// initializer RNG is derived from (store seed, entry name), so creation order
// never matters.
template <typename S>
class ParamStore {
public:
    struct Entry {
        Tensor<S> value;
        bool learnable = true;
        Tensor<S> m, v;  // Adam moments, sized on first optimizer step
    };

    explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    Tensor<S>& get_or_create(std::string_view name, const Shape& shape, Init init, double arg = 0.0,
                             bool learnable = true) {
        auto it = entries_.find(name);
        if (it != entries_.end()) {
            if (it->second.value.shape != shape)
                throw ShapeError("parameter '" + std::string(name) + "' exists with shape " +
                                 it->second.value.shape.str() + ", requested " + shape.str());
            return it->second.value;
        }
        Entry e;
        e.value = Tensor<S>(shape);
        e.learnable = learnable;
        switch (init) {
            case Init::Zeros:
                break;
            case Init::Ones:
                for (auto& x : e.value.data) x = S(1);
                break;
            case Init::Const:
                for (auto& x : e.value.data) x = static_cast<S>(arg);
                break;
            case Init::FanInNormal: {
                Rng rng(mix64(seed_, fnv1a64(name)));
                const double std = 1.0 / std::sqrt(std::max(1.0, arg));
                for (auto& x : e.value.data) x = static_cast<S>(std * rng.normal());
                break;
            }
        }
        auto [ins, ok] = entries_.emplace(std::string(name), std::move(e));
        (void)ok;
        return ins->second.value;
    }

    bool has(std::string_view name) const { return entries_.find(name) != entries_.end(); }

    Tensor<S>& at(std::string_view name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
        return it->second.value;
    }

    Entry& entry(std::string_view name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
        return it->second;
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    size_t size() const { return entries_.size(); }

    std::int64_t learnable_count() const {
        std::int64_t n = 0;
        for (const auto& [k, e] : entries_)
            if (e.learnable) n += e.value.numel();
        return n;
    }

    std::vector<std::string> names_with_prefix(std::string_view prefix) const {
        std::vector<std::string> out;
        for (const auto& [k, e] : entries_)
            if (k.size() >= prefix.size() && std::string_view(k).substr(0, prefix.size()) == prefix) out.push_back(k);
        return out;
    }

    // Used by checkpoint loading: replaces any existing entry verbatim.
    void insert_raw(std::string name, Tensor<S> value, bool learnable) {
        Entry e;
        e.value = std::move(value);
        e.learnable = learnable;
        entries_[std::move(name)] = std::move(e);
    }

    void clear() { entries_.clear(); }

private:
    std::uint64_t seed_;
    std::map<std::string, Entry, std::less<>> entries_;
};

// One forward build: a tape plus the binding of store parameters (and any
// explicitly named inputs) to their leaf nodes. The bound map is what the
// finite-difference verifier walks.
template <typename S>
struct Graph {
    Tape<S> tape;
    ParamStore<S>* store = nullptr;
    BnMode bn = BnMode::Eval;

    struct Binding {
        int node = -1;
        Tensor<S>* source = nullptr;  // memory the probe perturbs
        bool learnable = true;
    };
    std::map<std::string, Binding, std::less<>> bound;

    explicit Graph(ParamStore<S>* s = nullptr, BnMode mode = BnMode::Eval) : store(s), bn(mode) {}

    // Learnable parameter: created in the store on first use, bound once per
    // graph.
    Var<S> param(std::string_view name, const Shape& shape, Init init, double arg = 0.0) {
        if (!store) throw ConfigError("graph has no parameter store");
        auto it = bound.find(name);
        if (it != bound.end()) return Var<S>{&tape, it->second.node};
        Tensor<S>& t = store->get_or_create(name, shape, init, arg, /*learnable=*/true);
        Var<S> v = tape.leaf(t, "param");
        bound.emplace(std::string(name), Binding{v.id, &t, true});
        return v;
    }

    // Non-learnable state tensor (not on the tape).
    Tensor<S>& state(std::string_view name, const Shape& shape, Init init, double arg = 0.0) {
        if (!store) throw ConfigError("graph has no parameter store");
        return store->get_or_create(name, shape, init, arg, /*learnable=*/false);
    }

    // Constant input leaf.
    Var<S> input(const Tensor<S>& t) { return tape.leaf(t, "input"); }

    // Input leaf registered under a name so gradcheck can probe it. The caller
    // keeps ownership of the tensor, which must outlive the probes.
    Var<S> named_input(std::string_view name, Tensor<S>& t) {
        auto it = bound.find(name);
        if (it != bound.end()) return Var<S>{&tape, it->second.node};
        Var<S> v = tape.leaf(t, "input");
        bound.emplace(std::string(name), Binding{v.id, &t, false});
        return v;
    }

    const Tensor<S>& grad_of(std::string_view name) const {
        auto it = bound.find(name);
        if (it == bound.end()) throw ConfigError("no bound tensor named '" + std::string(name) + "'");
        return tape.grad(it->second.node);
    }
};

}  // namespace duohdr
