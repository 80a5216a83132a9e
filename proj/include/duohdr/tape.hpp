#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "duohdr/tensor.hpp"

namespace duohdr {

template <typename S>
class Tape;

// Handle to a tape node. Cheap to copy; values and gradients live on the tape.
template <typename S>
struct Var {
    Tape<S>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor<S>& value() const { return tape->value(id); }
    const Tensor<S>& grad() const { return tape->grad(id); }
    const Shape& shape() const { return tape->value(id).shape; }
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order by construction; backward() walks them strictly in
// reverse. Each non-leaf node keeps its forward computation as a closure, so
// the finite-difference verifier can re-evaluate a perturbed graph in place
// without rebuilding it.
template <typename S>
class Tape {
public:
    using Fn = std::function<void(Tape&, int)>;  // (tape, own id)

    struct Node {
        Tensor<S> value;
        Tensor<S> grad;  // allocated by backward()
        std::vector<int> parents;
        Fn compute;   // rewrites value from parent values
        Fn backward;  // scatters grad into parent grads
        const char* op = "";
    };

    // Creates a node, runs its forward computation once, and returns a handle.
    Var<S> push_op(const Shape& out_shape, std::vector<int> parents, Fn compute, Fn backward, const char* op) {
        Node n;
        n.value = Tensor<S>(out_shape);
        n.parents = std::move(parents);
        n.compute = std::move(compute);
        if (recording_) n.backward = std::move(backward);
        n.op = op;
        nodes_.push_back(std::move(n));
        const int id = static_cast<int>(nodes_.size()) - 1;
        nodes_[static_cast<size_t>(id)].compute(*this, id);
        return Var<S>{this, id};
    }

    Var<S> leaf(Tensor<S> value, const char* op = "leaf") {
        Node n;
        n.value = std::move(value);
        n.op = op;
        nodes_.push_back(std::move(n));
        return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
    }

    const Tensor<S>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    Tensor<S>& value_mut(int id) { return nodes_[static_cast<size_t>(id)].value; }
    Tensor<S>& grad(int id) { return nodes_[static_cast<size_t>(id)].grad; }
    const Tensor<S>& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
    const std::vector<int>& parents(int id) const { return nodes_[static_cast<size_t>(id)].parents; }
    const char* op_name(int id) const { return nodes_[static_cast<size_t>(id)].op; }
    size_t size() const { return nodes_.size(); }

    void recompute(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.compute) n.compute(*this, id);
    }

    // When recording is off, backward closures are not stored (pure forward
    // evaluation stays possible through the compute closures).
    void set_recording(bool r) { recording_ = r; }
    bool recording() const { return recording_; }

    void backward(const Var<S>& out) {
        if (out.tape != this) throw ShapeError("backward: output belongs to a different tape");
        if (value(out.id).numel() != 1)
            throw ShapeError("backward requires a scalar output, got shape " + value(out.id).shape.str());
        for (int i = 0; i <= out.id; ++i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            n.grad = Tensor<S>(n.value.shape, S(0));
        }
        nodes_[static_cast<size_t>(out.id)].grad.data[0] = S(1);
        for (int i = out.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.backward) n.backward(*this, i);
        }
    }

private:
    std::vector<Node> nodes_;
    bool recording_ = true;
};

}  // namespace duohdr
