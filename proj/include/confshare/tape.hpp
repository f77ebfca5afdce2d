#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "confshare/tensor.hpp"

namespace confshare {

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    int32_t id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

/// Reverse-mode tape.
///
/// Nodes are appended in execution order, so the node vector is already a
/// topological order. backward() walks it once, last to first. Gradient
/// contributions are summed into a parent's buffer in the order the consuming
/// nodes are visited, which makes accumulation across shared leaves bitwise
/// reproducible.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf node. Named leaves with requires_grad appear in the backward() result.
    Var leaf(Tensor value, bool requires_grad, std::string name = {});
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Records an op output. `fn` is dropped when no input needs a gradient.
    Var record(Tensor value, bool requires_grad, BackwardFn fn, const char* op_name);

    const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
    bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].requires_grad; }

    /// Gradient buffer of a node, zero-initialized on first access.
    Tensor& grad_buffer(Var v);

    /// Gradient of `loss` with respect to every named leaf that requires grad.
    /// A name bound to several leaves receives the sum of their gradients.
    std::map<std::string, Tensor> backward(Var loss);

    size_t size() const { return nodes_.size(); }
    /// Total scalars held by node values, for allocation assertions.
    int64_t elements_recorded() const { return elements_; }
    int64_t largest_node() const { return largest_; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::string name;
        BackwardFn backward;
    };

    std::deque<Node> nodes_;
    int64_t elements_ = 0;
    int64_t largest_ = 0;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

}  // namespace confshare
