#include "confshare/tape.hpp"

#include <algorithm>

namespace confshare {

Var Tape::leaf(Tensor value, bool requires_grad, std::string name) {
    if (!value.all_finite()) {
        throw NonFiniteError("leaf '" + name + "' holds a non-finite value");
    }
    elements_ += value.numel();
    largest_ = std::max(largest_, value.numel());
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(name), nullptr});
    return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, bool requires_grad, BackwardFn fn, const char* op_name) {
    if (!value.all_finite()) {
        throw NonFiniteError(std::string(op_name) + ": non-finite output for shape " + shape_str(value.shape()));
    }
    elements_ += value.numel();
    largest_ = std::max(largest_, value.numel());
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, {}, requires_grad ? std::move(fn) : nullptr});
    return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Tensor& Tape::grad_buffer(Var v) {
    Node& n = nodes_[static_cast<size_t>(v.id)];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
    return n.grad;
}

std::map<std::string, Tensor> Tape::backward(Var loss) {
    if (loss.tape != this || loss.id < 0 || static_cast<size_t>(loss.id) >= nodes_.size()) {
        throw std::invalid_argument("backward: loss does not belong to this tape");
    }
    if (value(loss).numel() != 1) {
        throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(value(loss).shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor{};
    grad_buffer(loss)[0] = 1.0;

    for (int64_t i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.backward && !n.grad.empty()) n.backward(*this, n.grad);
    }

    std::map<std::string, Tensor> grads;
    for (Node& n : nodes_) {
        if (!n.requires_grad || n.name.empty()) continue;
        Tensor g = n.grad.empty() ? Tensor(n.value.shape(), 0.0) : n.grad;
        auto [it, inserted] = grads.try_emplace(n.name, g);
        if (!inserted) {
            for (int64_t k = 0; k < g.numel(); ++k) it->second[k] += g[k];
        }
    }
    return grads;
}

}  // namespace confshare
