#include "ectlab/autodiff.hpp"

#include "ectlab/error.hpp"

namespace ectlab {

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), false, {}, std::nullopt});
    return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor value) {
    nodes_.push_back(Node{std::move(value), true, {}, std::nullopt});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
    bool needs = false;
    for (const Var& in : inputs) {
        if (in.tape_ != this) throw UsageError("op input recorded on a different tape");
        needs = needs || nodes_[in.id_].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), needs, needs ? std::move(backward) : BackwardFn{}, std::nullopt});
    return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
    if (loss.tape_ != this || loss.id_ >= nodes_.size()) {
        throw UsageError("backward called without a recorded forward pass");
    }
    Node& root = nodes_[loss.id_];
    if (root.value.size() != 1) throw UsageError("backward requires a scalar loss");
    if (!root.requires_grad) throw UsageError("loss does not depend on any parameter");
    if (backward_done_) throw UsageError("backward already ran on this tape");
    root.adjoint = Tensor(root.value.shape(), 1.0);
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.adjoint || !node.backward) continue;
        // The adjoint is moved out so the callback may grow other adjoints freely.
        Tensor adjoint = std::move(*node.adjoint);
        node.backward(*this, adjoint);
        nodes_[i].adjoint = std::move(adjoint);
    }
    backward_done_ = true;
}

Tensor Tape::grad(Var v) const {
    if (!backward_done_) throw UsageError("gradient requested before backward()");
    const Node& node = nodes_.at(v.id_);
    return node.adjoint ? *node.adjoint : Tensor(node.value.shape(), 0.0);
}

Tensor* Tape::grad_slot(Var v) {
    Node& node = nodes_[v.id_];
    if (!node.requires_grad) return nullptr;
    if (!node.adjoint) node.adjoint = Tensor(node.value.shape(), 0.0);
    return &*node.adjoint;
}

}  // namespace ectlab
