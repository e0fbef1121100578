#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "ectlab/tensor.hpp"

namespace ectlab {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; only valid while its tape lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t id() const { return id_; }
    Tape* tape() const { return tape_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Reverse-mode tape. Ops push nodes in evaluation order, backward() sweeps them in reverse.
class Tape {
public:
    // Receives the adjoint of the node it belongs to and accumulates into its inputs
    // through grad_slot().
    using BackwardFn = std::function<void(Tape&, const Tensor& adjoint)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var parameter(Tensor value);

    // Records an op result. The node requires grad when any input does; otherwise the
    // backward function is dropped.
    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
    Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

    const Tensor& value(Var v) const { return nodes_[v.id_].value; }
    bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }

    // Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold a single element.
    void backward(Var loss);

    // Adjoint of `v` after backward(); zeros when nothing flowed into it.
    Tensor grad(Var v) const;
    bool has_adjoint(Var v) const { return nodes_[v.id_].adjoint.has_value(); }

    // Adjoint buffer of `v` for accumulation inside backward functions, allocated as zeros
    // on first use. Returns nullptr for nodes that do not require grad.
    Tensor* grad_slot(Var v);

    std::size_t size() const { return nodes_.size(); }
    bool backward_done() const { return backward_done_; }

private:
    struct Node {
        Tensor value;
        bool requires_grad = false;
        BackwardFn backward;
        std::optional<Tensor> adjoint;
    };

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

}  // namespace ectlab
