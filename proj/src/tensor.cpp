// SPDX-License-Identifier: Apache-2.0
#include "motionlm/tensor.hpp"

#include <algorithm>

namespace motionlm {

namespace {
thread_local Tape* g_active_tape = nullptr;
}  // namespace

Tensor Tensor::from_flat(Shape shape, Array values, bool requires_grad) {
    if (numel(shape) != values.size())
        throw ShapeError("from_flat: shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
    auto node = std::make_shared<TensorData>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return from_flat(shape, Array::Zero(numel(shape)), requires_grad);
}

Tensor Tensor::constant(Shape shape, Real fill) {
    return from_flat(shape, Array::Constant(numel(shape), fill), false);
}

Tensor Tensor::scalar(Real v) {
    return from_flat({1}, Array::Constant(1, v), false);
}

Tensor Tensor::randn(Shape shape, Rng& rng, Real stddev, bool requires_grad) {
    Array v(numel(shape));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal(0.0, stddev);
    return from_flat(std::move(shape), std::move(v), requires_grad);
}

Real Tensor::item() const {
    if (size() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not scalar");
    return node_->value(0);
}

ConstMatMap Tensor::mat() const {
    const auto& s = node_->shape;
    if (s.size() == 1) return ConstMatMap(node_->value.data(), 1, s[0]);
    if (s.size() != 2) throw ShapeError("mat: rank-" + std::to_string(s.size()) + " tensor");
    return ConstMatMap(node_->value.data(), s[0], s[1]);
}

MatMap Tensor::mat() {
    const auto& s = node_->shape;
    if (s.size() == 1) return MatMap(node_->value.data(), 1, s[0]);
    if (s.size() != 2) throw ShapeError("mat: rank-" + std::to_string(s.size()) + " tensor");
    return MatMap(node_->value.data(), s[0], s[1]);
}

Real& Tensor::at(int r, int c) {
    const auto& s = node_->shape;
    if (s.size() != 2) throw ShapeError("at(r,c) on rank-" + std::to_string(s.size()) + " tensor");
    return node_->value(static_cast<Eigen::Index>(r) * s[1] + c);
}

Real Tensor::at(int r, int c) const {
    return const_cast<Tensor*>(this)->at(r, c);
}

Array Tensor::grad() const {
    if (node_->grad.size() == 0) return Array::Zero(node_->value.size());
    return node_->grad;
}

Tape::Tape() {
    prev_ = g_active_tape;
    g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Tensor& root) {
    if (root.size() != 1)
        throw ShapeError("backward: root must be scalar, got " + shape_str(root.shape()));
    if (!root.requires_grad())
        throw std::logic_error("backward: root does not require gradients");
    root.node()->accumulate(Array::Constant(1, 1.0));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        TensorData& n = **it;
        if (n.backward_fn && n.grad.size() > 0) n.backward_fn(n);
    }
}

void Tape::zero_grads() {
    for (auto& n : nodes_)
        if (n->grad.size() > 0) n->grad.setZero();
}

static Tensor make_result_impl(Shape shape, Array value, const char* op,
                               const Tensor* parents, size_t n_parents,
                               std::function<void(const TensorData&)> backward_fn) {
    auto node = std::make_shared<TensorData>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;

    bool needs_grad = false;
    for (size_t i = 0; i < n_parents; ++i)
        if (parents[i].requires_grad()) { needs_grad = true; break; }

    Tape* tape = Tape::active();
    if (needs_grad && tape != nullptr) {
        node->requires_grad = true;
        node->parents.reserve(n_parents);
        for (size_t i = 0; i < n_parents; ++i) node->parents.push_back(parents[i].node());
        node->backward_fn = std::move(backward_fn);
        tape->record(node);
    }
    return Tensor(std::move(node));
}

Tensor make_result(Shape shape, Array value, const char* op,
                   std::initializer_list<Tensor> parents,
                   std::function<void(const TensorData&)> backward_fn) {
    return make_result_impl(std::move(shape), std::move(value), op, parents.begin(),
                            parents.size(), std::move(backward_fn));
}

Tensor make_result(Shape shape, Array value, const char* op,
                   const std::vector<Tensor>& parents,
                   std::function<void(const TensorData&)> backward_fn) {
    return make_result_impl(std::move(shape), std::move(value), op, parents.data(),
                            parents.size(), std::move(backward_fn));
}

}  // namespace motionlm
