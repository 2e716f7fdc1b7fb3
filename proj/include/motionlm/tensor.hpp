// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>

#include "motionlm/common.hpp"

namespace motionlm {

using Array = Eigen::ArrayXd;
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

class Tape;

// One node of the computation graph. Values are flat row-major; `shape`
// carries the logical rank. `grad` stays empty until backward touches it.
struct TensorData {
    Shape shape;
    Array value;
    Array grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorData>> parents;
    // Accumulates into parents' grads; receives *this so closures need not
    // capture their own node (avoids shared_ptr cycles).
    std::function<void(const TensorData&)> backward_fn;

    void accumulate(const Array& g) {
        if (grad.size() == 0) grad = Array::Zero(value.size());
        grad += g;
    }
};

using NodePtr = std::shared_ptr<TensorData>;

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor from_flat(Shape shape, Array values, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor constant(Shape shape, Real fill);
    static Tensor scalar(Real v);
    // Leaf parameter filled with normal(0, stddev) draws.
    static Tensor randn(Shape shape, Rng& rng, Real stddev, bool requires_grad = true);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int64_t size() const { return node_->value.size(); }

    Array& value() { return node_->value; }
    const Array& value() const { return node_->value; }
    Real item() const;

    // Row-major 2-D views; tensor must have rank 2 (rank-1 maps as 1 x n).
    ConstMatMap mat() const;
    MatMap mat();

    Real& at(int i) { return node_->value(i); }
    Real at(int i) const { return node_->value(i); }
    Real& at(int r, int c);
    Real at(int r, int c) const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    // Gradient as a flat array; zeros if backward never reached this node.
    Array grad() const;
    bool has_grad() const { return node_->grad.size() > 0; }
    void zero_grad() { if (node_->grad.size() > 0) node_->grad.setZero(); }

    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

// Ordered record of the primitive operations of one forward pass. Ops are
// appended at creation, so the record is topologically sorted by
// construction. Instantiating a Tape makes it the active recorder for the
// current thread; destruction restores the previous one.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(NodePtr node) { nodes_.push_back(std::move(node)); }
    size_t size() const { return nodes_.size(); }

    // Reverse-mode sweep from a scalar root. Visits every recorded node at
    // most once, in reverse recording order.
    void backward(const Tensor& root);

    void zero_grads();
    void clear() { nodes_.clear(); }

    static Tape* active();

private:
    std::vector<NodePtr> nodes_;
    Tape* prev_ = nullptr;
};

// Builds the result node of a primitive: wires parents and the backward
// closure only when some parent needs gradients and a tape is recording.
Tensor make_result(Shape shape, Array value, const char* op,
                   std::initializer_list<Tensor> parents,
                   std::function<void(const TensorData&)> backward_fn);
Tensor make_result(Shape shape, Array value, const char* op,
                   const std::vector<Tensor>& parents,
                   std::function<void(const TensorData&)> backward_fn);

}  // namespace motionlm
