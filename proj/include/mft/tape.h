/**
 * @file tape.h
 * @brief Append-only autodiff tape, backward() and zero_grad().
 *
 * Each differentiable op appends one TapeNode when grad recording is on and
 * at least one input requires grad. backward() walks the tape in strict
 * reverse insertion order and accumulates into existing gradient buffers,
 * then drops the consumed nodes.
 */
#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mft/tensor.h"

namespace mft {

enum class OpKind {
    Matmul,
    Linear,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Softmax,
    LayerNorm,
    Gelu,
    Embedding,
    CrossEntropy,
    Sum,
    Mean,
    Reshape,
    Dropout,
    Attention,
};

const char* op_kind_name(OpKind kind);

struct TapeNode {
    OpKind op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    /// Reads output->grad and accumulates into input gradients.
    std::function<void(TensorImpl& out)> backward;
};

class Tape {
public:
    int64_t size() const { return static_cast<int64_t>(nodes_.size()); }
    const TapeNode& node(int64_t i) const { return nodes_[static_cast<size_t>(i)]; }
    int64_t append(TapeNode node);
    void clear();
    /// Runs node backward functions from `from` down to 0, then clears.
    void run_backward(int64_t from);

private:
    std::vector<TapeNode> nodes_;
};

/// Tape of the calling thread.
Tape& current_tape();

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// True when an op over these inputs should be recorded.
bool needs_record(std::initializer_list<const Tensor*> inputs);

/// Appends a node for `out` and marks it as requiring grad.
void record(OpKind op, std::vector<Tensor> inputs, Tensor& out, std::function<void(TensorImpl&)> backward);

/// Adds `g` into the impl's gradient (allocating zeros on first use).
void accumulate_grad(TensorImpl& impl, std::span<const float> g);
/// Mutable gradient view of an input, allocated on demand; null when it does not require grad.
float* grad_target(TensorImpl& impl);

void backward(const Tensor& loss);
void zero_grad(std::span<Tensor> params);

}  // namespace mft
