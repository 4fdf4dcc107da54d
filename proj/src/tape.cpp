/**
 * @file tape.cpp
 */
#include "mft/tape.h"

#include "mft/error.h"

namespace mft {

const char* op_kind_name(OpKind kind) {
    switch (kind) {
        case OpKind::Matmul: return "matmul";
        case OpKind::Linear: return "linear";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::AddScalar: return "add_scalar";
        case OpKind::Softmax: return "softmax";
        case OpKind::LayerNorm: return "layer_norm";
        case OpKind::Gelu: return "gelu";
        case OpKind::Embedding: return "embedding";
        case OpKind::CrossEntropy: return "cross_entropy";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::Reshape: return "reshape";
        case OpKind::Dropout: return "dropout";
        case OpKind::Attention: return "attention";
    }
    return "?";
}

namespace {
thread_local Tape g_tape;
thread_local bool g_grad_enabled = true;
}  // namespace

Tape& current_tape() { return g_tape; }
bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

int64_t Tape::append(TapeNode node) {
    nodes_.push_back(std::move(node));
    return size() - 1;
}

void Tape::clear() {
    for (auto& n : nodes_) {
        if (n.output) n.output->node = -1;
    }
    nodes_.clear();
}

void Tape::run_backward(int64_t from) {
    for (int64_t i = from; i >= 0; --i) {
        auto& n = nodes_[static_cast<size_t>(i)];
        if (!n.output || n.output->grad.empty()) continue;
        n.backward(*n.output);
    }
    clear();
}

bool needs_record(std::initializer_list<const Tensor*> inputs) {
    if (!g_grad_enabled) return false;
    for (const auto* t : inputs) {
        if (t && t->defined() && t->requires_grad()) return true;
    }
    return false;
}

void record(OpKind op, std::vector<Tensor> inputs, Tensor& out, std::function<void(TensorImpl&)> backward) {
    TapeNode node;
    node.op = op;
    node.inputs.reserve(inputs.size());
    for (auto& t : inputs) node.inputs.push_back(t.shared());
    node.output = out.shared();
    node.backward = std::move(backward);
    out.impl()->requires_grad = true;
    out.impl()->node = g_tape.append(std::move(node));
}

float* grad_target(TensorImpl& impl) {
    if (!impl.requires_grad) return nullptr;
    impl.touch(true);
    if (impl.grad.empty()) impl.grad.assign(static_cast<size_t>(shape_numel(impl.shape)), 0.0f);
    return impl.grad.data();
}

void accumulate_grad(TensorImpl& impl, std::span<const float> g) {
    float* dst = grad_target(impl);
    if (!dst) return;
    for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        fail(ErrorCode::NotScalar, "backward() needs a scalar loss");
    }
    if (loss.impl()->node < 0) fail(ErrorCode::NoTape, "loss has no tape node; was it computed with grad recording on?");
    float* g = grad_target(*loss.impl());
    g[0] += 1.0f;
    g_tape.run_backward(loss.impl()->node);
}

void zero_grad(std::span<Tensor> params) {
    for (auto& p : params) {
        if (!p.impl()->grad.empty() || p.impl()->residency) {
            p.impl()->touch(true);
            std::fill(p.impl()->grad.begin(), p.impl()->grad.end(), 0.0f);
        }
    }
    g_tape.clear();
}

}  // namespace mft
