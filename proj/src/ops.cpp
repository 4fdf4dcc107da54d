/**
 * @file ops.cpp
 * @brief Forward kernels and their backward closures.
 */
#include "mft/ops.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mft/error.h"
#include "mft/tape.h"

namespace mft {

namespace {

void check_finite(const Tensor& out, const char* op) {
    if (!validation_mode()) return;
    for (float v : out.data()) {
        if (!std::isfinite(v)) fail(ErrorCode::InvalidArgument, std::string("non-finite value produced by ") + op);
    }
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(int64_t m, int64_t n, int64_t k, const float* a, const float* b, float* c) {
    for (int64_t i = 0; i < m; ++i) {
        float* crow = c + i * n;
        const float* arow = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const float av = arow[p];
            const float* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(int64_t m, int64_t n, int64_t k, const float* a, const float* b, float* c) {
    std::vector<float> bt(static_cast<size_t>(k * n));
    for (int64_t j = 0; j < n; ++j)
        for (int64_t p = 0; p < k; ++p) bt[static_cast<size_t>(p * n + j)] = b[j * k + p];
    gemm_nn(m, n, k, a, bt.data(), c);
}

// C[m,n] += A[k,m]^T * B[k,n]
void gemm_tn(int64_t m, int64_t n, int64_t k, const float* a, const float* b, float* c) {
    for (int64_t p = 0; p < k; ++p) {
        const float* arow = a + p * m;
        const float* brow = b + p * n;
        for (int64_t i = 0; i < m; ++i) {
            const float av = arow[i];
            float* crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

Tensor make_output(const Shape& shape) { return Tensor::zeros(shape); }

// Flat offsets into a and b for every output element under broadcasting.
struct BroadcastPlan {
    Shape out;
    bool same = false;
    std::vector<int64_t> ia, ib;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
    BroadcastPlan plan;
    plan.out = broadcast_shape(a, b);
    if (a == b) {
        plan.same = true;
        return plan;
    }
    const size_t nd = plan.out.size();
    auto strides_for = [&](const Shape& s) {
        std::vector<int64_t> st(nd, 0);
        int64_t acc = 1;
        for (size_t i = 0; i < s.size(); ++i) {
            size_t src = s.size() - 1 - i;
            size_t dst = nd - 1 - i;
            st[dst] = (s[src] == 1) ? 0 : acc;
            acc *= s[src];
        }
        return st;
    };
    auto sa = strides_for(a);
    auto sb = strides_for(b);
    const int64_t n = shape_numel(plan.out);
    plan.ia.resize(static_cast<size_t>(n));
    plan.ib.resize(static_cast<size_t>(n));
    std::vector<int64_t> idx(nd, 0);
    int64_t oa = 0, ob = 0;
    for (int64_t flat = 0; flat < n; ++flat) {
        plan.ia[static_cast<size_t>(flat)] = oa;
        plan.ib[static_cast<size_t>(flat)] = ob;
        for (size_t d = nd; d-- > 0;) {
            idx[d]++;
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < plan.out[d]) break;
            oa -= sa[d] * idx[d];
            ob -= sb[d] * idx[d];
            idx[d] = 0;
        }
    }
    return plan;
}

enum class Binary { Add, Sub, Mul };

Tensor binary_op(const Tensor& a, const Tensor& b, Binary kind) {
    auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
    Tensor out = make_output(plan->out);
    auto ad = a.data();
    auto bd = b.data();
    auto od = out.mutable_data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) {
        float x = plan->same ? ad[static_cast<size_t>(i)] : ad[static_cast<size_t>(plan->ia[static_cast<size_t>(i)])];
        float y = plan->same ? bd[static_cast<size_t>(i)] : bd[static_cast<size_t>(plan->ib[static_cast<size_t>(i)])];
        switch (kind) {
            case Binary::Add: od[static_cast<size_t>(i)] = x + y; break;
            case Binary::Sub: od[static_cast<size_t>(i)] = x - y; break;
            case Binary::Mul: od[static_cast<size_t>(i)] = x * y; break;
        }
    }
    check_finite(out, "elementwise");
    if (needs_record({&a, &b})) {
        OpKind op = kind == Binary::Add ? OpKind::Add : kind == Binary::Sub ? OpKind::Sub : OpKind::Mul;
        Tensor ca = a, cb = b;
        record(op, {a, b}, out, [ca, cb, plan, kind](TensorImpl& o) mutable {
            const float* g = o.grad.data();
            const int64_t n = static_cast<int64_t>(o.grad.size());
            auto at = [&](const std::vector<int64_t>& map, int64_t i) { return plan->same ? i : map[static_cast<size_t>(i)]; };
            if (float* ga = grad_target(*ca.impl())) {
                if (kind == Binary::Mul) {
                    auto bd = cb.data();
                    for (int64_t i = 0; i < n; ++i) ga[at(plan->ia, i)] += g[i] * bd[static_cast<size_t>(at(plan->ib, i))];
                } else {
                    for (int64_t i = 0; i < n; ++i) ga[at(plan->ia, i)] += g[i];
                }
            }
            if (float* gb = grad_target(*cb.impl())) {
                if (kind == Binary::Mul) {
                    auto ad = ca.data();
                    for (int64_t i = 0; i < n; ++i) gb[at(plan->ib, i)] += g[i] * ad[static_cast<size_t>(at(plan->ia, i))];
                } else if (kind == Binary::Sub) {
                    for (int64_t i = 0; i < n; ++i) gb[at(plan->ib, i)] -= g[i];
                } else {
                    for (int64_t i = 0; i < n; ++i) gb[at(plan->ib, i)] += g[i];
                }
            }
        });
    }
    return out;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const size_t nd = std::max(a.size(), b.size());
    Shape out(nd, 1);
    for (size_t i = 0; i < nd; ++i) {
        int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
        int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1) {
            fail(ErrorCode::ShapeMismatch, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
        out[nd - 1 - i] = da == 1 ? db : da;
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, Binary::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, Binary::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, Binary::Mul); }

Tensor scale(const Tensor& a, float s) {
    Tensor out = make_output(a.shape());
    auto ad = a.data();
    auto od = out.mutable_data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * s;
    check_finite(out, "scale");
    if (needs_record({&a})) {
        Tensor ca = a;
        record(OpKind::Scale, {a}, out, [ca, s](TensorImpl& o) mutable {
            if (float* ga = grad_target(*ca.impl()))
                for (size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * s;
        });
    }
    return out;
}

Tensor add_scalar(const Tensor& a, float s) {
    Tensor out = make_output(a.shape());
    auto ad = a.data();
    auto od = out.mutable_data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + s;
    check_finite(out, "add_scalar");
    if (needs_record({&a})) {
        Tensor ca = a;
        record(OpKind::AddScalar, {a}, out, [ca](TensorImpl& o) mutable {
            if (float* ga = grad_target(*ca.impl()))
                for (size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
        });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() < 2 || b.ndim() < 2) fail(ErrorCode::ShapeMismatch, "matmul needs rank >= 2 operands");
    const int64_t m = a.size(-2), k = a.size(-1);
    const int64_t kb = b.size(-2), n = b.size(-1);
    if (k != kb) {
        fail(ErrorCode::ShapeMismatch, "matmul inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    Shape batch_a(a.shape().begin(), a.shape().end() - 2);
    Shape batch_b(b.shape().begin(), b.shape().end() - 2);
    const bool shared_b = batch_b.empty();
    if (!shared_b && batch_a != batch_b) {
        fail(ErrorCode::ShapeMismatch, "matmul batch axes differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const int64_t batch = shape_numel(batch_a);
    Shape out_shape = batch_a;
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor out = make_output(out_shape);
    {
        auto ad = a.data();
        auto bd = b.data();
        auto od = out.mutable_data();
        if (shared_b) {
            gemm_nn(batch * m, n, k, ad.data(), bd.data(), od.data());
        } else {
            for (int64_t i = 0; i < batch; ++i)
                gemm_nn(m, n, k, ad.data() + i * m * k, bd.data() + i * k * n, od.data() + i * m * n);
        }
    }
    check_finite(out, "matmul");
    if (needs_record({&a, &b})) {
        Tensor ca = a, cb = b;
        record(OpKind::Matmul, {a, b}, out, [ca, cb, m, n, k, batch, shared_b](TensorImpl& o) mutable {
            const float* g = o.grad.data();
            if (float* ga = grad_target(*ca.impl())) {
                auto bd = cb.data();
                if (shared_b) {
                    gemm_nt(batch * m, k, n, g, bd.data(), ga);
                } else {
                    for (int64_t i = 0; i < batch; ++i)
                        gemm_nt(m, k, n, g + i * m * n, bd.data() + i * k * n, ga + i * m * k);
                }
            }
            if (float* gb = grad_target(*cb.impl())) {
                auto ad = ca.data();
                if (shared_b) {
                    gemm_tn(k, n, batch * m, ad.data(), g, gb);
                } else {
                    for (int64_t i = 0; i < batch; ++i)
                        gemm_tn(k, n, m, ad.data() + i * m * k, g + i * m * n, gb + i * k * n);
                }
            }
        });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias) {
    if (weight.ndim() != 2) fail(ErrorCode::ShapeMismatch, "linear weight must be [out, in]");
    const int64_t out_f = weight.size(0), in_f = weight.size(1);
    if (x.ndim() < 1 || x.size(-1) != in_f) {
        fail(ErrorCode::ShapeMismatch, "linear input " + shape_str(x.shape()) + " does not match weight " + shape_str(weight.shape()));
    }
    if (bias && (bias->ndim() != 1 || bias->size(0) != out_f)) {
        fail(ErrorCode::ShapeMismatch, "linear bias " + shape_str(bias->shape()) + " does not match weight " + shape_str(weight.shape()));
    }
    const int64_t rows = x.numel() / std::max<int64_t>(in_f, 1);
    Shape out_shape = x.shape();
    out_shape.back() = out_f;
    Tensor out = make_output(out_shape);
    {
        auto xd = x.data();
        auto wd = weight.data();
        auto od = out.mutable_data();
        if (bias) {
            auto bd = bias->data();
            for (int64_t r = 0; r < rows; ++r) std::copy(bd.begin(), bd.end(), od.begin() + r * out_f);
        }
        gemm_nt(rows, out_f, in_f, xd.data(), wd.data(), od.data());
    }
    check_finite(out, "linear");
    const Tensor* b = bias;
    if (needs_record({&x, &weight, b})) {
        Tensor cx = x, cw = weight;
        Tensor cbias = bias ? *bias : Tensor();
        std::vector<Tensor> inputs{x, weight};
        if (bias) inputs.push_back(*bias);
        record(OpKind::Linear, inputs, out, [cx, cw, cbias, rows, out_f, in_f](TensorImpl& o) mutable {
            const float* g = o.grad.data();
            if (float* gx = grad_target(*cx.impl())) {
                auto wd = cw.data();
                gemm_nn(rows, in_f, out_f, g, wd.data(), gx);
            }
            if (float* gw = grad_target(*cw.impl())) {
                auto xd = cx.data();
                gemm_tn(out_f, in_f, rows, g, xd.data(), gw);
            }
            if (cbias.defined()) {
                if (float* gb = grad_target(*cbias.impl())) {
                    for (int64_t r = 0; r < rows; ++r)
                        for (int64_t j = 0; j < out_f; ++j) gb[j] += g[r * out_f + j];
                }
            }
        });
    }
    return out;
}

Tensor softmax(const Tensor& x, int64_t axis) {
    const int64_t nd = x.ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) fail(ErrorCode::InvalidArgument, "softmax axis out of range for " + shape_str(x.shape()));
    const int64_t len = x.shape()[static_cast<size_t>(axis)];
    int64_t inner = 1;
    for (int64_t i = axis + 1; i < nd; ++i) inner *= x.shape()[static_cast<size_t>(i)];
    const int64_t outer = x.numel() / std::max<int64_t>(len * inner, 1);
    Tensor out = make_output(x.shape());
    {
        auto xd = x.data();
        auto od = out.mutable_data();
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t in = 0; in < inner; ++in) {
                const int64_t base = o * len * inner + in;
                float mx = -INFINITY;
                for (int64_t j = 0; j < len; ++j) mx = std::max(mx, xd[static_cast<size_t>(base + j * inner)]);
                double total = 0.0;
                for (int64_t j = 0; j < len; ++j) {
                    float e = std::exp(xd[static_cast<size_t>(base + j * inner)] - mx);
                    od[static_cast<size_t>(base + j * inner)] = e;
                    total += e;
                }
                for (int64_t j = 0; j < len; ++j)
                    od[static_cast<size_t>(base + j * inner)] = static_cast<float>(od[static_cast<size_t>(base + j * inner)] / total);
            }
        }
    }
    check_finite(out, "softmax");
    if (needs_record({&x})) {
        Tensor cx = x;
        Tensor y = out.detach();
        record(OpKind::Softmax, {x}, out, [cx, y, outer, inner, len](TensorImpl& o) mutable {
            float* gx = grad_target(*cx.impl());
            if (!gx) return;
            auto yd = y.data();
            const float* g = o.grad.data();
            for (int64_t oo = 0; oo < outer; ++oo) {
                for (int64_t in = 0; in < inner; ++in) {
                    const int64_t base = oo * len * inner + in;
                    double dot = 0.0;
                    for (int64_t j = 0; j < len; ++j) {
                        auto idx = static_cast<size_t>(base + j * inner);
                        dot += static_cast<double>(g[idx]) * yd[idx];
                    }
                    for (int64_t j = 0; j < len; ++j) {
                        auto idx = static_cast<size_t>(base + j * inner);
                        gx[idx] += yd[idx] * static_cast<float>(g[idx] - dot);
                    }
                }
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    if (x.ndim() < 1) fail(ErrorCode::ShapeMismatch, "layer_norm needs rank >= 1 input");
    const int64_t d = x.size(-1);
    if (d < 1) fail(ErrorCode::ShapeMismatch, "layer_norm over an empty axis");
    if (gamma.numel() != d || beta.numel() != d) {
        fail(ErrorCode::ShapeMismatch, "layer_norm affine params must be [" + std::to_string(d) + "]");
    }
    if (!(eps > 0.0f)) fail(ErrorCode::InvalidArgument, "layer_norm eps must be positive");
    const int64_t rows = x.numel() / d;
    Tensor out = make_output(x.shape());
    auto xhat = std::make_shared<std::vector<float>>(static_cast<size_t>(x.numel()));
    auto rstd = std::make_shared<std::vector<float>>(static_cast<size_t>(rows));
    {
        auto xd = x.data();
        auto gd = gamma.data();
        auto bd = beta.data();
        auto od = out.mutable_data();
        for (int64_t r = 0; r < rows; ++r) {
            const float* row = xd.data() + r * d;
            double m = 0.0;
            for (int64_t j = 0; j < d; ++j) m += row[j];
            m /= static_cast<double>(d);
            double var = 0.0;
            for (int64_t j = 0; j < d; ++j) {
                double c = row[j] - m;
                var += c * c;
            }
            var /= static_cast<double>(d);
            const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
            (*rstd)[static_cast<size_t>(r)] = rs;
            for (int64_t j = 0; j < d; ++j) {
                float xh = static_cast<float>(row[j] - m) * rs;
                (*xhat)[static_cast<size_t>(r * d + j)] = xh;
                od[static_cast<size_t>(r * d + j)] = xh * gd[static_cast<size_t>(j)] + bd[static_cast<size_t>(j)];
            }
        }
    }
    check_finite(out, "layer_norm");
    if (needs_record({&x, &gamma, &beta})) {
        Tensor cx = x, cg = gamma, cb = beta;
        record(OpKind::LayerNorm, {x, gamma, beta}, out, [cx, cg, cb, xhat, rstd, rows, d](TensorImpl& o) mutable {
            const float* g = o.grad.data();
            if (float* gg = grad_target(*cg.impl())) {
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * (*xhat)[static_cast<size_t>(r * d + j)];
            }
            if (float* gb = grad_target(*cb.impl())) {
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
            }
            if (float* gx = grad_target(*cx.impl())) {
                auto gd = cg.data();
                std::vector<float> dxh(static_cast<size_t>(d));
                for (int64_t r = 0; r < rows; ++r) {
                    double s1 = 0.0, s2 = 0.0;
                    for (int64_t j = 0; j < d; ++j) {
                        dxh[static_cast<size_t>(j)] = g[r * d + j] * gd[static_cast<size_t>(j)];
                        s1 += dxh[static_cast<size_t>(j)];
                        s2 += static_cast<double>(dxh[static_cast<size_t>(j)]) * (*xhat)[static_cast<size_t>(r * d + j)];
                    }
                    const double m1 = s1 / static_cast<double>(d), m2 = s2 / static_cast<double>(d);
                    const float rs = (*rstd)[static_cast<size_t>(r)];
                    for (int64_t j = 0; j < d; ++j) {
                        double v = dxh[static_cast<size_t>(j)] - m1 - (*xhat)[static_cast<size_t>(r * d + j)] * m2;
                        gx[r * d + j] += static_cast<float>(rs * v);
                    }
                }
            }
        });
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
    constexpr float kA = 0.044715f;
    Tensor out = make_output(x.shape());
    {
        auto xd = x.data();
        auto od = out.mutable_data();
        for (size_t i = 0; i < od.size(); ++i) {
            float v = xd[i];
            od[i] = 0.5f * v * (1.0f + std::tanh(kC * (v + kA * v * v * v)));
        }
    }
    check_finite(out, "gelu");
    if (needs_record({&x})) {
        Tensor cx = x;
        record(OpKind::Gelu, {x}, out, [cx](TensorImpl& o) mutable {
            float* gx = grad_target(*cx.impl());
            if (!gx) return;
            auto xd = cx.data();
            for (size_t i = 0; i < o.grad.size(); ++i) {
                float v = xd[i];
                float t = std::tanh(kC * (v + kA * v * v * v));
                float dt = (1.0f - t * t) * kC * (1.0f + 3.0f * kA * v * v);
                gx[i] += o.grad[i] * (0.5f * (1.0f + t) + 0.5f * v * dt);
            }
        });
    }
    return out;
}

Tensor embedding(const Tensor& table, const IdTensor& ids) {
    if (table.ndim() != 2) fail(ErrorCode::ShapeMismatch, "embedding table must be [V, d]");
    const int64_t vocab = table.size(0), d = table.size(1);
    for (size_t i = 0; i < ids.data.size(); ++i) {
        if (ids.data[i] < 0 || ids.data[i] >= vocab) {
            fail(ErrorCode::IndexOutOfRange, "token id " + std::to_string(ids.data[i]) + " at position " +
                                                 std::to_string(i) + " outside [0, " + std::to_string(vocab) + ")");
        }
    }
    Shape out_shape = ids.shape;
    out_shape.push_back(d);
    Tensor out = make_output(out_shape);
    {
        auto td = table.data();
        auto od = out.mutable_data();
        for (size_t i = 0; i < ids.data.size(); ++i) {
            std::copy_n(td.begin() + ids.data[i] * d, d, od.begin() + static_cast<int64_t>(i) * d);
        }
    }
    if (needs_record({&table})) {
        Tensor ct = table;
        auto saved = std::make_shared<std::vector<int32_t>>(ids.data);
        record(OpKind::Embedding, {table}, out, [ct, saved, d](TensorImpl& o) mutable {
            float* gt = grad_target(*ct.impl());
            if (!gt) return;
            for (size_t i = 0; i < saved->size(); ++i) {
                float* dst = gt + (*saved)[i] * d;
                const float* src = o.grad.data() + static_cast<int64_t>(i) * d;
                for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

void log_softmax_rows(std::span<const float> logits, int64_t rows, int64_t cols, std::span<float> out) {
    for (int64_t r = 0; r < rows; ++r) {
        const float* row = logits.data() + r * cols;
        float mx = -INFINITY;
        for (int64_t j = 0; j < cols; ++j) mx = std::max(mx, row[j]);
        double total = 0.0;
        for (int64_t j = 0; j < cols; ++j) total += std::exp(static_cast<double>(row[j] - mx));
        const double lse = mx + std::log(total);
        for (int64_t j = 0; j < cols; ++j) out[static_cast<size_t>(r * cols + j)] = static_cast<float>(row[j] - lse);
    }
}

Tensor cross_entropy(const Tensor& logits, const IdTensor& targets, int32_t ignore_index) {
    if (logits.ndim() < 1) fail(ErrorCode::ShapeMismatch, "cross_entropy logits need a class axis");
    const int64_t vocab = logits.size(-1);
    const int64_t rows = logits.numel() / std::max<int64_t>(vocab, 1);
    if (targets.numel() != rows) {
        fail(ErrorCode::ShapeMismatch, "targets " + shape_str(targets.shape) + " do not match logits " + shape_str(logits.shape()));
    }
    auto probs = std::make_shared<std::vector<float>>(static_cast<size_t>(logits.numel()));
    auto saved_targets = std::make_shared<std::vector<int32_t>>(targets.data);
    double total = 0.0;
    int64_t count = 0;
    {
        auto ld = logits.data();
        for (int64_t r = 0; r < rows; ++r) {
            const int32_t t = targets.data[static_cast<size_t>(r)];
            if (t == ignore_index) continue;
            if (t < 0 || t >= vocab) {
                fail(ErrorCode::IndexOutOfRange, "target " + std::to_string(t) + " at position " + std::to_string(r) +
                                                     " outside [0, " + std::to_string(vocab) + ")");
            }
            const float* row = ld.data() + r * vocab;
            float mx = -INFINITY;
            for (int64_t j = 0; j < vocab; ++j) mx = std::max(mx, row[j]);
            double z = 0.0;
            for (int64_t j = 0; j < vocab; ++j) z += std::exp(static_cast<double>(row[j] - mx));
            const double lse = mx + std::log(z);
            total += lse - row[t];
            for (int64_t j = 0; j < vocab; ++j)
                (*probs)[static_cast<size_t>(r * vocab + j)] = static_cast<float>(std::exp(row[j] - lse));
            ++count;
        }
    }
    if (count == 0) fail(ErrorCode::AllTargetsIgnored, "every target equals ignore_index");
    Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(count)));
    check_finite(out, "cross_entropy");
    if (needs_record({&logits})) {
        Tensor cl = logits;
        record(OpKind::CrossEntropy, {logits}, out,
               [cl, probs, saved_targets, rows, vocab, count, ignore_index](TensorImpl& o) mutable {
                   float* gl = grad_target(*cl.impl());
                   if (!gl) return;
                   const float up = o.grad[0] / static_cast<float>(count);
                   for (int64_t r = 0; r < rows; ++r) {
                       const int32_t t = (*saved_targets)[static_cast<size_t>(r)];
                       if (t == ignore_index) continue;
                       for (int64_t j = 0; j < vocab; ++j) {
                           float p = (*probs)[static_cast<size_t>(r * vocab + j)];
                           gl[r * vocab + j] += up * (p - (j == t ? 1.0f : 0.0f));
                       }
                   }
               });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (float v : x.data()) total += v;
    Tensor out = Tensor::scalar(static_cast<float>(total));
    if (needs_record({&x})) {
        Tensor cx = x;
        record(OpKind::Sum, {x}, out, [cx](TensorImpl& o) mutable {
            float* gx = grad_target(*cx.impl());
            if (!gx) return;
            const int64_t n = cx.numel();
            for (int64_t i = 0; i < n; ++i) gx[i] += o.grad[0];
        });
    }
    return out;
}

Tensor mean(const Tensor& x) {
    const int64_t n = x.numel();
    if (n == 0) fail(ErrorCode::InvalidArgument, "mean of an empty tensor");
    double total = 0.0;
    for (float v : x.data()) total += v;
    Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(n)));
    if (needs_record({&x})) {
        Tensor cx = x;
        record(OpKind::Mean, {x}, out, [cx, n](TensorImpl& o) mutable {
            float* gx = grad_target(*cx.impl());
            if (!gx) return;
            const float g = o.grad[0] / static_cast<float>(n);
            for (int64_t i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, const Shape& shape) {
    if (shape_numel(shape) != x.numel()) {
        fail(ErrorCode::ShapeMismatch, "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    Tensor out = make_output(shape);
    {
        auto xd = x.data();
        std::copy(xd.begin(), xd.end(), out.mutable_data().begin());
    }
    if (needs_record({&x})) {
        Tensor cx = x;
        record(OpKind::Reshape, {x}, out, [cx](TensorImpl& o) mutable { accumulate_grad(*cx.impl(), o.grad); });
    }
    return out;
}

Tensor dropout(const Tensor& x, float p, Rng& rng) {
    if (p < 0.0f || p >= 1.0f) fail(ErrorCode::InvalidArgument, "dropout probability must be in [0, 1)");
    if (p == 0.0f) return x;
    const float keep_scale = 1.0f / (1.0f - p);
    auto mask = std::make_shared<std::vector<float>>(static_cast<size_t>(x.numel()));
    for (auto& m : *mask) m = rng.uniform(0.0f, 1.0f) < p ? 0.0f : keep_scale;
    Tensor out = make_output(x.shape());
    {
        auto xd = x.data();
        auto od = out.mutable_data();
        for (size_t i = 0; i < od.size(); ++i) od[i] = xd[i] * (*mask)[i];
    }
    if (needs_record({&x})) {
        Tensor cx = x;
        record(OpKind::Dropout, {x}, out, [cx, mask](TensorImpl& o) mutable {
            float* gx = grad_target(*cx.impl());
            if (!gx) return;
            for (size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i] * (*mask)[i];
        });
    }
    return out;
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, int64_t n_heads) {
    if (q.ndim() != 3 || k.ndim() != 3 || v.ndim() != 3) fail(ErrorCode::ShapeMismatch, "attention expects [B, T, D] inputs");
    const int64_t B = q.size(0), Tq = q.size(1), D = q.size(2);
    const int64_t Tk = k.size(1);
    if (k.size(0) != B || v.size(0) != B || k.size(2) != D || v.size(2) != D || v.size(1) != Tk) {
        fail(ErrorCode::ShapeMismatch, "attention q/k/v shapes disagree: " + shape_str(q.shape()) + ", " +
                                           shape_str(k.shape()) + ", " + shape_str(v.shape()));
    }
    if (Tk < Tq) fail(ErrorCode::ShapeMismatch, "attention needs at least as many keys as queries");
    if (n_heads <= 0 || D % n_heads != 0) fail(ErrorCode::InvalidConfig, "model width not divisible by head count");
    const int64_t hd = D / n_heads;
    const int64_t offset = Tk - Tq;
    const float sc = 1.0f / std::sqrt(static_cast<float>(hd));
    // Probabilities, [B, H, Tq, Tk]; masked entries stay exactly 0.
    auto probs = std::make_shared<std::vector<float>>(static_cast<size_t>(B * n_heads * Tq * Tk), 0.0f);
    Tensor out = make_output(q.shape());
    {
        auto qd = q.data();
        auto kd = k.data();
        auto vd = v.data();
        auto od = out.mutable_data();
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t h = 0; h < n_heads; ++h) {
                for (int64_t i = 0; i < Tq; ++i) {
                    const float* qi = qd.data() + (b * Tq + i) * D + h * hd;
                    float* p = probs->data() + ((b * n_heads + h) * Tq + i) * Tk;
                    const int64_t last = offset + i;
                    float mx = -INFINITY;
                    for (int64_t j = 0; j <= last; ++j) {
                        const float* kj = kd.data() + (b * Tk + j) * D + h * hd;
                        float s = 0.0f;
                        for (int64_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
                        p[j] = s * sc;
                        mx = std::max(mx, p[j]);
                    }
                    double total = 0.0;
                    for (int64_t j = 0; j <= last; ++j) {
                        p[j] = std::exp(p[j] - mx);
                        total += p[j];
                    }
                    for (int64_t j = 0; j <= last; ++j) p[j] = static_cast<float>(p[j] / total);
                    float* oi = od.data() + (b * Tq + i) * D + h * hd;
                    for (int64_t j = 0; j <= last; ++j) {
                        const float* vj = vd.data() + (b * Tk + j) * D + h * hd;
                        for (int64_t c = 0; c < hd; ++c) oi[c] += p[j] * vj[c];
                    }
                }
            }
        }
    }
    check_finite(out, "attention");
    if (needs_record({&q, &k, &v})) {
        Tensor cq = q, ck = k, cv = v;
        record(OpKind::Attention, {q, k, v}, out, [cq, ck, cv, probs, B, Tq, Tk, D, n_heads, hd, offset, sc](TensorImpl& o) mutable {
            float* gq = grad_target(*cq.impl());
            float* gk = grad_target(*ck.impl());
            float* gv = grad_target(*cv.impl());
            auto qd = cq.data();
            auto kd = ck.data();
            auto vd = cv.data();
            const float* g = o.grad.data();
            std::vector<float> dp(static_cast<size_t>(Tk));
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t h = 0; h < n_heads; ++h) {
                    for (int64_t i = 0; i < Tq; ++i) {
                        const float* gi = g + (b * Tq + i) * D + h * hd;
                        const float* p = probs->data() + ((b * n_heads + h) * Tq + i) * Tk;
                        const int64_t last = offset + i;
                        double dot = 0.0;
                        for (int64_t j = 0; j <= last; ++j) {
                            const float* vj = vd.data() + (b * Tk + j) * D + h * hd;
                            float s = 0.0f;
                            for (int64_t c = 0; c < hd; ++c) s += gi[c] * vj[c];
                            dp[static_cast<size_t>(j)] = s;
                            dot += static_cast<double>(s) * p[j];
                            if (gv) {
                                float* gvj = gv + (b * Tk + j) * D + h * hd;
                                for (int64_t c = 0; c < hd; ++c) gvj[c] += p[j] * gi[c];
                            }
                        }
                        const float* qi = qd.data() + (b * Tq + i) * D + h * hd;
                        float* gqi = gq ? gq + (b * Tq + i) * D + h * hd : nullptr;
                        for (int64_t j = 0; j <= last; ++j) {
                            const float ds = p[j] * static_cast<float>(dp[static_cast<size_t>(j)] - dot) * sc;
                            if (ds == 0.0f) continue;
                            const float* kj = kd.data() + (b * Tk + j) * D + h * hd;
                            if (gqi)
                                for (int64_t c = 0; c < hd; ++c) gqi[c] += ds * kj[c];
                            if (gk) {
                                float* gkj = gk + (b * Tk + j) * D + h * hd;
                                for (int64_t c = 0; c < hd; ++c) gkj[c] += ds * qi[c];
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace mft
