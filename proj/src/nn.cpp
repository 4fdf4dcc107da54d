/**
 * @file nn.cpp
 */
#include "mft/nn.h"

#include <cmath>

#include "mft/error.h"
#include "mft/tape.h"

namespace mft {

Linear Linear::create(int64_t in_features, int64_t out_features, bool with_bias, Rng& rng, float stddev) {
    Linear l;
    l.weight = Tensor::randn({out_features, in_features}, stddev, rng, true);
    if (with_bias) l.bias = Tensor::zeros({out_features}, true);
    return l;
}

Tensor Linear::forward(const Tensor& x) const {
    return linear(x, weight, bias.defined() ? &bias : nullptr);
}

void Linear::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".weight", weight, prefix, true});
    if (bias.defined()) out.push_back({prefix + ".bias", bias, prefix, false});
}

void LoRAConfig::validate() const {
    if (rank <= 0) fail(ErrorCode::InvalidConfig, "LoRA rank must be positive");
    if (!(alpha > 0.0f) || !std::isfinite(scaling())) fail(ErrorCode::InvalidConfig, "LoRA alpha must be positive");
    if (dropout < 0.0f || dropout >= 1.0f) fail(ErrorCode::InvalidConfig, "LoRA dropout must be in [0, 1)");
}

LoRALinear LoRALinear::wrap(Linear base, const LoRAConfig& config, Rng& rng) {
    config.validate();
    LoRALinear l;
    l.base = std::move(base);
    l.base.weight.set_requires_grad(false);
    if (l.base.bias.defined()) l.base.bias.set_requires_grad(false);
    l.A = Tensor::randn({config.rank, l.base.in_features()}, config.init_std, rng, true);
    l.B = Tensor::zeros({l.base.out_features(), config.rank}, true);
    l.scaling = config.scaling();
    l.dropout = config.dropout;
    return l;
}

Tensor LoRALinear::forward(const Tensor& x, const ForwardCtx& ctx) const {
    Tensor y = base.forward(x);
    Tensor h = x;
    if (ctx.training && dropout > 0.0f) {
        if (!ctx.rng) fail(ErrorCode::InvalidArgument, "LoRA dropout needs a random source while training");
        h = mft::dropout(x, dropout, *ctx.rng);
    }
    Tensor delta = linear(linear(h, A), B);
    return add(y, scale(delta, scaling));
}

Linear LoRALinear::merge() const {
    const int64_t out_f = base.out_features(), in_f = base.in_features(), r = A.size(0);
    std::vector<float> w = base.weight.to_vector();
    auto a = A.data();
    auto b = B.data();
    for (int64_t o = 0; o < out_f; ++o) {
        for (int64_t i = 0; i < in_f; ++i) {
            float acc = 0.0f;
            for (int64_t k = 0; k < r; ++k) acc += b[static_cast<size_t>(o * r + k)] * a[static_cast<size_t>(k * in_f + i)];
            w[static_cast<size_t>(o * in_f + i)] += scaling * acc;
        }
    }
    Linear merged;
    merged.weight = Tensor::from({out_f, in_f}, std::move(w), false);
    if (base.bias.defined()) merged.bias = base.bias.detach();
    return merged;
}

void LoRALinear::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    base.collect(prefix, out);
    out.push_back({prefix + ".lora_A", A, prefix, true});
    out.push_back({prefix + ".lora_B", B, prefix, true});
}

Tensor Projection::forward(const Tensor& x, const ForwardCtx& ctx) const {
    if (auto* l = std::get_if<LoRALinear>(&impl_)) return l->forward(x, ctx);
    return std::get<Linear>(impl_).forward(x);
}

const Linear& Projection::base() const {
    if (auto* l = std::get_if<LoRALinear>(&impl_)) return l->base;
    return std::get<Linear>(impl_);
}

void Projection::attach(const LoRAConfig& config, Rng& rng) {
    if (has_lora()) fail(ErrorCode::InvalidArgument, "projection already carries a LoRA adapter");
    impl_ = LoRALinear::wrap(std::get<Linear>(impl_), config, rng);
}

void Projection::merge() {
    if (auto* l = std::get_if<LoRALinear>(&impl_)) {
        Linear merged = l->merge();
        impl_ = std::move(merged);
    }
}

void Projection::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    if (auto* l = std::get_if<LoRALinear>(&impl_)) {
        l->collect(prefix, out);
    } else {
        std::get<Linear>(impl_).collect(prefix, out);
    }
}

LayerNorm LayerNorm::create(int64_t d) {
    LayerNorm ln;
    ln.weight = Tensor::full({d}, 1.0f, true);
    ln.bias = Tensor::zeros({d}, true);
    return ln;
}

void LayerNorm::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".weight", weight, prefix, false});
    out.push_back({prefix + ".bias", bias, prefix, false});
}

Attention Attention::create(int64_t d_model, int64_t n_heads, int64_t max_seq_len, int64_t n_layers, Rng& rng) {
    if (n_heads <= 0 || d_model % n_heads != 0) fail(ErrorCode::InvalidConfig, "d_model must be divisible by n_heads");
    Attention a;
    a.n_heads = n_heads;
    a.head_dim = d_model / n_heads;
    a.max_seq_len = max_seq_len;
    a.q_proj = Projection(Linear::create(d_model, d_model, true, rng));
    a.k_proj = Projection(Linear::create(d_model, d_model, true, rng));
    a.v_proj = Projection(Linear::create(d_model, d_model, true, rng));
    // Residual projections get the depth-scaled init used by GPT-2.
    a.o_proj = Projection(Linear::create(d_model, d_model, true, rng, 0.02f / std::sqrt(2.0f * static_cast<float>(n_layers))));
    return a;
}

Tensor Attention::forward(const Tensor& x, const ForwardCtx& ctx) const {
    if (x.ndim() != 3) fail(ErrorCode::ShapeMismatch, "attention input must be [B, T, d]");
    if (x.size(1) > max_seq_len) {
        fail(ErrorCode::SequenceTooLong, "sequence length " + std::to_string(x.size(1)) + " exceeds " + std::to_string(max_seq_len));
    }
    Tensor q = q_proj.forward(x, ctx);
    Tensor k = k_proj.forward(x, ctx);
    Tensor v = v_proj.forward(x, ctx);
    return o_proj.forward(causal_attention(q, k, v, n_heads), ctx);
}

Tensor Attention::forward_cached(const Tensor& x, KVLayer& cache, int64_t past) const {
    const int64_t B = x.size(0), Tn = x.size(1), D = x.size(2);
    const int64_t total = past + Tn;
    if (total > max_seq_len) {
        fail(ErrorCode::SequenceTooLong, "sequence length " + std::to_string(total) + " exceeds " + std::to_string(max_seq_len));
    }
    ForwardCtx eval;
    Tensor q = q_proj.forward(x, eval);
    Tensor k = k_proj.forward(x, eval);
    Tensor v = v_proj.forward(x, eval);
    auto append = [&](std::vector<float>& store, const Tensor& fresh) {
        std::vector<float> merged(static_cast<size_t>(B * total * D));
        auto fd = fresh.data();
        for (int64_t b = 0; b < B; ++b) {
            if (past > 0) {
                std::copy_n(store.begin() + b * past * D, past * D, merged.begin() + b * total * D);
            }
            std::copy_n(fd.begin() + b * Tn * D, Tn * D, merged.begin() + (b * total + past) * D);
        }
        store = std::move(merged);
    };
    append(cache.k, k);
    append(cache.v, v);
    Tensor kt = Tensor::from({B, total, D}, cache.k);
    Tensor vt = Tensor::from({B, total, D}, cache.v);
    return o_proj.forward(causal_attention(q, kt, vt, n_heads), eval);
}

void Attention::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    q_proj.collect(prefix + ".q_proj", out);
    k_proj.collect(prefix + ".k_proj", out);
    v_proj.collect(prefix + ".v_proj", out);
    o_proj.collect(prefix + ".o_proj", out);
}

MLP MLP::create(int64_t d_model, int64_t n_layers, Rng& rng) {
    MLP m;
    m.fc_in = Projection(Linear::create(d_model, 4 * d_model, true, rng));
    m.fc_out = Projection(Linear::create(4 * d_model, d_model, true, rng, 0.02f / std::sqrt(2.0f * static_cast<float>(n_layers))));
    return m;
}

Tensor MLP::forward(const Tensor& x, const ForwardCtx& ctx) const {
    return fc_out.forward(gelu(fc_in.forward(x, ctx)), ctx);
}

void MLP::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    fc_in.collect(prefix + ".fc_in", out);
    fc_out.collect(prefix + ".fc_out", out);
}

Tensor Block::forward(const Tensor& x, const ForwardCtx& ctx) const {
    Tensor h = add(x, attn.forward(ln_1.forward(x), ctx));
    return add(h, mlp.forward(ln_2.forward(h), ctx));
}

Tensor Block::forward_cached(const Tensor& x, KVLayer& cache, int64_t past) const {
    ForwardCtx eval;
    Tensor h = add(x, attn.forward_cached(ln_1.forward(x), cache, past));
    return add(h, mlp.forward(ln_2.forward(h), eval));
}

void Block::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    ln_1.collect(prefix + ".ln_1", out);
    attn.collect(prefix + ".attn", out);
    ln_2.collect(prefix + ".ln_2", out);
    mlp.collect(prefix + ".mlp", out);
}

}  // namespace mft
