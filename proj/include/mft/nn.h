/**
 * @file nn.h
 * @brief Transformer building blocks and the LoRA adapter family.
 */
#pragma once

#include <string>
#include <variant>
#include <vector>

#include "mft/ops.h"
#include "mft/rng.h"
#include "mft/tensor.h"

namespace mft {

struct ForwardCtx {
    bool training = false;
    /// Needed only when training with dropout > 0.
    Rng* rng = nullptr;
};

/// A parameter as the model registry sees it.
struct NamedParam {
    std::string name;
    Tensor tensor;
    /// Owning module path; parameters of one module always shard together.
    std::string unit;
    bool decay = true;
};

struct Linear {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out] or undefined

    static Linear create(int64_t in_features, int64_t out_features, bool with_bias, Rng& rng, float stddev = 0.02f);

    int64_t in_features() const { return weight.size(1); }
    int64_t out_features() const { return weight.size(0); }
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct LoRAConfig {
    int64_t rank = 8;
    float alpha = 32.0f;
    float dropout = 0.1f;
    /// Projection role names to adapt: q_proj, k_proj, v_proj, o_proj, fc_in, fc_out.
    std::vector<std::string> targets{"q_proj", "v_proj"};
    /// Stddev of the normal init for A.
    float init_std = 0.02f;

    float scaling() const { return alpha / static_cast<float>(rank); }
    void validate() const;
};

struct LoRALinear {
    Linear base;   // frozen
    Tensor A;      // [r, in]
    Tensor B;      // [out, r], zero at init
    float scaling = 1.0f;
    float dropout = 0.0f;

    static LoRALinear wrap(Linear base, const LoRAConfig& config, Rng& rng);

    /// base(x) + scaling * (dropout(x) A^T) B^T; dropout only while training.
    Tensor forward(const Tensor& x, const ForwardCtx& ctx) const;
    /// Plain linear with weight + scaling * B A.
    Linear merge() const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

/// A linear slot inside a block that may carry a LoRA adapter.
class Projection {
public:
    Projection() = default;
    explicit Projection(Linear linear) : impl_(std::move(linear)) {}

    Tensor forward(const Tensor& x, const ForwardCtx& ctx) const;
    const Linear& base() const;
    bool has_lora() const { return std::holds_alternative<LoRALinear>(impl_); }
    LoRALinear* lora() { return std::get_if<LoRALinear>(&impl_); }
    const LoRALinear* lora() const { return std::get_if<LoRALinear>(&impl_); }
    void attach(const LoRAConfig& config, Rng& rng);
    /// Folds an attached adapter into the base weight.
    void merge();
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;

private:
    std::variant<Linear, LoRALinear> impl_;
};

struct LayerNorm {
    Tensor weight;
    Tensor bias;
    float eps = 1e-5f;

    static LayerNorm create(int64_t d);
    Tensor forward(const Tensor& x) const { return layer_norm(x, weight, bias, eps); }
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

/// Key/value history of one attention layer, [B, T_cached, D] row-major.
struct KVLayer {
    std::vector<float> k;
    std::vector<float> v;
};

struct Attention {
    int64_t n_heads = 1;
    int64_t head_dim = 1;
    int64_t max_seq_len = 1;
    Projection q_proj, k_proj, v_proj, o_proj;

    static Attention create(int64_t d_model, int64_t n_heads, int64_t max_seq_len, int64_t n_layers, Rng& rng);
    /// x [B, T, d] -> [B, T, d]; errors with SequenceTooLong when T > max_seq_len.
    Tensor forward(const Tensor& x, const ForwardCtx& ctx) const;
    /// Incremental form: appends this call's keys/values to `cache` holding `past` positions.
    Tensor forward_cached(const Tensor& x, KVLayer& cache, int64_t past) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct MLP {
    Projection fc_in, fc_out;

    static MLP create(int64_t d_model, int64_t n_layers, Rng& rng);
    Tensor forward(const Tensor& x, const ForwardCtx& ctx) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct Block {
    LayerNorm ln_1;
    Attention attn;
    LayerNorm ln_2;
    MLP mlp;

    Tensor forward(const Tensor& x, const ForwardCtx& ctx) const;
    Tensor forward_cached(const Tensor& x, KVLayer& cache, int64_t past) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

}  // namespace mft
