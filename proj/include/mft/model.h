/**
 * @file model.h
 * @brief GPT-2 family decoder, LoRA attachment, trainable-parameter selection
 *        and greedy generation with a KV cache.
 */
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mft/nn.h"

namespace mft {

struct ModelConfig {
    int64_t vocab_size = 256;
    int64_t d_model = 64;
    int64_t n_layers = 2;
    int64_t n_heads = 4;
    int64_t max_seq_len = 128;
    bool tie_embeddings = true;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;

    static ModelConfig gpt2_small();
    static ModelConfig gpt2_medium();
};

/// Closed-form parameter count for a config; equals the built model's count.
int64_t parameter_count(const ModelConfig& config);

/// Anything that maps token ids [B, T] to next-token logits [B, T, V].
class LanguageModel {
public:
    virtual ~LanguageModel() = default;
    virtual Tensor logits(const IdTensor& ids) = 0;
    virtual int64_t vocab_size() const = 0;
    virtual int64_t max_seq_len() const = 0;
};

enum class FinetuneMode { FullFT, LoRA };

struct KVCache {
    std::vector<KVLayer> layers;
    int64_t length = 0;
    int64_t capacity = 0;
};

class GPT2Model : public LanguageModel {
public:
    /// Random init (N(0, 0.02), depth-scaled residual projections); InvalidConfig on a bad config.
    static std::unique_ptr<GPT2Model> build(const ModelConfig& config, uint64_t seed = 0);

    GPT2Model(const GPT2Model&) = delete;
    GPT2Model& operator=(const GPT2Model&) = delete;

    const ModelConfig& config() const { return config_; }

    /// ids [B, T] -> logits [B, T, V].
    Tensor forward(const IdTensor& ids, const ForwardCtx& ctx) const;
    Tensor compute_loss(const Tensor& logits, const IdTensor& targets) const;
    /// Runs only the new positions, reading and extending `cache`.
    Tensor forward_cached(const IdTensor& ids, KVCache& cache) const;
    KVCache make_cache(int64_t batch = 1) const;

    Tensor logits(const IdTensor& ids) override;
    int64_t vocab_size() const override { return config_.vocab_size; }
    int64_t max_seq_len() const override { return config_.max_seq_len; }

    /// Parameters in model-definition order.
    std::vector<NamedParam> parameters() const;
    /// MissingTensor when absent.
    Tensor parameter(const std::string& name) const;
    int64_t num_parameters() const;

    /// Freezes everything, then wraps each projection whose role is in config.targets.
    /// Returns the number of adapter parameters. NoTargetsMatched when nothing matches.
    int64_t attach_lora(const LoRAConfig& config, uint64_t seed);
    const std::optional<LoRAConfig>& lora_config() const { return lora_; }
    /// Folds adapters into base weights and drops them.
    void merge_lora();

    std::vector<Block>& blocks() { return blocks_; }
    const std::vector<Block>& blocks() const { return blocks_; }

private:
    GPT2Model() = default;
    Tensor head_weight() const { return config_.tie_embeddings ? wte_ : lm_head_; }
    Tensor embed(const IdTensor& ids, int64_t past) const;

    ModelConfig config_;
    Tensor wte_;
    Tensor wpe_;
    std::vector<Block> blocks_;
    LayerNorm ln_f_;
    Tensor lm_head_;
    std::optional<LoRAConfig> lora_;
};

/// FullFT: every parameter. LoRA: exactly the adapter tensors.
std::vector<NamedParam> trainable_params(const GPT2Model& model, FinetuneMode mode);

/// Greedy continuation of a single prompt. SequenceTooLong when prompt + max_new > max_seq_len.
std::vector<int32_t> generate(const GPT2Model& model, std::span<const int32_t> prompt, int64_t max_new, bool use_cache = true);

}  // namespace mft
