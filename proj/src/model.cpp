/**
 * @file model.cpp
 */
#include "mft/model.h"

#include <algorithm>

#include "mft/error.h"
#include "mft/tape.h"

namespace mft {

void ModelConfig::validate() const {
    if (vocab_size <= 0 || d_model <= 0 || n_layers <= 0 || n_heads <= 0 || max_seq_len <= 0) {
        fail(ErrorCode::InvalidConfig, "model dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        fail(ErrorCode::InvalidConfig, "d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
    }
}

ModelConfig ModelConfig::gpt2_small() { return {50257, 768, 12, 12, 1024, true}; }
ModelConfig ModelConfig::gpt2_medium() { return {50257, 1024, 24, 16, 1024, true}; }

int64_t parameter_count(const ModelConfig& c) {
    const int64_t d = c.d_model;
    const int64_t per_block = 12 * d * d + 13 * d;
    int64_t total = c.vocab_size * d + c.max_seq_len * d + c.n_layers * per_block + 2 * d;
    if (!c.tie_embeddings) total += c.vocab_size * d;
    return total;
}

std::unique_ptr<GPT2Model> GPT2Model::build(const ModelConfig& config, uint64_t seed) {
    config.validate();
    std::unique_ptr<GPT2Model> m(new GPT2Model());
    m->config_ = config;
    Rng rng(seed);
    m->wte_ = Tensor::randn({config.vocab_size, config.d_model}, 0.02f, rng, true);
    m->wpe_ = Tensor::randn({config.max_seq_len, config.d_model}, 0.01f, rng, true);
    m->blocks_.reserve(static_cast<size_t>(config.n_layers));
    for (int64_t i = 0; i < config.n_layers; ++i) {
        Block b;
        b.ln_1 = LayerNorm::create(config.d_model);
        b.attn = Attention::create(config.d_model, config.n_heads, config.max_seq_len, config.n_layers, rng);
        b.ln_2 = LayerNorm::create(config.d_model);
        b.mlp = MLP::create(config.d_model, config.n_layers, rng);
        m->blocks_.push_back(std::move(b));
    }
    m->ln_f_ = LayerNorm::create(config.d_model);
    if (!config.tie_embeddings) m->lm_head_ = Tensor::randn({config.vocab_size, config.d_model}, 0.02f, rng, true);
    return m;
}

Tensor GPT2Model::embed(const IdTensor& ids, int64_t past) const {
    if (ids.shape.size() != 2) fail(ErrorCode::ShapeMismatch, "token ids must be [B, T]");
    const int64_t T = ids.shape[1];
    if (past + T > config_.max_seq_len) {
        fail(ErrorCode::SequenceTooLong, "sequence length " + std::to_string(past + T) + " exceeds max_seq_len " +
                                             std::to_string(config_.max_seq_len));
    }
    std::vector<int32_t> pos(static_cast<size_t>(T));
    for (int64_t t = 0; t < T; ++t) pos[static_cast<size_t>(t)] = static_cast<int32_t>(past + t);
    Tensor tok = embedding(wte_, ids);
    Tensor p = embedding(wpe_, IdTensor({T}, std::move(pos)));
    return add(tok, p);
}

Tensor GPT2Model::forward(const IdTensor& ids, const ForwardCtx& ctx) const {
    Tensor x = embed(ids, 0);
    for (const auto& b : blocks_) x = b.forward(x, ctx);
    x = ln_f_.forward(x);
    return linear(x, head_weight());
}

Tensor GPT2Model::compute_loss(const Tensor& logits, const IdTensor& targets) const {
    return cross_entropy(logits, targets);
}

KVCache GPT2Model::make_cache(int64_t /*batch*/) const {
    KVCache cache;
    cache.layers.resize(blocks_.size());
    cache.capacity = config_.max_seq_len;
    return cache;
}

Tensor GPT2Model::forward_cached(const IdTensor& ids, KVCache& cache) const {
    NoGradGuard no_grad;
    if (cache.layers.size() != blocks_.size()) fail(ErrorCode::InvalidArgument, "KV cache does not match the model depth");
    Tensor x = embed(ids, cache.length);
    for (size_t i = 0; i < blocks_.size(); ++i) x = blocks_[i].forward_cached(x, cache.layers[i], cache.length);
    cache.length += ids.shape[1];
    x = ln_f_.forward(x);
    return linear(x, head_weight());
}

Tensor GPT2Model::logits(const IdTensor& ids) {
    NoGradGuard no_grad;
    return forward(ids, ForwardCtx{});
}

std::vector<NamedParam> GPT2Model::parameters() const {
    std::vector<NamedParam> out;
    out.push_back({"wte.weight", wte_, "wte", true});
    out.push_back({"wpe.weight", wpe_, "wpe", true});
    for (size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("h." + std::to_string(i), out);
    ln_f_.collect("ln_f", out);
    if (!config_.tie_embeddings) out.push_back({"lm_head.weight", lm_head_, "lm_head", true});
    return out;
}

Tensor GPT2Model::parameter(const std::string& name) const {
    for (auto& p : parameters()) {
        if (p.name == name) return p.tensor;
    }
    fail(ErrorCode::MissingTensor, "no parameter named '" + name + "'");
}

int64_t GPT2Model::num_parameters() const {
    int64_t n = 0;
    for (auto& p : parameters()) n += p.tensor.numel();
    return n;
}

int64_t GPT2Model::attach_lora(const LoRAConfig& config, uint64_t seed) {
    config.validate();
    if (lora_) fail(ErrorCode::InvalidArgument, "model already carries LoRA adapters");
    auto wants = [&](const char* role) {
        return std::find(config.targets.begin(), config.targets.end(), role) != config.targets.end();
    };
    std::vector<Projection*> matched;
    for (auto& b : blocks_) {
        if (wants("q_proj")) matched.push_back(&b.attn.q_proj);
        if (wants("k_proj")) matched.push_back(&b.attn.k_proj);
        if (wants("v_proj")) matched.push_back(&b.attn.v_proj);
        if (wants("o_proj")) matched.push_back(&b.attn.o_proj);
        if (wants("fc_in")) matched.push_back(&b.mlp.fc_in);
        if (wants("fc_out")) matched.push_back(&b.mlp.fc_out);
    }
    if (matched.empty()) fail(ErrorCode::NoTargetsMatched, "LoRA target selector matched no projection");
    for (auto& p : parameters()) {
        if (p.tensor.requires_grad()) p.tensor.set_requires_grad(false);
    }
    Rng rng(seed);
    int64_t added = 0;
    for (auto* proj : matched) {
        proj->attach(config, rng);
        added += proj->lora()->A.numel() + proj->lora()->B.numel();
    }
    lora_ = config;
    return added;
}

void GPT2Model::merge_lora() {
    for (auto& b : blocks_) {
        for (auto* proj : {&b.attn.q_proj, &b.attn.k_proj, &b.attn.v_proj, &b.attn.o_proj, &b.mlp.fc_in, &b.mlp.fc_out}) {
            proj->merge();
        }
    }
    lora_.reset();
}

std::vector<NamedParam> trainable_params(const GPT2Model& model, FinetuneMode mode) {
    auto all = model.parameters();
    if (mode == FinetuneMode::FullFT) return all;
    std::vector<NamedParam> out;
    for (auto& p : all) {
        if (p.name.ends_with(".lora_A") || p.name.ends_with(".lora_B")) out.push_back(p);
    }
    return out;
}

namespace {
int32_t argmax_last_row(const Tensor& logits) {
    const int64_t V = logits.size(-1);
    auto d = logits.data();
    const float* row = d.data() + (logits.numel() - V);
    return static_cast<int32_t>(std::max_element(row, row + V) - row);
}
}  // namespace

std::vector<int32_t> generate(const GPT2Model& model, std::span<const int32_t> prompt, int64_t max_new, bool use_cache) {
    std::vector<int32_t> ids(prompt.begin(), prompt.end());
    if (max_new <= 0) return ids;
    if (ids.empty()) fail(ErrorCode::InvalidArgument, "generation needs a non-empty prompt");
    const int64_t total = static_cast<int64_t>(ids.size()) + max_new;
    if (total > model.config().max_seq_len) {
        fail(ErrorCode::SequenceTooLong, "prompt plus " + std::to_string(max_new) + " new tokens exceeds max_seq_len " +
                                             std::to_string(model.config().max_seq_len));
    }
    NoGradGuard no_grad;
    if (use_cache) {
        KVCache cache = model.make_cache();
        Tensor logits = model.forward_cached(IdTensor({1, static_cast<int64_t>(ids.size())}, ids), cache);
        for (int64_t step = 0; step < max_new; ++step) {
            int32_t next = argmax_last_row(logits);
            ids.push_back(next);
            if (step + 1 == max_new) break;
            logits = model.forward_cached(IdTensor({1, 1}, {next}), cache);
        }
    } else {
        for (int64_t step = 0; step < max_new; ++step) {
            Tensor logits = model.forward(IdTensor({1, static_cast<int64_t>(ids.size())}, ids), ForwardCtx{});
            ids.push_back(argmax_last_row(logits));
        }
    }
    return ids;
}

}  // namespace mft
