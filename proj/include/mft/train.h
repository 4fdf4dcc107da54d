/**
 * @file train.h
 * @brief Training loop with gradient accumulation, sharding and throttling hooks,
 *        plus perplexity and multiple-choice evaluation.
 */
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "mft/data.h"
#include "mft/energy.h"
#include "mft/memory.h"
#include "mft/metrics.h"
#include "mft/model.h"
#include "mft/optim.h"
#include "mft/tokenizer.h"

namespace mft {

enum class OptimizerKind { AdamW, SGD };

struct TrainConfig {
    FinetuneMode mode = FinetuneMode::FullFT;
    int64_t batch_size = 8;
    int64_t micro_batch_size = 8;
    int64_t seq_len = 128;
    float lr = 1e-3f;
    float weight_decay = 0.01f;
    OptimizerKind optimizer = OptimizerKind::AdamW;
    int64_t max_epochs = 1;
    /// 0 derives the count from the dataset: ceil(windows / batch_size).
    int64_t steps_per_epoch = 0;
    /// Evaluate on the test split every N macro-steps; 0 disables.
    int64_t eval_every = 0;
    uint64_t seed = 0;
    /// Dropout off, and wall-clock fields kept out of the metrics records.
    bool deterministic = true;
    std::optional<LoRAConfig> lora;
    std::optional<ShardPolicy> shard;
    std::optional<ThrottlePolicy> throttle;
    PowerModel power_model;

    int64_t accumulation_steps() const { return batch_size / micro_batch_size; }
    void validate() const;
};

/// Wall-clock side of one macro-step.
struct StepTiming {
    int64_t step = 0;
    double compute_s = 0.0;
    double sleep_s = 0.0;
    double wall_s = 0.0;
    int64_t rss_bytes = 0;
    double energy_j = 0.0;
    int64_t resident_param_bytes = 0;
    float battery_percent = 0.0f;
    bool throttled = false;
};

struct EvalResult {
    double test_loss = 0.0;
    double ppl = 0.0;
    int64_t tokens = 0;
};

class Trainer {
public:
    /// LoRA mode attaches adapters from config.lora when the model has none yet.
    Trainer(GPT2Model& model, TrainConfig config, TokenDataset& train, const TokenDataset* test = nullptr,
            PowerSource* power = nullptr);
    ~Trainer();

    /// One macro-step: zero grads, a micro-batches of forward/backward, one optimizer step, throttle.
    MetricsRecord step();
    /// steps_per_epoch x max_epochs macro-steps.
    std::vector<MetricsRecord> run(MetricsSink* sink = nullptr);

    int64_t total_steps() const;
    int64_t steps_done() const { return step_; }
    Optimizer& optimizer() { return *optimizer_; }
    const ParamGroup& trainable() const { return optimizer_->group(); }
    ShardManager* shard() { return shard_.get(); }
    Throttle* throttle() { return throttle_.get(); }
    const std::vector<StepTiming>& timings() const { return timings_; }
    const TrainConfig& config() const { return config_; }

    /// Called after every macro-step.
    std::function<void(const MetricsRecord&, const StepTiming&)> on_step;

private:
    GPT2Model& model_;
    TrainConfig config_;
    TokenDataset& train_;
    const TokenDataset* test_;
    PowerSource* power_;
    std::unique_ptr<Optimizer> optimizer_;
    std::unique_ptr<ShardManager> shard_;
    std::unique_ptr<Throttle> throttle_;
    Rng dropout_rng_;
    int64_t step_ = 0;
    std::vector<StepTiming> timings_;
};

/// Mean token NLL over every window of the split (no grad, dropout off); ppl = exp(test_loss).
EvalResult evaluate_ppl(LanguageModel& model, const TokenDataset& data, int64_t batch_size = 8);

/// Mean per-token log-likelihood of each option's text given the question;
/// argmax wins, ties go to the earlier option.
double evaluate_mcq(LanguageModel& model, const Tokenizer& tokenizer, const std::vector<MCQItem>& items);

/// Scores used by evaluate_mcq for one item, one per option.
std::vector<double> score_mcq_item(LanguageModel& model, const Tokenizer& tokenizer, const MCQItem& item);

}  // namespace mft
