/**
 * @file train.cpp
 */
#include "mft/train.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mft/error.h"
#include "mft/ops.h"
#include "mft/tape.h"

namespace mft {

void TrainConfig::validate() const {
    if (batch_size < 1 || micro_batch_size < 1) fail(ErrorCode::InvalidConfig, "batch sizes must be at least 1");
    if (batch_size % micro_batch_size != 0) {
        fail(ErrorCode::InvalidConfig, "batch size " + std::to_string(batch_size) +
                                           " is not a multiple of the micro-batch size " +
                                           std::to_string(micro_batch_size));
    }
    if (seq_len < 1) fail(ErrorCode::InvalidConfig, "sequence length must be at least 1");
    if (!(lr >= 0.0f)) fail(ErrorCode::InvalidConfig, "learning rate must be non-negative");
    if (max_epochs < 1) fail(ErrorCode::InvalidConfig, "max_epochs must be at least 1");
    if (steps_per_epoch < 0 || eval_every < 0) fail(ErrorCode::InvalidConfig, "step counts must be non-negative");
    if (mode == FinetuneMode::LoRA && lora) lora->validate();
    if (throttle) throttle->validate();
}

namespace {

IdTensor slice_rows(const IdTensor& t, int64_t first, int64_t count) {
    const int64_t cols = t.shape[1];
    auto b = t.data.begin() + first * cols;
    return IdTensor({count, cols}, std::vector<int32_t>(b, b + count * cols));
}

}  // namespace

Trainer::Trainer(GPT2Model& model, TrainConfig config, TokenDataset& train, const TokenDataset* test,
                 PowerSource* power)
    : model_(model), config_(std::move(config)), train_(train), test_(test), power_(power),
      dropout_rng_(config_.seed ^ 0x9e3779b97f4a7c15ULL) {
    config_.validate();
    if (config_.seq_len > model_.config().max_seq_len) {
        fail(ErrorCode::InvalidConfig, "sequence length " + std::to_string(config_.seq_len) +
                                           " exceeds the model's max_seq_len " +
                                           std::to_string(model_.config().max_seq_len));
    }
    if (train_.seq_len() != config_.seq_len) {
        fail(ErrorCode::InvalidConfig, "dataset windows do not match the configured sequence length");
    }
    if (config_.mode == FinetuneMode::LoRA && !model_.lora_config()) {
        model_.attach_lora(config_.lora.value_or(LoRAConfig{}), config_.seed);
    }
    ParamGroup group(trainable_params(model_, config_.mode));
    if (config_.optimizer == OptimizerKind::AdamW) {
        AdamWOptions o;
        o.lr = config_.lr;
        o.weight_decay = config_.weight_decay;
        optimizer_ = std::make_unique<AdamW>(std::move(group), o);
    } else {
        optimizer_ = std::make_unique<SGD>(std::move(group), config_.lr);
    }
    if (config_.shard) {
        auto params = model_.parameters();
        shard_ = std::make_unique<ShardManager>(build_manifest(shard_units(params), *config_.shard), params,
                                                default_spill_dir());
    }
    if (config_.throttle) {
        if (!power_) fail(ErrorCode::InvalidConfig, "throttling needs a power source");
        throttle_ = std::make_unique<Throttle>(*config_.throttle, *power_);
    }
}

Trainer::~Trainer() = default;

int64_t Trainer::total_steps() const {
    int64_t per_epoch = config_.steps_per_epoch;
    if (per_epoch == 0) per_epoch = std::max<int64_t>(1, (train_.num_windows() + config_.batch_size - 1) / config_.batch_size);
    return per_epoch * config_.max_epochs;
}

MetricsRecord Trainer::step() {
    const double t0 = monotonic_seconds();
    ++step_;
    Batch batch = train_.get_batch(config_.batch_size);
    const int64_t a = config_.accumulation_steps();
    const int64_t mb = config_.micro_batch_size;
    const float frac = static_cast<float>(mb) / static_cast<float>(config_.batch_size);
    ForwardCtx ctx{!config_.deterministic, &dropout_rng_};

    optimizer_->zero_grad();
    double macro_loss = 0.0;
    for (int64_t i = 0; i < a; ++i) {
        IdTensor in = slice_rows(batch.inputs, i * mb, mb);
        IdTensor tg = slice_rows(batch.targets, i * mb, mb);
        Tensor loss;
        auto forward = [&] { return model_.compute_loss(model_.forward(in, ctx), tg); };
        loss = shard_ ? shard_->sharded_pass(Pass::Forward, forward) : forward();
        Tensor scaled = scale(loss, frac);
        macro_loss += static_cast<double>(scaled.item());
        if (shard_) {
            shard_->sharded_pass(Pass::Backward, [&] { backward(scaled); });
        } else {
            backward(scaled);
        }
    }
    optimizer_->step();
    const double compute = monotonic_seconds() - t0;

    StepTiming timing;
    timing.step = step_;
    timing.compute_s = compute;
    if (throttle_) {
        throttle_->record_compute(compute);
        double delay = throttle_->check(step_);
        timing.sleep_s = apply_throttle(delay);
        throttle_->record_sleep(timing.sleep_s);
        timing.battery_percent = throttle_->last_percent();
        timing.throttled = throttle_->throttled();
    }

    MetricsRecord rec;
    rec.step = step_;
    rec.train_loss = macro_loss;
    if (test_ && config_.eval_every > 0 && step_ % config_.eval_every == 0) {
        EvalResult ev = evaluate_ppl(model_, *test_, config_.batch_size);
        rec.test_loss = ev.test_loss;
        rec.ppl = ev.ppl;
    }
    timing.wall_s = monotonic_seconds() - t0;
    timing.rss_bytes = probe_rss();
    timing.energy_j = estimate_energy(config_.power_model, timing.compute_s, timing.sleep_s);
    timing.resident_param_bytes = shard_ ? shard_->resident_bytes() : 0;
    if (!config_.deterministic) {
        rec.rss_bytes = timing.rss_bytes;
        rec.power = timing.energy_j;
        rec.wall_ms = timing.wall_s * 1000.0;
    }
    timings_.push_back(timing);
    if (on_step) on_step(rec, timing);
    return rec;
}

std::vector<MetricsRecord> Trainer::run(MetricsSink* sink) {
    std::vector<MetricsRecord> out;
    const int64_t total = total_steps();
    while (step_ < total) {
        out.push_back(step());
        if (sink) sink->emit(out.back());
    }
    return out;
}

EvalResult evaluate_ppl(LanguageModel& model, const TokenDataset& data, int64_t batch_size) {
    const int64_t n = data.num_windows();
    if (n == 0) fail(ErrorCode::EmptyDataset, "test split holds no complete window");
    NoGradGuard no_grad;
    double total = 0.0;
    int64_t tokens = 0;
    for (int64_t first = 0; first < n; first += batch_size) {
        const int64_t count = std::min(batch_size, n - first);
        Batch b = data.batch_at(first, count);
        Tensor logits = model.logits(b.inputs);
        const int64_t rows = b.targets.numel();
        const int64_t vocab = logits.size(-1);
        std::vector<float> logp(static_cast<size_t>(rows * vocab));
        log_softmax_rows(logits.data(), rows, vocab, logp);
        for (int64_t r = 0; r < rows; ++r) {
            total -= static_cast<double>(logp[static_cast<size_t>(r * vocab + b.targets.data[static_cast<size_t>(r)])]);
        }
        tokens += rows;
    }
    EvalResult res;
    res.tokens = tokens;
    res.test_loss = total / static_cast<double>(tokens);
    res.ppl = std::exp(res.test_loss);
    return res;
}

std::vector<double> score_mcq_item(LanguageModel& model, const Tokenizer& tokenizer, const MCQItem& item) {
    NoGradGuard no_grad;
    std::vector<int32_t> context = tokenizer.encode(item.question + "\n");
    std::vector<double> scores;
    for (const auto& opt : item.options) {
        std::vector<int32_t> cont = tokenizer.encode(opt.text);
        if (cont.empty()) {
            scores.push_back(-std::numeric_limits<double>::infinity());
            continue;
        }
        std::vector<int32_t> ctx = context;
        const size_t limit = static_cast<size_t>(model.max_seq_len()) + 1;
        if (cont.size() + 1 > limit) cont.resize(limit - 1);
        if (ctx.size() + cont.size() > limit) ctx.erase(ctx.begin(), ctx.end() - static_cast<std::ptrdiff_t>(limit - cont.size()));
        std::vector<int32_t> seq = ctx;
        seq.insert(seq.end(), cont.begin(), cont.end());
        seq.pop_back();
        const int64_t T = static_cast<int64_t>(seq.size());
        Tensor logits = model.logits(IdTensor({1, T}, seq));
        const int64_t vocab = logits.size(-1);
        std::vector<float> logp(static_cast<size_t>(T * vocab));
        log_softmax_rows(logits.data(), T, vocab, logp);
        double s = 0.0;
        const int64_t first = static_cast<int64_t>(ctx.size()) - 1;
        for (size_t j = 0; j < cont.size(); ++j) {
            const int64_t pos = first + static_cast<int64_t>(j);
            s += static_cast<double>(logp[static_cast<size_t>(pos * vocab + cont[j])]);
        }
        scores.push_back(s / static_cast<double>(cont.size()));
    }
    return scores;
}

double evaluate_mcq(LanguageModel& model, const Tokenizer& tokenizer, const std::vector<MCQItem>& items) {
    if (items.empty()) fail(ErrorCode::EmptyDataset, "no multiple-choice items");
    int64_t correct = 0;
    for (const auto& item : items) {
        auto scores = score_mcq_item(model, tokenizer, item);
        size_t best = 0;
        for (size_t i = 1; i < scores.size(); ++i) {
            if (scores[i] > scores[best]) best = i;
        }
        if (best == item.answer_index()) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(items.size());
}

}  // namespace mft
