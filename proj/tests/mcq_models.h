/**
 * @file mcq_models.h
 * @brief Stand-in language models and item generators for multiple-choice evaluation.
 */
#pragma once

#include <string>
#include <vector>

#include "mft/data.h"
#include "mft/model.h"
#include "mft/tokenizer.h"

namespace mft::testing {

/// Same logits everywhere, so every continuation is equally likely.
class UniformLM final : public LanguageModel {
public:
    explicit UniformLM(int64_t vocab, int64_t max_len = 256) : vocab_(vocab), max_len_(max_len) {}
    Tensor logits(const IdTensor& ids) override { return Tensor::zeros({ids.shape[0], ids.shape[1], vocab_}); }
    int64_t vocab_size() const override { return vocab_; }
    int64_t max_seq_len() const override { return max_len_; }

private:
    int64_t vocab_, max_len_;
};

/// Knows the answer key: along any prefix of "question\n" + correct text it puts
/// a large logit on the next correct token.
class RiggedLM final : public LanguageModel {
public:
    RiggedLM(const Tokenizer& tok, const std::vector<MCQItem>& items, int64_t vocab) : vocab_(vocab) {
        for (const auto& it : items) {
            auto s = tok.encode(it.question + "\n");
            auto a = tok.encode(it.options[it.answer_index()].text);
            s.insert(s.end(), a.begin(), a.end());
            keys_.push_back(std::move(s));
        }
    }
    Tensor logits(const IdTensor& ids) override {
        const int64_t B = ids.shape[0], T = ids.shape[1];
        Tensor out = Tensor::zeros({B, T, vocab_});
        auto d = out.mutable_data();
        for (int64_t b = 0; b < B; ++b) {
            const int32_t* row = ids.data.data() + b * T;
            for (int64_t t = 0; t < T; ++t) {
                for (const auto& k : keys_) {
                    if (static_cast<int64_t>(k.size()) <= t + 1) continue;
                    if (!std::equal(row, row + t + 1, k.begin())) continue;
                    d[static_cast<size_t>((b * T + t) * vocab_ + k[static_cast<size_t>(t + 1)])] = 20.0f;
                    break;
                }
            }
        }
        return out;
    }
    int64_t vocab_size() const override { return vocab_; }
    int64_t max_seq_len() const override { return 1024; }

private:
    int64_t vocab_;
    std::vector<std::vector<int32_t>> keys_;
};

/// Four-option items with random lowercase words and a uniformly random answer.
inline std::vector<MCQItem> random_mcq_items(int64_t n, uint64_t seed) {
    Rng rng(seed);
    auto word = [&] {
        std::string w;
        const uint64_t len = 3 + rng.below(5);
        for (uint64_t i = 0; i < len; ++i) w += static_cast<char>('a' + rng.below(26));
        return w;
    };
    std::vector<MCQItem> items;
    const char* labels[] = {"A", "B", "C", "D"};
    for (int64_t i = 0; i < n; ++i) {
        MCQItem it;
        it.question = "what is " + word() + " " + word() + "?";
        for (const char* l : labels) it.options.push_back({l, word() + " " + word()});
        it.answer = labels[rng.below(4)];
        items.push_back(std::move(it));
    }
    return items;
}

}  // namespace mft::testing
