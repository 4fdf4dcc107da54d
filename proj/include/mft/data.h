/**
 * @file data.h
 * @brief Token-window datasets for language modelling and multiple-choice items.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mft/rng.h"
#include "mft/tensor.h"

namespace mft {

struct Batch {
    IdTensor inputs;   ///< [b, T]
    IdTensor targets;  ///< [b, T], inputs shifted by one
};

/**
 * Window i covers stream positions [i*T, i*T + T]; inputs are the first T
 * tokens and targets the last T, so there are floor((len - 1) / T) windows.
 */
class TokenDataset {
public:
    TokenDataset() = default;
    TokenDataset(std::vector<int32_t> stream, int64_t seq_len, uint64_t seed = 0, bool shuffle = true);

    int64_t seq_len() const { return seq_len_; }
    int64_t num_windows() const;
    int64_t num_tokens() const { return static_cast<int64_t>(stream_.size()); }
    const std::vector<int32_t>& stream() const { return stream_; }

    /// Inputs and targets of window i.
    std::pair<std::vector<int32_t>, std::vector<int32_t>> window(int64_t i) const;

    /// Next b windows in the epoch order; wraps into a freshly shuffled epoch. EmptyDataset when no window fits.
    Batch get_batch(int64_t b);
    /// Windows [first, first + count) in stream order.
    Batch batch_at(int64_t first, int64_t count) const;

    int64_t epoch() const { return epoch_; }
    void reset();

private:
    void new_order();

    std::vector<int32_t> stream_;
    int64_t seq_len_ = 0;
    bool shuffle_ = true;
    uint64_t seed_ = 0;
    Rng rng_{0};
    std::vector<int64_t> order_;
    size_t cursor_ = 0;
    int64_t epoch_ = 0;
};

/// First 90% (by default) of the stream for training, the rest for testing.
std::pair<std::vector<int32_t>, std::vector<int32_t>> split_stream(const std::vector<int32_t>& stream,
                                                                   double train_fraction = 0.9);

std::string read_text_file(const std::filesystem::path& path);

struct MCQOption {
    std::string label;
    std::string text;
};

struct MCQItem {
    std::string question;
    std::vector<MCQOption> options;
    std::string answer;

    /// Index of the answer among the options.
    size_t answer_index() const;
};

/// JSON-lines {question, options:[{label,text}], answer}; ParseError names the offending line.
std::vector<MCQItem> load_mcq(const std::filesystem::path& path);
std::vector<MCQItem> parse_mcq(const std::string& jsonl);

}  // namespace mft
