/**
 * @file data.cpp
 */
#include "mft/data.h"

#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mft/error.h"

namespace mft {

TokenDataset::TokenDataset(std::vector<int32_t> stream, int64_t seq_len, uint64_t seed, bool shuffle)
    : stream_(std::move(stream)), seq_len_(seq_len), shuffle_(shuffle), seed_(seed), rng_(seed) {
    if (seq_len < 1) fail(ErrorCode::InvalidConfig, "sequence length must be at least 1");
    new_order();
}

int64_t TokenDataset::num_windows() const {
    if (stream_.size() < 2) return 0;
    return (static_cast<int64_t>(stream_.size()) - 1) / seq_len_;
}

std::pair<std::vector<int32_t>, std::vector<int32_t>> TokenDataset::window(int64_t i) const {
    if (i < 0 || i >= num_windows()) fail(ErrorCode::IndexOutOfRange, "window " + std::to_string(i) + " out of range");
    auto begin = stream_.begin() + i * seq_len_;
    return {std::vector<int32_t>(begin, begin + seq_len_), std::vector<int32_t>(begin + 1, begin + seq_len_ + 1)};
}

void TokenDataset::new_order() {
    order_.resize(static_cast<size_t>(num_windows()));
    std::iota(order_.begin(), order_.end(), 0);
    if (shuffle_) rng_.shuffle(order_);
    cursor_ = 0;
}

void TokenDataset::reset() {
    rng_ = Rng(seed_);
    epoch_ = 0;
    new_order();
}

Batch TokenDataset::get_batch(int64_t b) {
    if (num_windows() == 0) {
        fail(ErrorCode::EmptyDataset, "dataset of " + std::to_string(stream_.size()) +
                                          " tokens holds no window of length " + std::to_string(seq_len_ + 1));
    }
    if (b < 1) fail(ErrorCode::InvalidArgument, "batch size must be at least 1");
    Batch out;
    out.inputs.shape = {b, seq_len_};
    out.targets.shape = {b, seq_len_};
    out.inputs.data.reserve(static_cast<size_t>(b * seq_len_));
    out.targets.data.reserve(static_cast<size_t>(b * seq_len_));
    for (int64_t r = 0; r < b; ++r) {
        if (cursor_ == order_.size()) {
            ++epoch_;
            new_order();
        }
        auto [in, tg] = window(order_[cursor_++]);
        out.inputs.data.insert(out.inputs.data.end(), in.begin(), in.end());
        out.targets.data.insert(out.targets.data.end(), tg.begin(), tg.end());
    }
    return out;
}

Batch TokenDataset::batch_at(int64_t first, int64_t count) const {
    Batch out;
    out.inputs.shape = {count, seq_len_};
    out.targets.shape = {count, seq_len_};
    for (int64_t r = 0; r < count; ++r) {
        auto [in, tg] = window(first + r);
        out.inputs.data.insert(out.inputs.data.end(), in.begin(), in.end());
        out.targets.data.insert(out.targets.data.end(), tg.begin(), tg.end());
    }
    return out;
}

std::pair<std::vector<int32_t>, std::vector<int32_t>> split_stream(const std::vector<int32_t>& stream,
                                                                   double train_fraction) {
    if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
        fail(ErrorCode::InvalidConfig, "train fraction must lie in (0, 1]");
    }
    auto cut = static_cast<size_t>(static_cast<double>(stream.size()) * train_fraction);
    return {std::vector<int32_t>(stream.begin(), stream.begin() + static_cast<std::ptrdiff_t>(cut)),
            std::vector<int32_t>(stream.begin() + static_cast<std::ptrdiff_t>(cut), stream.end())};
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot read '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

size_t MCQItem::answer_index() const {
    for (size_t i = 0; i < options.size(); ++i) {
        if (options[i].label == answer) return i;
    }
    fail(ErrorCode::ParseError, "answer '" + answer + "' is not one of the option labels");
}

std::vector<MCQItem> parse_mcq(const std::string& jsonl) {
    std::vector<MCQItem> items;
    std::istringstream in(jsonl);
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto where = "line " + std::to_string(lineno) + ": ";
        MCQItem item;
        try {
            auto j = nlohmann::json::parse(line);
            item.question = j.at("question").get<std::string>();
            for (const auto& o : j.at("options")) {
                item.options.push_back({o.at("label").get<std::string>(), o.at("text").get<std::string>()});
            }
            item.answer = j.at("answer").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::ParseError, where + e.what());
        }
        if (item.options.empty()) fail(ErrorCode::ParseError, where + "item has no options");
        try {
            item.answer_index();
        } catch (const Error& e) {
            fail(ErrorCode::ParseError, where + e.what());
        }
        items.push_back(std::move(item));
    }
    return items;
}

std::vector<MCQItem> load_mcq(const std::filesystem::path& path) {
    try {
        return parse_mcq(read_text_file(path));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ParseError) fail(e.code(), path.string() + ", " + e.what());
        throw;
    }
}

}  // namespace mft
