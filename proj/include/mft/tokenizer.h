/**
 * @file tokenizer.h
 * @brief Byte-level fallback tokenizer and GPT-2 byte-pair encoder.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mft {

class Tokenizer {
public:
    /// Every byte is its own id (vocabulary of 256).
    static Tokenizer byte_level();
    /// GPT-2 vocab.json + merges.txt. AssetMissing when either file is absent.
    static Tokenizer from_files(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt);
    /// In-memory BPE assets; merges are in priority order.
    static Tokenizer from_assets(std::unordered_map<std::string, int32_t> vocab,
                                 std::vector<std::pair<std::string, std::string>> merges);

    bool is_byte_level() const { return byte_level_; }
    int64_t vocab_size() const;

    std::vector<int32_t> encode(std::string_view text) const;
    std::string decode(const std::vector<int32_t>& ids) const;

    /// Applies the merge table to one pre-token already mapped to byte-unicode symbols.
    std::vector<std::string> bpe(const std::string& word) const;

private:
    bool byte_level_ = true;
    std::unordered_map<std::string, int32_t> vocab_;
    std::vector<std::string> id_to_token_;
    std::map<std::pair<std::string, std::string>, int32_t> ranks_;
};

/// GPT-2 pre-tokenization (contractions, letter runs, digit runs, punctuation, whitespace).
std::vector<std::string> pretokenize(std::string_view text);

/// The reversible byte -> printable-codepoint table used by GPT-2 (UTF-8 encoded).
const std::vector<std::string>& byte_to_unicode();

}  // namespace mft
