/**
 * @file tokenizer.cpp
 */
#include "mft/tokenizer.h"

#include <algorithm>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "mft/error.h"

namespace mft {

namespace {

std::string utf8_encode(uint32_t cp) {
    std::string out;
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
    return out;
}

// Byte length of the UTF-8 sequence starting with lead byte c (1 for invalid leads).
size_t utf8_len(unsigned char c) {
    if (c < 0x80) return 1;
    if ((c >> 5) == 0x6) return 2;
    if ((c >> 4) == 0xE) return 3;
    if ((c >> 3) == 0x1E) return 4;
    return 1;
}

std::vector<std::string> split_utf8(const std::string& s) {
    std::vector<std::string> out;
    for (size_t i = 0; i < s.size();) {
        size_t n = std::min(utf8_len(static_cast<unsigned char>(s[i])), s.size() - i);
        out.push_back(s.substr(i, n));
        i += n;
    }
    return out;
}

enum class CharClass { Space, Letter, Number, Other };

// Non-ASCII code points count as letters; ASCII follows the usual classes.
CharClass classify(unsigned char c) {
    if (c >= 0x80) return CharClass::Letter;
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') return CharClass::Space;
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) return CharClass::Letter;
    if (c >= '0' && c <= '9') return CharClass::Number;
    return CharClass::Other;
}

const std::unordered_map<std::string, uint8_t>& unicode_to_byte() {
    static const auto table = [] {
        std::unordered_map<std::string, uint8_t> t;
        const auto& fwd = byte_to_unicode();
        for (int b = 0; b < 256; ++b) t[fwd[static_cast<size_t>(b)]] = static_cast<uint8_t>(b);
        return t;
    }();
    return table;
}

}  // namespace

const std::vector<std::string>& byte_to_unicode() {
    static const auto table = [] {
        std::vector<int> bs;
        for (int b = '!'; b <= '~'; ++b) bs.push_back(b);
        for (int b = 0xA1; b <= 0xAC; ++b) bs.push_back(b);
        for (int b = 0xAE; b <= 0xFF; ++b) bs.push_back(b);
        std::vector<uint32_t> cp(256, 0);
        for (int b : bs) cp[static_cast<size_t>(b)] = static_cast<uint32_t>(b);
        uint32_t n = 0;
        for (int b = 0; b < 256; ++b) {
            if (std::find(bs.begin(), bs.end(), b) == bs.end()) cp[static_cast<size_t>(b)] = 256 + n++;
        }
        std::vector<std::string> out(256);
        for (int b = 0; b < 256; ++b) out[static_cast<size_t>(b)] = utf8_encode(cp[static_cast<size_t>(b)]);
        return out;
    }();
    return table;
}

std::vector<std::string> pretokenize(std::string_view text) {
    std::vector<std::string> out;
    const size_t n = text.size();
    auto cls = [&](size_t i) { return classify(static_cast<unsigned char>(text[i])); };
    auto run_end = [&](size_t i, CharClass c) {
        while (i < n && cls(i) == c) i += utf8_len(static_cast<unsigned char>(text[i]));
        return std::min(i, n);
    };
    size_t i = 0;
    while (i < n) {
        if (text[i] == '\'') {
            static const char* kSuffixes[] = {"re", "ve", "ll", "s", "t", "m", "d"};
            bool hit = false;
            for (const char* s : kSuffixes) {
                std::string_view sv(s);
                if (text.substr(i + 1, sv.size()) == sv) {
                    out.emplace_back(text.substr(i, sv.size() + 1));
                    i += sv.size() + 1;
                    hit = true;
                    break;
                }
            }
            if (hit) continue;
        }
        CharClass c = cls(i);
        if (c != CharClass::Space || (text[i] == ' ' && i + 1 < n && cls(i + 1) != CharClass::Space)) {
            size_t start = i;
            if (c == CharClass::Space) c = cls(++i);
            size_t end = run_end(i, c);
            out.emplace_back(text.substr(start, end - start));
            i = end;
            continue;
        }
        size_t end = run_end(i, CharClass::Space);
        if (end < n && end - i > 1) {
            // Leave the last whitespace character to prefix the following token.
            out.emplace_back(text.substr(i, end - i - 1));
            i = end - 1;
        } else {
            out.emplace_back(text.substr(i, end - i));
            i = end;
        }
    }
    return out;
}

Tokenizer Tokenizer::byte_level() { return Tokenizer(); }

Tokenizer Tokenizer::from_assets(std::unordered_map<std::string, int32_t> vocab,
                                 std::vector<std::pair<std::string, std::string>> merges) {
    Tokenizer t;
    t.byte_level_ = false;
    t.vocab_ = std::move(vocab);
    int32_t max_id = -1;
    for (auto& [tok, id] : t.vocab_) max_id = std::max(max_id, id);
    t.id_to_token_.assign(static_cast<size_t>(max_id + 1), std::string());
    for (auto& [tok, id] : t.vocab_) {
        if (id < 0) fail(ErrorCode::ParseError, "negative id in vocabulary");
        t.id_to_token_[static_cast<size_t>(id)] = tok;
    }
    for (size_t r = 0; r < merges.size(); ++r) t.ranks_.emplace(merges[r], static_cast<int32_t>(r));
    return t;
}

Tokenizer Tokenizer::from_files(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt) {
    std::ifstream vin(vocab_json);
    if (!vin) fail(ErrorCode::AssetMissing, "tokenizer vocabulary '" + vocab_json.string() + "' not found");
    std::ifstream min(merges_txt);
    if (!min) fail(ErrorCode::AssetMissing, "tokenizer merges '" + merges_txt.string() + "' not found");
    std::unordered_map<std::string, int32_t> vocab;
    try {
        auto j = nlohmann::json::parse(vin);
        for (auto& [k, v] : j.items()) vocab[k] = v.get<int32_t>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ParseError, "vocabulary '" + vocab_json.string() + "': " + e.what());
    }
    std::vector<std::pair<std::string, std::string>> merges;
    std::string line;
    while (std::getline(min, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.starts_with("#version")) continue;
        auto sp = line.find(' ');
        if (sp == std::string::npos) fail(ErrorCode::ParseError, "malformed merge rule: " + line);
        merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
    return from_assets(std::move(vocab), std::move(merges));
}

int64_t Tokenizer::vocab_size() const {
    return byte_level_ ? 256 : static_cast<int64_t>(id_to_token_.size());
}

std::vector<std::string> Tokenizer::bpe(const std::string& word) const {
    std::vector<std::string> parts = split_utf8(word);
    while (parts.size() > 1) {
        int32_t best = std::numeric_limits<int32_t>::max();
        size_t best_i = 0;
        for (size_t i = 0; i + 1 < parts.size(); ++i) {
            auto it = ranks_.find({parts[i], parts[i + 1]});
            if (it != ranks_.end() && it->second < best) {
                best = it->second;
                best_i = i;
            }
        }
        if (best == std::numeric_limits<int32_t>::max()) break;
        const std::string left = parts[best_i], right = parts[best_i + 1];
        std::vector<std::string> merged;
        merged.reserve(parts.size());
        for (size_t i = 0; i < parts.size();) {
            if (i + 1 < parts.size() && parts[i] == left && parts[i + 1] == right) {
                merged.push_back(left + right);
                i += 2;
            } else {
                merged.push_back(parts[i]);
                ++i;
            }
        }
        parts = std::move(merged);
    }
    return parts;
}

std::vector<int32_t> Tokenizer::encode(std::string_view text) const {
    std::vector<int32_t> ids;
    if (byte_level_) {
        ids.reserve(text.size());
        for (unsigned char c : text) ids.push_back(c);
        return ids;
    }
    const auto& table = byte_to_unicode();
    for (const auto& piece : pretokenize(text)) {
        std::string mapped;
        for (unsigned char c : piece) mapped += table[c];
        for (const auto& tok : bpe(mapped)) {
            auto it = vocab_.find(tok);
            if (it == vocab_.end()) fail(ErrorCode::AssetMissing, "token '" + tok + "' is not in the vocabulary");
            ids.push_back(it->second);
        }
    }
    return ids;
}

std::string Tokenizer::decode(const std::vector<int32_t>& ids) const {
    std::string out;
    if (byte_level_) {
        for (auto id : ids) {
            if (id < 0 || id > 255) fail(ErrorCode::IndexOutOfRange, "byte id " + std::to_string(id) + " outside [0, 256)");
            out.push_back(static_cast<char>(id));
        }
        return out;
    }
    const auto& inv = unicode_to_byte();
    for (auto id : ids) {
        if (id < 0 || static_cast<size_t>(id) >= id_to_token_.size()) {
            fail(ErrorCode::IndexOutOfRange, "token id " + std::to_string(id) + " outside the vocabulary");
        }
        for (const auto& ch : split_utf8(id_to_token_[static_cast<size_t>(id)])) {
            auto it = inv.find(ch);
            if (it == inv.end()) fail(ErrorCode::ParseError, "vocabulary entry holds a non byte-mapped symbol");
            out.push_back(static_cast<char>(it->second));
        }
    }
    return out;
}

}  // namespace mft
