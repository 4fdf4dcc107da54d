/**
 * @file runspec.h
 * @brief Resolved run configuration: key = value file plus overrides.
 *
 * Format: one `key = value` per line, `#` starts a comment, blank lines are
 * ignored. Unknown keys are rejected. dump() writes every key in a fixed order,
 * and loading that dump reproduces the same spec.
 */
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mft/train.h"

namespace mft {

class RunSpec {
public:
    /// Every key at its default.
    RunSpec();

    static RunSpec parse(const std::string& text);
    static RunSpec load(const std::filesystem::path& path);

    /// InvalidConfig for an unknown key.
    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;
    bool has_value(const std::string& key) const { return !get(key).empty(); }

    int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<std::string> get_list(const std::string& key) const;

    /// Fills mode-dependent defaults (learning rate, micro-batch size).
    void resolve();
    std::string dump() const;

    TrainConfig train_config() const;
    ModelConfig model_config() const;

    static const std::vector<std::string>& keys();

private:
    std::map<std::string, std::string> values_;
};

}  // namespace mft
