/**
 * @file metrics.h
 * @brief Per-step metrics records and the JSON-lines sink.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>

namespace mft {

struct MetricsRecord {
    int64_t step = 0;
    double train_loss = 0.0;
    std::optional<double> test_loss;
    std::optional<double> ppl;
    std::optional<double> accuracy;
    std::optional<int64_t> rss_bytes;
    /// Energy of the step in joules under the configured power model.
    std::optional<double> power;
    std::optional<double> wall_ms;

    bool operator==(const MetricsRecord&) const = default;
};

/// One JSON object with keys step, train_loss, test_loss, ppl, accuracy, rss_bytes, power, wall_ms.
std::string to_json_line(const MetricsRecord& record);
MetricsRecord parse_metrics_line(const std::string& line);

class MetricsSink {
public:
    /// Truncates the file. Io error naming the path when it cannot be opened.
    explicit MetricsSink(const std::filesystem::path& path);

    /// Appends one line and flushes. InvalidArgument if steps stop increasing.
    void emit(const MetricsRecord& record);
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::ofstream out_;
    int64_t last_step_ = std::numeric_limits<int64_t>::min();
};

}  // namespace mft
