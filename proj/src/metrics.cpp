/**
 * @file metrics.cpp
 */
#include "mft/metrics.h"

#include <json.hpp>

#include "mft/error.h"

namespace mft {

namespace {

template <typename T>
nlohmann::ordered_json opt(const std::optional<T>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

template <typename T>
std::optional<T> get_opt(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<T>();
}

}  // namespace

std::string to_json_line(const MetricsRecord& r) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["train_loss"] = r.train_loss;
    j["test_loss"] = opt(r.test_loss);
    j["ppl"] = opt(r.ppl);
    j["accuracy"] = opt(r.accuracy);
    j["rss_bytes"] = opt(r.rss_bytes);
    j["power"] = opt(r.power);
    j["wall_ms"] = opt(r.wall_ms);
    return j.dump();
}

MetricsRecord parse_metrics_line(const std::string& line) {
    MetricsRecord r;
    try {
        auto j = nlohmann::json::parse(line);
        r.step = j.at("step").get<int64_t>();
        r.train_loss = j.at("train_loss").get<double>();
        r.test_loss = get_opt<double>(j, "test_loss");
        r.ppl = get_opt<double>(j, "ppl");
        r.accuracy = get_opt<double>(j, "accuracy");
        r.rss_bytes = get_opt<int64_t>(j, "rss_bytes");
        r.power = get_opt<double>(j, "power");
        r.wall_ms = get_opt<double>(j, "wall_ms");
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ParseError, std::string("metrics line: ") + e.what());
    }
    return r;
}

MetricsSink::MetricsSink(const std::filesystem::path& path) : path_(path), out_(path, std::ios::trunc) {
    if (!out_) fail(ErrorCode::Io, "cannot open metrics file '" + path.string() + "'");
}

void MetricsSink::emit(const MetricsRecord& record) {
    if (record.step <= last_step_) {
        fail(ErrorCode::InvalidArgument, "metrics step " + std::to_string(record.step) + " does not increase");
    }
    last_step_ = record.step;
    out_ << to_json_line(record) << '\n';
    out_.flush();
    if (!out_) fail(ErrorCode::Io, "write to '" + path_.string() + "' failed");
}

}  // namespace mft
