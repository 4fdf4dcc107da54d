/**
 * @file runspec.cpp
 */
#include "mft/runspec.h"

#include <charconv>
#include <fstream>
#include <sstream>

#include "mft/error.h"

namespace mft {

namespace {

struct KeyDefault {
    const char* key;
    const char* value;
};

// Dump order follows this table.
const KeyDefault kDefaults[] = {
    {"command", "finetune"},
    {"model", ""},
    {"adapter", ""},
    {"tokenizer", "byte"},
    {"vocab_file", ""},
    {"merges_file", ""},
    {"dataset", ""},
    {"task", "lm"},
    {"eval_split", "all"},
    {"output_dir", "mft_out"},
    {"vocab_size", "256"},
    {"d_model", "64"},
    {"n_layers", "2"},
    {"n_heads", "4"},
    {"max_seq_len", "128"},
    {"tie_embeddings", "true"},
    {"init_seed", "0"},
    {"mode", "full"},
    {"optimizer", "adamw"},
    {"lr", ""},
    {"weight_decay", "0.01"},
    {"batch_size", "8"},
    {"grad_accum", "1"},
    {"seq_len", "128"},
    {"max_epochs", "1"},
    {"steps_per_epoch", "0"},
    {"eval_every", "0"},
    {"eval_batch", "8"},
    {"seed", "0"},
    {"deterministic", "true"},
    {"lora_rank", "8"},
    {"lora_alpha", "32"},
    {"lora_dropout", "0.1"},
    {"lora_targets", "q_proj,v_proj"},
    {"lora_init_std", "0.02"},
    {"shard_segments", "0"},
    {"shard_budget_mb", "0"},
    {"throttle_k", "0"},
    {"throttle_mu", "60"},
    {"throttle_rho", "0.5"},
    {"throttle_hysteresis", "2"},
    {"battery", "simulated:100:0:0"},
    {"active_watts", "5"},
    {"idle_watts", "0.5"},
    {"prompt", ""},
    {"max_new", "32"},
    {"use_cache", "true"},
};

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<std::string>& RunSpec::keys() {
    static const std::vector<std::string> k = [] {
        std::vector<std::string> out;
        for (const auto& d : kDefaults) out.emplace_back(d.key);
        return out;
    }();
    return k;
}

RunSpec::RunSpec() {
    for (const auto& d : kDefaults) values_[d.key] = d.value;
}

RunSpec RunSpec::parse(const std::string& text) {
    RunSpec spec;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            fail(ErrorCode::ParseError, "config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        try {
            spec.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const Error& e) {
            fail(e.code(), "config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return spec;
}

RunSpec RunSpec::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::Io, "cannot read config '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

void RunSpec::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) fail(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
    it->second = value;
}

const std::string& RunSpec::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) fail(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
    return it->second;
}

int64_t RunSpec::get_int(const std::string& key) const {
    const auto& v = get(key);
    int64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        fail(ErrorCode::InvalidConfig, key + ": '" + v + "' is not an integer");
    }
    return out;
}

double RunSpec::get_double(const std::string& key) const {
    const auto& v = get(key);
    double out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        fail(ErrorCode::InvalidConfig, key + ": '" + v + "' is not a number");
    }
    return out;
}

bool RunSpec::get_bool(const std::string& key) const {
    const auto& v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail(ErrorCode::InvalidConfig, key + ": '" + v + "' is not a boolean");
}

std::vector<std::string> RunSpec::get_list(const std::string& key) const {
    std::vector<std::string> out;
    std::istringstream in(get(key));
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

void RunSpec::resolve() {
    if (get("lr").empty()) set("lr", get("mode") == "lora" ? "0.0002" : "0.00001");
}

std::string RunSpec::dump() const {
    std::string out;
    for (const auto& d : kDefaults) out += std::string(d.key) + " = " + values_.at(d.key) + "\n";
    return out;
}

ModelConfig RunSpec::model_config() const {
    ModelConfig c;
    c.vocab_size = get_int("vocab_size");
    c.d_model = get_int("d_model");
    c.n_layers = get_int("n_layers");
    c.n_heads = get_int("n_heads");
    c.max_seq_len = get_int("max_seq_len");
    c.tie_embeddings = get_bool("tie_embeddings");
    return c;
}

TrainConfig RunSpec::train_config() const {
    TrainConfig c;
    const auto& mode = get("mode");
    if (mode == "full") c.mode = FinetuneMode::FullFT;
    else if (mode == "lora") c.mode = FinetuneMode::LoRA;
    else fail(ErrorCode::InvalidConfig, "mode must be 'full' or 'lora', got '" + mode + "'");
    const auto& opt = get("optimizer");
    if (opt == "adamw") c.optimizer = OptimizerKind::AdamW;
    else if (opt == "sgd") c.optimizer = OptimizerKind::SGD;
    else fail(ErrorCode::InvalidConfig, "optimizer must be 'adamw' or 'sgd', got '" + opt + "'");

    c.batch_size = get_int("batch_size");
    const int64_t accum = get_int("grad_accum");
    if (accum < 1 || c.batch_size % accum != 0) {
        fail(ErrorCode::InvalidConfig, "grad_accum " + std::to_string(accum) + " must divide batch_size " +
                                           std::to_string(c.batch_size));
    }
    c.micro_batch_size = c.batch_size / accum;
    c.seq_len = get_int("seq_len");
    c.lr = static_cast<float>(has_value("lr") ? get_double("lr") : (c.mode == FinetuneMode::LoRA ? 2e-4 : 1e-5));
    c.weight_decay = static_cast<float>(get_double("weight_decay"));
    c.max_epochs = get_int("max_epochs");
    c.steps_per_epoch = get_int("steps_per_epoch");
    c.eval_every = get_int("eval_every");
    c.seed = static_cast<uint64_t>(get_int("seed"));
    c.deterministic = get_bool("deterministic");
    if (c.mode == FinetuneMode::LoRA) {
        LoRAConfig l;
        l.rank = get_int("lora_rank");
        l.alpha = static_cast<float>(get_double("lora_alpha"));
        l.dropout = static_cast<float>(get_double("lora_dropout"));
        l.targets = get_list("lora_targets");
        l.init_std = static_cast<float>(get_double("lora_init_std"));
        c.lora = l;
    }
    const int64_t segs = get_int("shard_segments");
    const double budget_mb = get_double("shard_budget_mb");
    if (segs > 0 && budget_mb > 0) fail(ErrorCode::InvalidConfig, "set only one of shard_segments and shard_budget_mb");
    if (segs > 0) c.shard = SegmentCount{segs};
    if (budget_mb > 0) c.shard = ByteBudget{static_cast<int64_t>(budget_mb * 1024.0 * 1024.0)};
    if (get_int("throttle_k") > 0) {
        ThrottlePolicy t;
        t.k = get_int("throttle_k");
        t.mu = static_cast<float>(get_double("throttle_mu"));
        t.rho = static_cast<float>(get_double("throttle_rho"));
        t.hysteresis = static_cast<float>(get_double("throttle_hysteresis"));
        c.throttle = t;
    }
    c.power_model.active_watts = get_double("active_watts");
    c.power_model.idle_watts = get_double("idle_watts");
    c.validate();
    return c;
}

}  // namespace mft
