/**
 * @file app.cpp
 */
#include "mft/app.h"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mft/checkpoint.h"
#include "mft/error.h"

namespace mft {

namespace fs = std::filesystem;

namespace {

// Runs fn, converting exceptions into the stage-tagged diagnostic.
template <typename Fn>
bool stage(const char* name, std::ostream& err, Fn&& fn) {
    try {
        fn();
        return true;
    } catch (const Error& e) {
        err << "error [" << name << "]: " << e.what() << " (" << error_code_name(e.code()) << ")\n";
    } catch (const std::exception& e) {
        err << "error [" << name << "]: " << e.what() << "\n";
    }
    return false;
}

std::unique_ptr<GPT2Model> load_model(const RunSpec& spec) {
    if (!spec.has_value("model")) fail(ErrorCode::InvalidConfig, "no model checkpoint given");
    const fs::path path = spec.get("model");
    if (!fs::exists(path)) fail(ErrorCode::Io, "model checkpoint '" + path.string() + "' not found");
    auto model = load_checkpoint(path);
    if (spec.has_value("adapter")) {
        load_adapter(*model, spec.get("adapter"));
        model->merge_lora();
    }
    return model;
}

std::vector<int32_t> tokenize_file(const Tokenizer& tok, const RunSpec& spec) {
    if (!spec.has_value("dataset")) fail(ErrorCode::InvalidConfig, "no dataset given");
    const fs::path path = spec.get("dataset");
    if (!fs::exists(path)) fail(ErrorCode::Io, "dataset '" + path.string() + "' not found");
    return tok.encode(read_text_file(path));
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    out.flush();
    if (!out) fail(ErrorCode::Io, "cannot write '" + path.string() + "'");
}

}  // namespace

Tokenizer make_tokenizer(const RunSpec& spec) {
    const auto& kind = spec.get("tokenizer");
    if (kind == "byte") return Tokenizer::byte_level();
    if (kind == "bpe") return Tokenizer::from_files(spec.get("vocab_file"), spec.get("merges_file"));
    fail(ErrorCode::InvalidConfig, "tokenizer must be 'byte' or 'bpe', got '" + kind + "'");
}

std::unique_ptr<PowerSource> make_power_source(const std::string& description) {
    auto colon = description.find(':');
    const std::string kind = description.substr(0, colon);
    const std::string rest = colon == std::string::npos ? "" : description.substr(colon + 1);
    if (kind == "file") {
        if (rest.empty()) fail(ErrorCode::InvalidConfig, "file battery source needs a path");
        return std::make_unique<FileProbe>(rest);
    }
    std::vector<float> nums;
    std::istringstream in(rest);
    std::string item;
    while (std::getline(in, item, ':')) {
        try {
            nums.push_back(std::stof(item));
        } catch (const std::exception&) {
            fail(ErrorCode::InvalidConfig, "battery source '" + description + "' has a non-numeric field");
        }
    }
    if (kind == "fixed" && nums.size() == 1) return std::make_unique<FixedSource>(nums[0]);
    if (kind == "simulated" && nums.size() == 3) return std::make_unique<SimulatedBattery>(nums[0], nums[1], nums[2]);
    fail(ErrorCode::InvalidConfig, "unrecognised battery source '" + description + "'");
}

int cmd_init(RunSpec spec, std::ostream& out, std::ostream& err) {
    bool ok = stage("init", err, [&] {
        if (!spec.has_value("model")) fail(ErrorCode::InvalidConfig, "no output path given for the model");
        auto model = GPT2Model::build(spec.model_config(), static_cast<uint64_t>(spec.get_int("init_seed")));
        save_checkpoint(*model, spec.get("model"));
        out << "wrote " << spec.get("model") << " (" << model->num_parameters() << " parameters)\n";
    });
    return ok ? 0 : 1;
}

int cmd_finetune(RunSpec spec, std::ostream& out, std::ostream& err, const ProgressFn& progress) {
    spec.resolve();
    TrainConfig cfg;
    std::unique_ptr<GPT2Model> model;
    Tokenizer tok;
    std::vector<int32_t> stream;
    std::unique_ptr<PowerSource> power;
    const fs::path out_dir = spec.get("output_dir");

    if (!stage("config", err, [&] {
            cfg = spec.train_config();
            if (cfg.throttle) power = make_power_source(spec.get("battery"));
            std::error_code ec;
            fs::create_directories(out_dir, ec);
            if (ec) fail(ErrorCode::Io, "cannot create output directory '" + out_dir.string() + "'");
            write_text(out_dir / "resolved.conf", spec.dump());
        })) {
        return 1;
    }
    if (!stage("load", err, [&] { model = load_model(spec); })) return 1;
    if (!stage("tokenize", err, [&] {
            tok = make_tokenizer(spec);
            stream = tokenize_file(tok, spec);
            if (tok.vocab_size() > model->vocab_size()) {
                fail(ErrorCode::InvalidConfig, "tokenizer vocabulary exceeds the model's");
            }
        })) {
        return 1;
    }

    auto [train_ids, test_ids] = split_stream(stream, 0.9);
    TokenDataset train_set(std::move(train_ids), cfg.seq_len, cfg.seed, true);
    TokenDataset test_set(std::move(test_ids), cfg.seq_len, cfg.seed, false);
    const TokenDataset* test = test_set.num_windows() > 0 ? &test_set : nullptr;

    std::vector<MetricsRecord> records;
    if (!stage("train", err, [&] {
            Trainer trainer(*model, cfg, train_set, test, power.get());
            MetricsSink sink(out_dir / "metrics.jsonl");
            std::ofstream timing(out_dir / "timing.jsonl", std::ios::trunc);
            const int64_t total = trainer.total_steps();
            trainer.on_step = [&](const MetricsRecord& rec, const StepTiming& t) {
                nlohmann::ordered_json j;
                j["step"] = t.step;
                j["compute_ms"] = t.compute_s * 1000.0;
                j["sleep_ms"] = t.sleep_s * 1000.0;
                j["wall_ms"] = t.wall_s * 1000.0;
                j["rss_bytes"] = t.rss_bytes;
                j["energy_j"] = t.energy_j;
                j["resident_param_bytes"] = t.resident_param_bytes;
                j["battery_percent"] = t.battery_percent;
                j["throttled"] = t.throttled;
                timing << j.dump() << '\n';
                timing.flush();
                if (progress) progress(rec.step, total, rec.train_loss);
            };
            records = trainer.run(&sink);
        })) {
        return 1;
    }
    if (!stage("save", err, [&] {
            if (cfg.mode == FinetuneMode::LoRA) save_adapter(*model, out_dir / "adapter.safetensors");
            else save_checkpoint(*model, out_dir / "model.safetensors");
        })) {
        return 1;
    }
    if (!records.empty()) {
        out << "finished " << records.size() << " steps, final train loss " << records.back().train_loss << "\n";
    }
    return 0;
}

int cmd_eval(RunSpec spec, std::ostream& out, std::ostream& err) {
    std::unique_ptr<GPT2Model> model;
    Tokenizer tok;
    if (!stage("load", err, [&] {
            model = load_model(spec);
            tok = make_tokenizer(spec);
        })) {
        return 1;
    }
    const auto& task = spec.get("task");
    if (task == "mcq") {
        double acc = 0.0;
        if (!stage("eval", err, [&] {
                if (!spec.has_value("dataset")) fail(ErrorCode::InvalidConfig, "no dataset given");
                auto items = load_mcq(spec.get("dataset"));
                acc = evaluate_mcq(*model, tok, items);
            })) {
            return 1;
        }
        nlohmann::ordered_json j;
        j["task"] = "mcq";
        j["accuracy"] = acc;
        out << "accuracy: " << acc << "\n" << j.dump() << "\n";
        return 0;
    }
    if (task != "lm") {
        err << "error [config]: task must be 'lm' or 'mcq', got '" << task << "'\n";
        return 1;
    }
    EvalResult res;
    if (!stage("eval", err, [&] {
            auto stream = tokenize_file(tok, spec);
            const auto& split = spec.get("eval_split");
            if (split == "train") stream = split_stream(stream, 0.9).first;
            else if (split == "test") stream = split_stream(stream, 0.9).second;
            else if (split != "all") fail(ErrorCode::InvalidConfig, "eval_split must be all, train or test");
            TokenDataset data(std::move(stream), spec.get_int("seq_len"), 0, false);
            res = evaluate_ppl(*model, data, spec.get_int("eval_batch"));
        })) {
        return 1;
    }
    nlohmann::ordered_json j;
    j["task"] = "lm";
    j["test_loss"] = res.test_loss;
    j["ppl"] = res.ppl;
    j["tokens"] = res.tokens;
    out << "test loss: " << res.test_loss << "  ppl: " << res.ppl << "\n" << j.dump() << "\n";
    return 0;
}

int cmd_generate(RunSpec spec, std::ostream& out, std::ostream& err) {
    std::unique_ptr<GPT2Model> model;
    Tokenizer tok;
    if (!stage("load", err, [&] {
            model = load_model(spec);
            tok = make_tokenizer(spec);
        })) {
        return 1;
    }
    std::string text;
    if (!stage("generate", err, [&] {
            auto prompt = tok.encode(spec.get("prompt"));
            auto ids = generate(*model, prompt, spec.get_int("max_new"), spec.get_bool("use_cache"));
            text = tok.decode(ids);
        })) {
        return 1;
    }
    out << text << "\n";
    return 0;
}

int run_command(RunSpec spec, std::ostream& out, std::ostream& err, const ProgressFn& progress) {
    const auto& cmd = spec.get("command");
    if (cmd == "finetune") return cmd_finetune(std::move(spec), out, err, progress);
    if (cmd == "eval") return cmd_eval(std::move(spec), out, err);
    if (cmd == "generate") return cmd_generate(std::move(spec), out, err);
    if (cmd == "init") return cmd_init(std::move(spec), out, err);
    err << "error [config]: unknown command '" << cmd << "'\n";
    return 1;
}

}  // namespace mft
