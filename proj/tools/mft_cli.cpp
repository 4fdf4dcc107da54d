/**
 * @file mft_cli.cpp
 * @brief `mft` command line: init, finetune, eval, generate.
 *
 * Values come from the defaults, then --config, then named flags, then --set.
 */
#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "mft/mft_c.h"

namespace {

struct FlagKey {
    const char* flag;
    const char* key;
    const char* help;
};

const FlagKey kFlags[] = {
    {"--model", "model", "model checkpoint (.safetensors)"},
    {"--adapter", "adapter", "LoRA adapter file merged into the model on load"},
    {"--tokenizer", "tokenizer", "byte | bpe"},
    {"--vocab", "vocab_file", "GPT-2 vocab.json"},
    {"--merges", "merges_file", "GPT-2 merges.txt"},
    {"--dataset", "dataset", "text file (lm) or JSON-lines file (mcq)"},
    {"--task", "task", "lm | mcq"},
    {"--eval-split", "eval_split", "all | train | test"},
    {"--output,-o", "output_dir", "output directory"},
    {"--vocab-size", "vocab_size", "init: vocabulary size"},
    {"--d-model", "d_model", "init: hidden size"},
    {"--layers", "n_layers", "init: transformer blocks"},
    {"--heads", "n_heads", "init: attention heads"},
    {"--max-seq-len", "max_seq_len", "init: positions"},
    {"--tie-embeddings", "tie_embeddings", "init: share input and output embeddings"},
    {"--init-seed", "init_seed", "init: weight seed"},
    {"--mode", "mode", "full | lora"},
    {"--optimizer", "optimizer", "adamw | sgd"},
    {"--lr", "lr", "learning rate"},
    {"--weight-decay", "weight_decay", "AdamW decoupled weight decay"},
    {"--batch", "batch_size", "macro-batch size"},
    {"--grad-accum", "grad_accum", "micro-batches per optimizer step"},
    {"--seq-len", "seq_len", "training window length"},
    {"--epochs", "max_epochs", "epochs"},
    {"--steps-per-epoch", "steps_per_epoch", "macro-steps per epoch (0 = one pass)"},
    {"--eval-every", "eval_every", "test-split evaluation interval in steps"},
    {"--eval-batch", "eval_batch", "evaluation batch size"},
    {"--seed", "seed", "data order and dropout seed"},
    {"--deterministic", "deterministic", "true | false"},
    {"--rank", "lora_rank", "LoRA rank"},
    {"--alpha", "lora_alpha", "LoRA alpha"},
    {"--dropout", "lora_dropout", "LoRA dropout"},
    {"--targets", "lora_targets", "comma-separated projection roles"},
    {"--shard-segments", "shard_segments", "split parameters into k segments with disk offload"},
    {"--shard-budget-mb", "shard_budget_mb", "resident parameter budget in MiB"},
    {"--throttle-k", "throttle_k", "battery check interval in steps (0 = off)"},
    {"--throttle-mu", "throttle_mu", "battery threshold percent"},
    {"--throttle-rho", "throttle_rho", "frequency reduction in [0,1)"},
    {"--battery", "battery", "simulated:init:active_drain:idle_drain | fixed:pct | file:path"},
    {"--prompt", "prompt", "generation prompt"},
    {"--max-new", "max_new", "tokens to generate"},
    {"--use-cache", "use_cache", "KV cache during generation"},
};

int fail_status(const char* what) {
    std::fprintf(stderr, "error [%s]: %s\n", what, mft_last_error());
    return 1;
}

void print_progress(int64_t step, int64_t total, double loss, void*) {
    std::fprintf(stderr, "step %lld/%lld  loss %.6f\n", static_cast<long long>(step), static_cast<long long>(total),
                 loss);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"on-device LLM fine-tuning engine"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    bool quiet = false;
    std::map<std::string, std::string> values;

    const char* commands[][2] = {{"init", "write a randomly initialised model"},
                                 {"finetune", "train a model on a dataset"},
                                 {"eval", "perplexity or multiple-choice accuracy"},
                                 {"generate", "greedy continuation of a prompt"}};
    std::vector<CLI::App*> subs;
    for (auto& c : commands) {
        auto* sub = app.add_subcommand(c[0], c[1]);
        sub->add_option("--config,-c", config_path, "key = value config file");
        sub->add_option("--set", sets, "key=value override, repeatable");
        sub->add_flag("--quiet,-q", quiet, "no per-step progress");
        for (const auto& f : kFlags) sub->add_option(f.flag, values[f.key], f.help);
        subs.push_back(sub);
    }

    CLI11_PARSE(app, argc, argv);

    CLI::App* active = nullptr;
    for (auto* s : subs) {
        if (s->parsed()) active = s;
    }

    mft_runspec* spec = nullptr;
    mft_status st = config_path.empty() ? mft_runspec_new(&spec) : mft_runspec_load(config_path.c_str(), &spec);
    if (st != MFT_OK) return fail_status("config");

    auto apply = [&](const std::string& key, const std::string& value) {
        if (mft_runspec_set(spec, key.c_str(), value.c_str()) != MFT_OK) {
            fail_status("config");
            return false;
        }
        return true;
    };
    bool ok = apply("command", active->get_name());
    for (const auto& f : kFlags) {
        std::string first = f.flag;
        first = first.substr(0, first.find(','));
        if (ok && active->count(first) > 0) ok = apply(f.key, values[f.key]);
    }
    for (const auto& s : sets) {
        auto eq = s.find('=');
        if (!ok) break;
        if (eq == std::string::npos) {
            std::fprintf(stderr, "error [config]: --set expects key=value, got '%s'\n", s.c_str());
            ok = false;
            break;
        }
        ok = apply(s.substr(0, eq), s.substr(eq + 1));
    }
    if (!ok) {
        mft_runspec_free(spec);
        return 1;
    }

    st = mft_run(spec, quiet ? nullptr : print_progress, nullptr);
    mft_runspec_free(spec);
    return st == MFT_OK ? 0 : 1;
}
