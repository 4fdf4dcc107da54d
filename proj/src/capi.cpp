/**
 * @file capi.cpp
 */
#include "mft/mft_c.h"

#include <cstring>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>

#include "mft/app.h"
#include "mft/checkpoint.h"
#include "mft/error.h"
#include "mft/model.h"
#include "mft/runspec.h"
#include "mft/tokenizer.h"
#include "mft/train.h"

struct mft_runspec {
    mft::RunSpec spec;
};

struct mft_model {
    std::unique_ptr<mft::GPT2Model> model;
};

struct mft_tokenizer {
    mft::Tokenizer tok;
};

namespace {

thread_local std::string g_last_error;

template <typename Fn>
mft_status guard(Fn&& fn) {
    try {
        g_last_error.clear();
        return fn();
    } catch (const mft::Error& e) {
        g_last_error = e.what();
        return static_cast<mft_status>(static_cast<int>(e.code()));
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return MFT_ERR_INTERNAL;
    }
}

mft_status null_arg(const char* what) {
    g_last_error = std::string(what) + " must not be null";
    return MFT_ERR_INVALID_ARGUMENT;
}

mft_status copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
    if (needed) *needed = s.size() + 1;
    if (!buf || cap == 0) return MFT_OK;
    if (cap < s.size() + 1) {
        g_last_error = "buffer of " + std::to_string(cap) + " bytes is too small, " + std::to_string(s.size() + 1) +
                       " needed";
        return MFT_ERR_INVALID_ARGUMENT;
    }
    std::memcpy(buf, s.c_str(), s.size() + 1);
    return MFT_OK;
}

}  // namespace

extern "C" {

const char* mft_version(void) { return "0.1.0"; }

const char* mft_last_error(void) { return g_last_error.c_str(); }

const char* mft_status_name(mft_status status) {
    if (status == MFT_OK) return "Ok";
    if (status == MFT_ERR_INTERNAL) return "Internal";
    if (status == MFT_ERR_COMMAND_FAILED) return "CommandFailed";
    return mft::error_code_name(static_cast<mft::ErrorCode>(static_cast<int>(status)));
}

mft_status mft_runspec_new(mft_runspec** out) {
    if (!out) return null_arg("out");
    return guard([&] {
        *out = new mft_runspec{};
        return MFT_OK;
    });
}

mft_status mft_runspec_load(const char* path, mft_runspec** out) {
    if (!path) return null_arg("path");
    if (!out) return null_arg("out");
    return guard([&] {
        *out = new mft_runspec{mft::RunSpec::load(path)};
        return MFT_OK;
    });
}

void mft_runspec_free(mft_runspec* spec) { delete spec; }

mft_status mft_runspec_set(mft_runspec* spec, const char* key, const char* value) {
    if (!spec) return null_arg("spec");
    if (!key || !value) return null_arg("key/value");
    return guard([&] {
        spec->spec.set(key, value);
        return MFT_OK;
    });
}

mft_status mft_runspec_get(const mft_runspec* spec, const char* key, char* buf, size_t cap, size_t* needed) {
    if (!spec) return null_arg("spec");
    if (!key) return null_arg("key");
    return guard([&] { return copy_out(spec->spec.get(key), buf, cap, needed); });
}

mft_status mft_runspec_dump(const mft_runspec* spec, char* buf, size_t cap, size_t* needed) {
    if (!spec) return null_arg("spec");
    return guard([&] {
        mft::RunSpec copy = spec->spec;
        copy.resolve();
        return copy_out(copy.dump(), buf, cap, needed);
    });
}

mft_status mft_run(const mft_runspec* spec, mft_progress_fn progress, void* user) {
    if (!spec) return null_arg("spec");
    return guard([&] {
        mft::ProgressFn fn;
        if (progress) fn = [progress, user](int64_t s, int64_t t, double l) { progress(s, t, l, user); };
        std::ostringstream err;
        int rc = mft::run_command(spec->spec, std::cout, err, fn);
        std::cerr << err.str();
        if (rc != 0) {
            g_last_error = err.str();
            while (!g_last_error.empty() && g_last_error.back() == '\n') g_last_error.pop_back();
            return MFT_ERR_COMMAND_FAILED;
        }
        return MFT_OK;
    });
}

mft_status mft_model_init(int64_t vocab_size, int64_t d_model, int64_t n_layers, int64_t n_heads, int64_t max_seq_len,
                          int tie_embeddings, uint64_t seed, mft_model** out) {
    if (!out) return null_arg("out");
    return guard([&] {
        mft::ModelConfig c;
        c.vocab_size = vocab_size;
        c.d_model = d_model;
        c.n_layers = n_layers;
        c.n_heads = n_heads;
        c.max_seq_len = max_seq_len;
        c.tie_embeddings = tie_embeddings != 0;
        *out = new mft_model{mft::GPT2Model::build(c, seed)};
        return MFT_OK;
    });
}

mft_status mft_model_load(const char* path, mft_model** out) {
    if (!path) return null_arg("path");
    if (!out) return null_arg("out");
    return guard([&] {
        *out = new mft_model{mft::load_checkpoint(path)};
        return MFT_OK;
    });
}

mft_status mft_model_save(const mft_model* model, const char* path) {
    if (!model) return null_arg("model");
    if (!path) return null_arg("path");
    return guard([&] {
        mft::save_checkpoint(*model->model, path);
        return MFT_OK;
    });
}

void mft_model_free(mft_model* model) { delete model; }

int64_t mft_model_num_parameters(const mft_model* model) { return model ? model->model->num_parameters() : -1; }

mft_status mft_model_attach_lora(mft_model* model, int64_t rank, float alpha, float dropout, const char* targets,
                                 uint64_t seed, int64_t* adapter_params) {
    if (!model) return null_arg("model");
    return guard([&] {
        mft::LoRAConfig c;
        c.rank = rank;
        c.alpha = alpha;
        c.dropout = dropout;
        if (targets) {
            mft::RunSpec tmp;
            tmp.set("lora_targets", targets);
            c.targets = tmp.get_list("lora_targets");
        }
        int64_t n = model->model->attach_lora(c, seed);
        if (adapter_params) *adapter_params = n;
        return MFT_OK;
    });
}

mft_status mft_model_load_adapter(mft_model* model, const char* path) {
    if (!model) return null_arg("model");
    if (!path) return null_arg("path");
    return guard([&] {
        mft::load_adapter(*model->model, path);
        return MFT_OK;
    });
}

mft_status mft_model_merge_lora(mft_model* model) {
    if (!model) return null_arg("model");
    return guard([&] {
        model->model->merge_lora();
        return MFT_OK;
    });
}

mft_status mft_model_generate(const mft_model* model, const int32_t* prompt, size_t prompt_len, int64_t max_new,
                              int use_cache, int32_t* out, size_t cap, size_t* out_len) {
    if (!model) return null_arg("model");
    if (!prompt && prompt_len > 0) return null_arg("prompt");
    return guard([&] {
        auto ids = mft::generate(*model->model, std::span<const int32_t>(prompt, prompt_len), max_new, use_cache != 0);
        if (out_len) *out_len = ids.size();
        if (out) {
            if (cap < ids.size()) {
                g_last_error = "output buffer holds " + std::to_string(cap) + " ids, " + std::to_string(ids.size()) +
                               " needed";
                return MFT_ERR_INVALID_ARGUMENT;
            }
            std::copy(ids.begin(), ids.end(), out);
        }
        return MFT_OK;
    });
}

mft_status mft_model_eval_tokens(mft_model* model, const int32_t* tokens, size_t n, int64_t seq_len, double* loss,
                                 double* ppl) {
    if (!model) return null_arg("model");
    if (!tokens && n > 0) return null_arg("tokens");
    return guard([&] {
        mft::TokenDataset data(std::vector<int32_t>(tokens, tokens + n), seq_len, 0, false);
        auto res = mft::evaluate_ppl(*model->model, data);
        if (loss) *loss = res.test_loss;
        if (ppl) *ppl = res.ppl;
        return MFT_OK;
    });
}

mft_status mft_tokenizer_byte_level(mft_tokenizer** out) {
    if (!out) return null_arg("out");
    return guard([&] {
        *out = new mft_tokenizer{mft::Tokenizer::byte_level()};
        return MFT_OK;
    });
}

mft_status mft_tokenizer_load(const char* vocab_json, const char* merges_txt, mft_tokenizer** out) {
    if (!vocab_json || !merges_txt) return null_arg("tokenizer paths");
    if (!out) return null_arg("out");
    return guard([&] {
        *out = new mft_tokenizer{mft::Tokenizer::from_files(vocab_json, merges_txt)};
        return MFT_OK;
    });
}

void mft_tokenizer_free(mft_tokenizer* tok) { delete tok; }

mft_status mft_tokenizer_encode(const mft_tokenizer* tok, const char* text, int32_t* out, size_t cap,
                                size_t* out_len) {
    if (!tok) return null_arg("tokenizer");
    if (!text) return null_arg("text");
    return guard([&] {
        auto ids = tok->tok.encode(text);
        if (out_len) *out_len = ids.size();
        if (out) {
            if (cap < ids.size()) {
                g_last_error = "output buffer holds " + std::to_string(cap) + " ids, " + std::to_string(ids.size()) +
                               " needed";
                return MFT_ERR_INVALID_ARGUMENT;
            }
            std::copy(ids.begin(), ids.end(), out);
        }
        return MFT_OK;
    });
}

mft_status mft_tokenizer_decode(const mft_tokenizer* tok, const int32_t* ids, size_t n, char* buf, size_t cap,
                                size_t* needed) {
    if (!tok) return null_arg("tokenizer");
    if (!ids && n > 0) return null_arg("ids");
    return guard([&] { return copy_out(tok->tok.decode(std::vector<int32_t>(ids, ids + n)), buf, cap, needed); });
}

}  // extern "C"
