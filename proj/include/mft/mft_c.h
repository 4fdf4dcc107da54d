/**
 * @file mft_c.h
 * @brief C interface to the fine-tuning engine.
 *
 * Objects are opaque handles created and destroyed through this API. Every
 * call that can fail returns an mft_status; on failure mft_last_error()
 * describes the problem for the calling thread.
 */
#ifndef MFT_C_H
#define MFT_C_H

#include <stddef.h>
#include <stdint.h>

#if defined(MFT_BUILDING_LIBRARY)
#define MFT_API __attribute__((visibility("default")))
#else
#define MFT_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mft_status {
    MFT_OK = 0,
    MFT_ERR_INVALID_ARGUMENT = 1,
    MFT_ERR_SHAPE_MISMATCH,
    MFT_ERR_INDEX_OUT_OF_RANGE,
    MFT_ERR_ALL_TARGETS_IGNORED,
    MFT_ERR_NOT_SCALAR,
    MFT_ERR_NO_TAPE,
    MFT_ERR_SEQUENCE_TOO_LONG,
    MFT_ERR_NO_TARGETS_MATCHED,
    MFT_ERR_MISSING_GRADIENT,
    MFT_ERR_INVALID_CONFIG,
    MFT_ERR_BAD_MAGIC,
    MFT_ERR_BAD_HEADER,
    MFT_ERR_MISSING_TENSOR,
    MFT_ERR_UNSUPPORTED_FORMAT,
    MFT_ERR_IO,
    MFT_ERR_ASSET_MISSING,
    MFT_ERR_BUDGET_TOO_SMALL,
    MFT_ERR_EMPTY_DATASET,
    MFT_ERR_PARSE,
    MFT_ERR_INTERNAL = 100,
    MFT_ERR_COMMAND_FAILED = 101
} mft_status;

typedef struct mft_runspec mft_runspec;
typedef struct mft_model mft_model;
typedef struct mft_tokenizer mft_tokenizer;

typedef void (*mft_progress_fn)(int64_t step, int64_t total, double train_loss, void* user);

MFT_API const char* mft_version(void);
/** Message of the last failed call on this thread; empty when none. */
MFT_API const char* mft_last_error(void);
MFT_API const char* mft_status_name(mft_status status);

/* Run configuration */
MFT_API mft_status mft_runspec_new(mft_runspec** out);
MFT_API mft_status mft_runspec_load(const char* path, mft_runspec** out);
MFT_API void mft_runspec_free(mft_runspec* spec);
MFT_API mft_status mft_runspec_set(mft_runspec* spec, const char* key, const char* value);
/** Copies the value into buf (NUL-terminated); *needed receives the full length plus one. */
MFT_API mft_status mft_runspec_get(const mft_runspec* spec, const char* key, char* buf, size_t cap, size_t* needed);
MFT_API mft_status mft_runspec_dump(const mft_runspec* spec, char* buf, size_t cap, size_t* needed);

/**
 * Runs the runspec's command. Command output goes to stdout, diagnostics to
 * stderr. MFT_ERR_COMMAND_FAILED when the command reported an error.
 */
MFT_API mft_status mft_run(const mft_runspec* spec, mft_progress_fn progress, void* user);

/* Models */
MFT_API mft_status mft_model_init(int64_t vocab_size, int64_t d_model, int64_t n_layers, int64_t n_heads,
                                  int64_t max_seq_len, int tie_embeddings, uint64_t seed, mft_model** out);
MFT_API mft_status mft_model_load(const char* path, mft_model** out);
MFT_API mft_status mft_model_save(const mft_model* model, const char* path);
MFT_API void mft_model_free(mft_model* model);
MFT_API int64_t mft_model_num_parameters(const mft_model* model);
MFT_API mft_status mft_model_attach_lora(mft_model* model, int64_t rank, float alpha, float dropout,
                                         const char* targets, uint64_t seed, int64_t* adapter_params);
MFT_API mft_status mft_model_load_adapter(mft_model* model, const char* path);
MFT_API mft_status mft_model_merge_lora(mft_model* model);
/** Greedy continuation; out receives prompt followed by new ids, *out_len the total count. */
MFT_API mft_status mft_model_generate(const mft_model* model, const int32_t* prompt, size_t prompt_len, int64_t max_new,
                                      int use_cache, int32_t* out, size_t cap, size_t* out_len);
/** Mean token NLL over the token stream in windows of seq_len; ppl = exp(loss). */
MFT_API mft_status mft_model_eval_tokens(mft_model* model, const int32_t* tokens, size_t n, int64_t seq_len,
                                         double* loss, double* ppl);

/* Tokenizers */
MFT_API mft_status mft_tokenizer_byte_level(mft_tokenizer** out);
MFT_API mft_status mft_tokenizer_load(const char* vocab_json, const char* merges_txt, mft_tokenizer** out);
MFT_API void mft_tokenizer_free(mft_tokenizer* tok);
MFT_API mft_status mft_tokenizer_encode(const mft_tokenizer* tok, const char* text, int32_t* out, size_t cap,
                                        size_t* out_len);
MFT_API mft_status mft_tokenizer_decode(const mft_tokenizer* tok, const int32_t* ids, size_t n, char* buf, size_t cap,
                                        size_t* needed);

#ifdef __cplusplus
}
#endif

#endif
