/**
 * @file checkpoint.h
 * @brief Safetensors container I/O and model checkpoint load/save.
 *
 * Layout: 8-byte little-endian header length N, N bytes of UTF-8 JSON
 * (name -> {"dtype","shape","data_offsets"} plus "__metadata__"), then the raw
 * little-endian data region. Writers emit tensors in lexicographic name order
 * and pad the header with spaces to a multiple of 8 bytes.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mft/model.h"

namespace mft {

struct TensorEntry {
    std::string dtype;
    Shape shape;
    uint64_t begin = 0;
    uint64_t end = 0;
};

/// Parsed header. Entries are keyed (and therefore ordered) by name.
struct CheckpointMap {
    std::map<std::string, TensorEntry> entries;
    std::map<std::string, std::string> metadata;
    uint64_t header_bytes = 0;
    uint64_t data_bytes = 0;
};

/// Validates and parses the header of an in-memory container.
CheckpointMap parse_safetensors_header(const std::vector<uint8_t>& bytes);

struct SafetensorsContents {
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::string> metadata;
};

SafetensorsContents read_safetensors(const std::filesystem::path& path);
void write_safetensors(const std::filesystem::path& path, const std::map<std::string, Tensor>& tensors,
                       const std::map<std::string, std::string>& metadata);
/// Serialized bytes, identical to what write_safetensors puts on disk.
std::vector<uint8_t> encode_safetensors(const std::map<std::string, Tensor>& tensors,
                                        const std::map<std::string, std::string>& metadata);

struct LoadOptions {
    /// Name-mapping table for Hugging Face GPT-2 layouts; empty selects the bundled file.
    std::filesystem::path name_map;
    /// Head count for checkpoints that do not record it; 0 infers d_model / 64.
    int64_t n_heads = 0;
};

struct LoadReport {
    bool from_hf_layout = false;
    std::vector<std::string> ignored;
};

/// Builds a model from an engine checkpoint or a Hugging Face GPT-2 safetensors file.
std::unique_ptr<GPT2Model> load_checkpoint(const std::filesystem::path& path, const LoadOptions& options = {},
                                           LoadReport* report = nullptr);
/// Full model, including LoRA adapters when attached.
void save_checkpoint(const GPT2Model& model, const std::filesystem::path& path);
/// Adapter tensors only (possibly none) plus the config needed to re-attach them.
void save_adapter(const GPT2Model& model, const std::filesystem::path& path);
/// Attaches adapters described by the file and loads their weights.
void load_adapter(GPT2Model& model, const std::filesystem::path& path);

std::map<std::string, std::string> model_metadata(const GPT2Model& model);

std::filesystem::path default_name_map();

}  // namespace mft
