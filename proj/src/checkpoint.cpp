/**
 * @file checkpoint.cpp
 * @brief Safetensors reader/writer and GPT-2 checkpoint mapping.
 */
#include "mft/checkpoint.h"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iostream>
#include <regex>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mft/error.h"

namespace mft {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot open '" + path.string() + "'");
    in.seekg(0, std::ios::end);
    auto size = static_cast<size_t>(in.tellg());
    in.seekg(0);
    std::vector<uint8_t> bytes(size);
    if (size && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
        fail(ErrorCode::Io, "failed reading '" + path.string() + "'");
    }
    return bytes;
}

void write_file(const fs::path& path, const std::vector<uint8_t>& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot create '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::Io, "failed writing '" + path.string() + "'");
}

std::string format_float(float v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

int64_t meta_int(const std::map<std::string, std::string>& meta, const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) fail(ErrorCode::BadHeader, "checkpoint metadata lacks '" + key + "'");
    try {
        return std::stoll(it->second);
    } catch (const std::exception&) {
        fail(ErrorCode::BadHeader, "metadata '" + key + "' is not an integer");
    }
}

float meta_float(const std::map<std::string, std::string>& meta, const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) fail(ErrorCode::BadHeader, "checkpoint metadata lacks '" + key + "'");
    try {
        return std::stof(it->second);
    } catch (const std::exception&) {
        fail(ErrorCode::BadHeader, "metadata '" + key + "' is not a number");
    }
}

ModelConfig config_from_metadata(const std::map<std::string, std::string>& meta) {
    ModelConfig c;
    c.vocab_size = meta_int(meta, "mft.vocab_size");
    c.d_model = meta_int(meta, "mft.d_model");
    c.n_layers = meta_int(meta, "mft.n_layers");
    c.n_heads = meta_int(meta, "mft.n_heads");
    c.max_seq_len = meta_int(meta, "mft.max_seq_len");
    c.tie_embeddings = meta_int(meta, "mft.tie_embeddings") != 0;
    return c;
}

std::optional<LoRAConfig> lora_from_metadata(const std::map<std::string, std::string>& meta) {
    if (!meta.count("mft.lora.rank")) return std::nullopt;
    LoRAConfig l;
    l.rank = meta_int(meta, "mft.lora.rank");
    l.alpha = meta_float(meta, "mft.lora.alpha");
    l.dropout = meta_float(meta, "mft.lora.dropout");
    l.init_std = meta_float(meta, "mft.lora.init_std");
    l.targets.clear();
    std::stringstream ss(meta.at("mft.lora.targets"));
    std::string t;
    while (std::getline(ss, t, ',')) {
        if (!t.empty()) l.targets.push_back(t);
    }
    return l;
}

void copy_into(Tensor& dst, const Tensor& src, const std::string& name) {
    if (dst.shape() != src.shape()) {
        fail(ErrorCode::ShapeMismatch, "tensor '" + name + "' has shape " + shape_str(src.shape()) + ", model expects " +
                                           shape_str(dst.shape()));
    }
    auto s = src.data();
    auto d = dst.mutable_data();
    std::copy(s.begin(), s.end(), d.begin());
}

Tensor transpose2d(const Tensor& t) {
    const int64_t r = t.size(0), c = t.size(1);
    auto d = t.data();
    std::vector<float> out(static_cast<size_t>(r * c));
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out[static_cast<size_t>(j * r + i)] = d[static_cast<size_t>(i * c + j)];
    return Tensor::from({c, r}, std::move(out));
}

// Splits the last axis into n equal parts.
std::vector<Tensor> split_last(const Tensor& t, size_t n) {
    const int64_t cols = t.size(-1);
    if (cols % static_cast<int64_t>(n) != 0) fail(ErrorCode::ShapeMismatch, "cannot split " + shape_str(t.shape()));
    const int64_t part = cols / static_cast<int64_t>(n);
    const int64_t rows = t.numel() / cols;
    auto d = t.data();
    std::vector<Tensor> parts;
    for (size_t k = 0; k < n; ++k) {
        std::vector<float> v(static_cast<size_t>(rows * part));
        for (int64_t r = 0; r < rows; ++r)
            std::copy_n(d.begin() + r * cols + static_cast<int64_t>(k) * part, part, v.begin() + r * part);
        Shape s = t.shape();
        s.back() = part;
        parts.push_back(Tensor::from(s, std::move(v)));
    }
    return parts;
}

struct NameRule {
    std::regex source;
    std::vector<std::string> targets;
    std::string transform;
};

std::vector<NameRule> read_name_map(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::AssetMissing, "name map '" + path.string() + "' not found");
    std::vector<NameRule> rules;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::stringstream ss(line);
        std::string src, dst, transform;
        std::getline(ss, src, '\t');
        std::getline(ss, dst, '\t');
        std::getline(ss, transform, '\t');
        if (src.empty() || dst.empty() || transform.empty()) fail(ErrorCode::ParseError, "malformed name map line: " + line);
        std::string pattern;
        for (size_t i = 0; i < src.size(); ++i) {
            if (src.compare(i, 3, "{i}") == 0) {
                pattern += "(\\d+)";
                i += 2;
            } else if (src[i] == '.') {
                pattern += "\\.";
            } else {
                pattern += src[i];
            }
        }
        NameRule rule{std::regex(pattern), {}, transform};
        std::stringstream ts(dst);
        std::string t;
        while (std::getline(ts, t, ',')) rule.targets.push_back(t);
        rules.push_back(std::move(rule));
    }
    return rules;
}

std::string expand_index(std::string name, const std::string& index) {
    auto pos = name.find("{i}");
    if (pos != std::string::npos) name.replace(pos, 3, index);
    return name;
}

std::unique_ptr<GPT2Model> load_hf(const SafetensorsContents& file, const LoadOptions& options, LoadReport* report) {
    auto rules = read_name_map(options.name_map.empty() ? default_name_map() : options.name_map);
    std::map<std::string, Tensor> mapped;
    std::vector<std::string> ignored;
    for (const auto& [raw_name, tensor] : file.tensors) {
        std::string name = raw_name.starts_with("transformer.") ? raw_name.substr(12) : raw_name;
        bool matched = false;
        for (const auto& rule : rules) {
            std::smatch m;
            if (!std::regex_match(name, m, rule.source)) continue;
            matched = true;
            const std::string index = m.size() > 1 ? m[1].str() : "";
            std::vector<std::string> targets;
            for (const auto& t : rule.targets) targets.push_back(expand_index(t, index));
            if (rule.transform == "copy") {
                mapped[targets[0]] = tensor;
            } else if (rule.transform == "transpose") {
                mapped[targets[0]] = transpose2d(tensor);
            } else if (rule.transform == "split") {
                auto parts = split_last(tensor, targets.size());
                for (size_t k = 0; k < targets.size(); ++k) mapped[targets[k]] = parts[k];
            } else if (rule.transform == "split_transpose") {
                auto parts = split_last(tensor, targets.size());
                for (size_t k = 0; k < targets.size(); ++k) mapped[targets[k]] = transpose2d(parts[k]);
            } else {
                fail(ErrorCode::ParseError, "unknown name-map transform '" + rule.transform + "'");
            }
            break;
        }
        if (!matched) ignored.push_back(raw_name);
    }
    auto need = [&](const std::string& n) -> const Tensor& {
        auto it = mapped.find(n);
        if (it == mapped.end()) fail(ErrorCode::MissingTensor, "checkpoint is missing tensor '" + n + "'");
        return it->second;
    };
    ModelConfig c;
    c.vocab_size = need("wte.weight").size(0);
    c.d_model = need("wte.weight").size(1);
    c.max_seq_len = need("wpe.weight").size(0);
    c.n_layers = 0;
    while (mapped.count("h." + std::to_string(c.n_layers) + ".ln_1.weight")) ++c.n_layers;
    if (file.metadata.count("mft.n_heads")) {
        c.n_heads = meta_int(file.metadata, "mft.n_heads");
    } else {
        c.n_heads = options.n_heads > 0 ? options.n_heads : std::max<int64_t>(1, c.d_model / 64);
    }
    c.tie_embeddings = true;
    auto model = GPT2Model::build(c, 0);
    for (auto& p : model->parameters()) copy_into(p.tensor, need(p.name), p.name);
    if (report) {
        report->from_hf_layout = true;
        report->ignored = ignored;
    }
    return model;
}

}  // namespace

fs::path default_name_map() { return fs::path(MFT_DATA_DIR) / "gpt2_hf_names.tsv"; }

CheckpointMap parse_safetensors_header(const std::vector<uint8_t>& bytes) {
    // A valid length prefix can start with 0x80, so the foreign magics are only
    // consulted once the safetensors framing has failed.
    auto foreign = [&] {
        if (bytes.size() >= 2 && ((bytes[0] == 'P' && bytes[1] == 'K') || (bytes[0] == 0x80 && bytes[1] <= 5))) {
            fail(ErrorCode::BadMagic, "file looks like a pickle/zip checkpoint; only safetensors is supported");
        }
    };
    if (bytes.size() < 8) {
        foreign();
        fail(ErrorCode::BadHeader, "file shorter than the 8-byte header length");
    }
    uint64_t n = 0;
    std::memcpy(&n, bytes.data(), 8);
    if (n == 0 || n > bytes.size() - 8) {
        foreign();
        fail(ErrorCode::BadHeader, "header length " + std::to_string(n) + " exceeds file size");
    }
    std::string text(reinterpret_cast<const char*>(bytes.data() + 8), n);
    auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos || text[first] != '{') fail(ErrorCode::BadHeader, "header is not a JSON object");
    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorCode::BadHeader, std::string("header JSON does not parse: ") + e.what());
    }
    if (!header.is_object()) fail(ErrorCode::BadHeader, "header is not a JSON object");
    CheckpointMap map;
    map.header_bytes = n;
    map.data_bytes = bytes.size() - 8 - n;
    try {
        for (auto& [key, value] : header.items()) {
            if (key == "__metadata__") {
                for (auto& [mk, mv] : value.items()) map.metadata[mk] = mv.get<std::string>();
                continue;
            }
            TensorEntry e;
            e.dtype = value.at("dtype").get<std::string>();
            e.shape = value.at("shape").get<Shape>();
            auto offs = value.at("data_offsets");
            if (!offs.is_array() || offs.size() != 2) fail(ErrorCode::BadHeader, "bad data_offsets for '" + key + "'");
            e.begin = offs[0].get<uint64_t>();
            e.end = offs[1].get<uint64_t>();
            map.entries[key] = std::move(e);
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::BadHeader, std::string("malformed header entry: ") + e.what());
    }
    std::vector<std::pair<uint64_t, uint64_t>> ranges;
    for (auto& [name, e] : map.entries) {
        if (e.dtype != "F32") fail(ErrorCode::UnsupportedFormat, "tensor '" + name + "' has dtype " + e.dtype + "; only F32 is supported");
        for (auto d : e.shape) {
            if (d < 0) fail(ErrorCode::BadHeader, "negative extent in '" + name + "'");
        }
        if (e.end < e.begin || e.end - e.begin != static_cast<uint64_t>(shape_numel(e.shape)) * 4) {
            fail(ErrorCode::BadHeader, "byte range of '" + name + "' does not match its shape");
        }
        ranges.emplace_back(e.begin, e.end);
    }
    std::sort(ranges.begin(), ranges.end());
    uint64_t cursor = 0;
    for (auto& [b, e] : ranges) {
        if (b != cursor) fail(ErrorCode::BadHeader, "tensor byte ranges overlap or leave gaps");
        cursor = e;
    }
    if (cursor != map.data_bytes) fail(ErrorCode::BadHeader, "tensor byte ranges do not cover the data region");
    return map;
}

SafetensorsContents read_safetensors(const fs::path& path) {
    auto bytes = read_file(path);
    auto map = parse_safetensors_header(bytes);
    SafetensorsContents out;
    out.metadata = map.metadata;
    const uint8_t* base = bytes.data() + 8 + map.header_bytes;
    for (auto& [name, e] : map.entries) {
        std::vector<float> v(static_cast<size_t>(shape_numel(e.shape)));
        if (!v.empty()) std::memcpy(v.data(), base + e.begin, e.end - e.begin);
        out.tensors.emplace(name, Tensor::from(e.shape, std::move(v)));
    }
    return out;
}

std::vector<uint8_t> encode_safetensors(const std::map<std::string, Tensor>& tensors,
                                        const std::map<std::string, std::string>& metadata) {
    json header = json::object();
    if (!metadata.empty()) header["__metadata__"] = metadata;
    uint64_t offset = 0;
    for (auto& [name, t] : tensors) {
        const uint64_t n = static_cast<uint64_t>(t.numel()) * 4;
        header[name] = {{"dtype", "F32"}, {"shape", t.shape()}, {"data_offsets", {offset, offset + n}}};
        offset += n;
    }
    std::string text = header.dump();
    while (text.size() % 8 != 0) text.push_back(' ');
    std::vector<uint8_t> bytes(8 + text.size() + offset);
    const uint64_t n = text.size();
    std::memcpy(bytes.data(), &n, 8);
    std::memcpy(bytes.data() + 8, text.data(), text.size());
    uint8_t* cursor = bytes.data() + 8 + text.size();
    for (auto& [name, t] : tensors) {
        auto d = t.data();
        if (!d.empty()) std::memcpy(cursor, d.data(), d.size() * 4);
        cursor += d.size() * 4;
    }
    return bytes;
}

void write_safetensors(const fs::path& path, const std::map<std::string, Tensor>& tensors,
                       const std::map<std::string, std::string>& metadata) {
    write_file(path, encode_safetensors(tensors, metadata));
}

std::map<std::string, std::string> model_metadata(const GPT2Model& model) {
    const auto& c = model.config();
    std::map<std::string, std::string> meta{
        {"format", "pt"},
        {"mft.vocab_size", std::to_string(c.vocab_size)},
        {"mft.d_model", std::to_string(c.d_model)},
        {"mft.n_layers", std::to_string(c.n_layers)},
        {"mft.n_heads", std::to_string(c.n_heads)},
        {"mft.max_seq_len", std::to_string(c.max_seq_len)},
        {"mft.tie_embeddings", c.tie_embeddings ? "1" : "0"},
    };
    if (const auto& l = model.lora_config()) {
        meta["mft.lora.rank"] = std::to_string(l->rank);
        meta["mft.lora.alpha"] = format_float(l->alpha);
        meta["mft.lora.dropout"] = format_float(l->dropout);
        meta["mft.lora.init_std"] = format_float(l->init_std);
        std::string targets;
        for (size_t i = 0; i < l->targets.size(); ++i) targets += (i ? "," : "") + l->targets[i];
        meta["mft.lora.targets"] = targets;
    }
    return meta;
}

std::unique_ptr<GPT2Model> load_checkpoint(const fs::path& path, const LoadOptions& options, LoadReport* report) {
    auto file = read_safetensors(path);
    if (!file.metadata.count("mft.vocab_size")) {
        bool hf = false;
        for (auto& [name, t] : file.tensors) {
            if (name.find("attn.c_attn.weight") != std::string::npos) hf = true;
        }
        if (!hf) fail(ErrorCode::BadHeader, "'" + path.string() + "' carries neither engine metadata nor a GPT-2 layout");
        return load_hf(file, options, report);
    }
    auto model = GPT2Model::build(config_from_metadata(file.metadata), 0);
    if (auto lora = lora_from_metadata(file.metadata)) model->attach_lora(*lora, 0);
    std::set<std::string> used;
    for (auto& p : model->parameters()) {
        auto it = file.tensors.find(p.name);
        if (it == file.tensors.end()) fail(ErrorCode::MissingTensor, "checkpoint is missing tensor '" + p.name + "'");
        copy_into(p.tensor, it->second, p.name);
        used.insert(p.name);
    }
    if (report) {
        for (auto& [name, t] : file.tensors) {
            if (!used.count(name)) report->ignored.push_back(name);
        }
    }
    return model;
}

void save_checkpoint(const GPT2Model& model, const fs::path& path) {
    std::map<std::string, Tensor> tensors;
    for (auto& p : model.parameters()) tensors.emplace(p.name, p.tensor);
    write_safetensors(path, tensors, model_metadata(model));
}

void save_adapter(const GPT2Model& model, const fs::path& path) {
    std::map<std::string, Tensor> tensors;
    for (auto& p : trainable_params(model, FinetuneMode::LoRA)) tensors.emplace(p.name, p.tensor);
    write_safetensors(path, tensors, model_metadata(model));
}

void load_adapter(GPT2Model& model, const fs::path& path) {
    auto file = read_safetensors(path);
    auto lora = lora_from_metadata(file.metadata);
    if (!lora) fail(ErrorCode::BadHeader, "'" + path.string() + "' has no LoRA configuration in its metadata");
    if (file.metadata.count("mft.d_model")) {
        if (config_from_metadata(file.metadata) != model.config()) {
            fail(ErrorCode::ShapeMismatch, "adapter '" + path.string() + "' was trained for a different model shape");
        }
    }
    model.attach_lora(*lora, 0);
    for (auto& p : trainable_params(model, FinetuneMode::LoRA)) {
        auto it = file.tensors.find(p.name);
        if (it == file.tensors.end()) fail(ErrorCode::MissingTensor, "adapter is missing tensor '" + p.name + "'");
        copy_into(p.tensor, it->second, p.name);
    }
}

}  // namespace mft
