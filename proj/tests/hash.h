/**
 * @file hash.h
 * @brief SHA-256 over parameter bytes, for frozen-weight checks.
 */
#pragma once

#include <openssl/evp.h>

#include <cstdio>
#include <string>
#include <vector>

#include "mft/nn.h"

namespace mft::testing {

inline std::string sha256_hex(const std::vector<NamedParam>& params) {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    for (const auto& p : params) {
        EVP_DigestUpdate(ctx, p.name.data(), p.name.size());
        auto d = p.tensor.data();
        EVP_DigestUpdate(ctx, d.data(), d.size_bytes());
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        hex += buf;
    }
    return hex;
}

/// Parameters of the model that no optimizer should touch under LoRA.
inline std::vector<NamedParam> frozen_params(const std::vector<NamedParam>& all) {
    std::vector<NamedParam> out;
    for (const auto& p : all)
        if (!p.tensor.requires_grad()) out.push_back(p);
    return out;
}

}  // namespace mft::testing
