/**
 * @file optim.cpp
 */
#include "mft/optim.h"

#include <cmath>
#include <set>

#include "mft/checkpoint.h"
#include "mft/error.h"
#include "mft/tape.h"

namespace mft {

ParamGroup::ParamGroup(std::vector<NamedParam> p) : params(std::move(p)) {
    std::set<std::string> seen;
    for (const auto& np : params) {
        if (!seen.insert(np.name).second) fail(ErrorCode::InvalidArgument, "parameter '" + np.name + "' listed twice");
    }
}

int64_t ParamGroup::numel() const {
    int64_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
}

std::vector<Tensor> ParamGroup::tensors() const {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p.tensor);
    return out;
}

void Optimizer::zero_grad() {
    auto ts = group_.tensors();
    mft::zero_grad(ts);
}

void Optimizer::check_grads() const {
    for (const auto& p : group_.params) {
        if (!p.tensor.has_grad()) fail(ErrorCode::MissingGradient, "parameter '" + p.name + "' has no gradient");
    }
}

AdamW::AdamW(ParamGroup group, AdamWOptions options) : Optimizer(std::move(group)), opts_(options) {
    if (!(opts_.lr >= 0) || !(opts_.beta1 >= 0 && opts_.beta1 < 1) || !(opts_.beta2 >= 0 && opts_.beta2 < 1) ||
        !(opts_.eps > 0) || !(opts_.weight_decay >= 0)) {
        fail(ErrorCode::InvalidConfig, "invalid AdamW hyperparameters");
    }
    m_.resize(group_.size());
    v_.resize(group_.size());
}

void AdamW::step() {
    check_grads();
    ++step_count_;
    const float bc1 = static_cast<float>(1.0 - std::pow(static_cast<double>(opts_.beta1), step_count_));
    const float bc2 = static_cast<float>(1.0 - std::pow(static_cast<double>(opts_.beta2), step_count_));
    for (size_t i = 0; i < group_.params.size(); ++i) {
        auto& p = group_.params[i];
        auto& m = m_[i];
        auto& v = v_[i];
        if (m.empty()) {
            m.assign(static_cast<size_t>(p.tensor.numel()), 0.0f);
            v.assign(static_cast<size_t>(p.tensor.numel()), 0.0f);
        }
        const float decay = p.decay ? 1.0f - opts_.lr * opts_.weight_decay : 1.0f;
        auto w = p.tensor.mutable_data();
        auto g = p.tensor.grad();
        for (size_t j = 0; j < w.size(); ++j) {
            m[j] = opts_.beta1 * m[j] + (1.0f - opts_.beta1) * g[j];
            v[j] = opts_.beta2 * v[j] + (1.0f - opts_.beta2) * g[j] * g[j];
            const float mhat = m[j] / bc1;
            const float vhat = v[j] / bc2;
            w[j] = w[j] * decay - opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
        }
    }
}

void AdamW::save_state(const std::filesystem::path& path) const {
    std::map<std::string, Tensor> tensors;
    for (size_t i = 0; i < group_.params.size(); ++i) {
        if (m_[i].empty()) continue;
        const auto& shape = group_.params[i].tensor.shape();
        tensors.emplace("m." + group_.params[i].name, Tensor::from(shape, m_[i]));
        tensors.emplace("v." + group_.params[i].name, Tensor::from(shape, v_[i]));
    }
    std::map<std::string, std::string> meta{{"format", "pt"},
                                            {"mft.optimizer", "adamw"},
                                            {"mft.step_count", std::to_string(step_count_)}};
    write_safetensors(path, tensors, meta);
}

void AdamW::load_state(const std::filesystem::path& path) {
    auto contents = read_safetensors(path);
    auto it = contents.metadata.find("mft.step_count");
    if (it == contents.metadata.end()) fail(ErrorCode::BadHeader, "optimizer state '" + path.string() + "' has no step count");
    step_count_ = std::stoll(it->second);
    for (size_t i = 0; i < group_.params.size(); ++i) {
        const auto& p = group_.params[i];
        auto mi = contents.tensors.find("m." + p.name);
        auto vi = contents.tensors.find("v." + p.name);
        if (mi == contents.tensors.end() || vi == contents.tensors.end()) {
            if (step_count_ > 0) fail(ErrorCode::MissingTensor, "optimizer state for '" + p.name + "' is missing");
            m_[i].clear();
            v_[i].clear();
            continue;
        }
        if (mi->second.shape() != p.tensor.shape() || vi->second.shape() != p.tensor.shape()) {
            fail(ErrorCode::ShapeMismatch, "optimizer state for '" + p.name + "' has the wrong shape");
        }
        m_[i] = mi->second.to_vector();
        v_[i] = vi->second.to_vector();
    }
}

SGD::SGD(ParamGroup group, float lr) : Optimizer(std::move(group)), lr_(lr) {
    if (!(lr >= 0)) fail(ErrorCode::InvalidConfig, "learning rate must be non-negative");
}

void SGD::step() {
    check_grads();
    ++step_count_;
    for (auto& p : group_.params) {
        auto w = p.tensor.mutable_data();
        auto g = p.tensor.grad();
        for (size_t j = 0; j < w.size(); ++j) w[j] -= lr_ * g[j];
    }
}

}  // namespace mft
