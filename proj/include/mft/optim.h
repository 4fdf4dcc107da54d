/**
 * @file optim.h
 * @brief AdamW and SGD over a named parameter group.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mft/nn.h"

namespace mft {

/// Named parameter handles updated by one optimizer. Names are unique.
struct ParamGroup {
    std::vector<NamedParam> params;

    explicit ParamGroup(std::vector<NamedParam> p = {});
    size_t size() const { return params.size(); }
    int64_t numel() const;
    std::vector<Tensor> tensors() const;
};

class Optimizer {
public:
    virtual ~Optimizer() = default;
    /// One update from the current gradients; gradients are left in place.
    virtual void step() = 0;
    virtual int64_t step_count() const = 0;
    virtual float lr() const = 0;
    virtual void set_lr(float lr) = 0;

    const ParamGroup& group() const { return group_; }
    /// Zeroes every gradient in the group and clears the tape.
    void zero_grad();

protected:
    explicit Optimizer(ParamGroup group) : group_(std::move(group)) {}
    /// MissingGradient when a parameter of the group has no gradient buffer.
    void check_grads() const;

    ParamGroup group_;
};

struct AdamWOptions {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.01f;
};

class AdamW final : public Optimizer {
public:
    AdamW(ParamGroup group, AdamWOptions options = {});

    void step() override;
    int64_t step_count() const override { return step_count_; }
    float lr() const override { return opts_.lr; }
    void set_lr(float lr) override { opts_.lr = lr; }
    const AdamWOptions& options() const { return opts_; }

    /// First and second moments of parameter i; empty before the first step.
    const std::vector<float>& m(size_t i) const { return m_[i]; }
    const std::vector<float>& v(size_t i) const { return v_[i]; }

    void save_state(const std::filesystem::path& path) const;
    void load_state(const std::filesystem::path& path);

private:
    AdamWOptions opts_;
    int64_t step_count_ = 0;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
};

class SGD final : public Optimizer {
public:
    SGD(ParamGroup group, float lr);

    void step() override;
    int64_t step_count() const override { return step_count_; }
    float lr() const override { return lr_; }
    void set_lr(float lr) override { lr_ = lr; }

private:
    float lr_;
    int64_t step_count_ = 0;
};

}  // namespace mft
