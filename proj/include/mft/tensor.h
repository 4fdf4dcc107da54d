/**
 * @file tensor.h
 * @brief f32 tensor handle with optional gradient buffer and tape link.
 *
 * A Tensor is a shared handle: copies alias the same storage. Storage is
 * allocated through a counting allocator so the live-bytes estimate used by
 * the memory probe is always exact.
 *
 * Parameters that belong to a shard segment carry a segment id and the hook of
 * the manager that owns it. Every data or gradient access on such a tensor
 * first asks the hook to bring the segment into memory, which is how offloaded
 * parameters are paged back in during forward, backward and the optimizer step.
 */
#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mft {

using Shape = std::vector<int64_t>;

enum class DType { F32 };

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
std::atomic<int64_t>& live_tensor_bytes();
}

/// Bytes currently held by tensor storage (data and gradients).
int64_t live_tensor_bytes();

template <typename T>
struct TrackedAllocator {
    using value_type = T;
    TrackedAllocator() = default;
    template <typename U>
    TrackedAllocator(const TrackedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        auto* p = std::allocator<T>{}.allocate(n);
        detail::live_tensor_bytes().fetch_add(static_cast<int64_t>(n * sizeof(T)), std::memory_order_relaxed);
        return p;
    }
    void deallocate(T* p, std::size_t n) noexcept {
        detail::live_tensor_bytes().fetch_sub(static_cast<int64_t>(n * sizeof(T)), std::memory_order_relaxed);
        std::allocator<T>{}.deallocate(p, n);
    }
    template <typename U>
    bool operator==(const TrackedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<float, TrackedAllocator<float>>;

/// Called before a segment-tagged tensor is touched.
class ResidencyHook {
public:
    virtual ~ResidencyHook() = default;
    virtual void require(int32_t segment, bool write) = 0;
};

struct TensorImpl {
    Shape shape;
    Buffer data;
    Buffer grad;
    bool requires_grad = false;
    int64_t node = -1;
    int32_t segment = -1;
    ResidencyHook* residency = nullptr;

    void touch(bool write) const {
        if (residency) residency->require(segment, write);
    }
};

class Rng;

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, float value, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);
    static Tensor randn(const Shape& shape, float stddev, Rng& rng, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t ndim() const { return static_cast<int64_t>(impl_->shape.size()); }
    /// Extent of axis i; negative i counts from the end.
    int64_t size(int64_t i) const;
    int64_t numel() const { return shape_numel(impl_->shape); }
    int64_t bytes() const { return numel() * static_cast<int64_t>(sizeof(float)); }
    DType dtype() const { return DType::F32; }

    std::span<const float> data() const;
    std::span<float> mutable_data();
    float item() const;
    std::vector<float> to_vector() const;

    bool requires_grad() const { return impl_->requires_grad; }
    /// Leaf-only; clears any gradient when switched off.
    void set_requires_grad(bool value);
    bool has_grad() const;
    std::span<const float> grad() const;
    /// Gradient buffer, zero-allocated on first use.
    std::span<float> mutable_grad();
    void clear_grad();

    /// New leaf with a copy of the data and no tape link.
    Tensor detach() const;

    TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& shared() const { return impl_; }

    bool same(const Tensor& other) const { return impl_ == other.impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

/// Integer id tensor (token ids, targets).
struct IdTensor {
    Shape shape;
    std::vector<int32_t> data;

    IdTensor() = default;
    IdTensor(Shape s, std::vector<int32_t> d);
    int64_t numel() const { return shape_numel(shape); }
};

/// Process-wide validation switch; when on, every op screens its output for NaN/Inf.
void set_validation_mode(bool enabled);
bool validation_mode();

}  // namespace mft
