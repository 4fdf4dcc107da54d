/**
 * @file tensor.cpp
 */
#include "mft/tensor.h"

#include <cmath>
#include <sstream>

#include "mft/error.h"
#include "mft/rng.h"
#include "mft/tape.h"

namespace mft {

namespace detail {
std::atomic<int64_t>& live_tensor_bytes() {
    static std::atomic<int64_t> bytes{0};
    return bytes;
}
}  // namespace detail

int64_t live_tensor_bytes() { return detail::live_tensor_bytes().load(std::memory_order_relaxed); }

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {
std::atomic<bool> g_validation{false};

std::shared_ptr<TensorImpl> make_impl(const Shape& shape, bool requires_grad) {
    for (auto d : shape) {
        if (d < 0) fail(ErrorCode::InvalidArgument, "negative extent in shape " + shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
    impl->requires_grad = requires_grad;
    return impl;
}
}  // namespace

void set_validation_mode(bool enabled) { g_validation.store(enabled); }
bool validation_mode() { return g_validation.load(); }

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return Tensor(make_impl(shape, requires_grad));
}

Tensor Tensor::full(const Shape& shape, float value, bool requires_grad) {
    auto impl = make_impl(shape, requires_grad);
    std::fill(impl->data.begin(), impl->data.end(), value);
    return Tensor(std::move(impl));
}

Tensor Tensor::from(const Shape& shape, std::vector<float> values, bool requires_grad) {
    if (static_cast<int64_t>(values.size()) != shape_numel(shape)) {
        fail(ErrorCode::ShapeMismatch, "value count " + std::to_string(values.size()) +
                                           " does not match shape " + shape_str(shape));
    }
    auto impl = make_impl(shape, requires_grad);
    std::copy(values.begin(), values.end(), impl->data.begin());
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return full({}, value, requires_grad); }

Tensor Tensor::randn(const Shape& shape, float stddev, Rng& rng, bool requires_grad) {
    auto impl = make_impl(shape, requires_grad);
    for (auto& v : impl->data) v = rng.normal(0.0f, stddev);
    return Tensor(std::move(impl));
}

int64_t Tensor::size(int64_t i) const {
    int64_t n = ndim();
    if (i < 0) i += n;
    if (i < 0 || i >= n) fail(ErrorCode::IndexOutOfRange, "axis out of range for shape " + shape_str(shape()));
    return impl_->shape[static_cast<size_t>(i)];
}

std::span<const float> Tensor::data() const {
    impl_->touch(false);
    return {impl_->data.data(), impl_->data.size()};
}

std::span<float> Tensor::mutable_data() {
    impl_->touch(true);
    return {impl_->data.data(), impl_->data.size()};
}

float Tensor::item() const {
    if (numel() != 1) fail(ErrorCode::NotScalar, "item() on tensor of shape " + shape_str(shape()));
    return data()[0];
}

std::vector<float> Tensor::to_vector() const {
    auto d = data();
    return {d.begin(), d.end()};
}

void Tensor::set_requires_grad(bool value) {
    if (impl_->node >= 0) fail(ErrorCode::InvalidArgument, "set_requires_grad on a non-leaf tensor");
    impl_->requires_grad = value;
    if (!value) impl_->grad = Buffer();
}

bool Tensor::has_grad() const {
    impl_->touch(false);
    return !impl_->grad.empty();
}

std::span<const float> Tensor::grad() const {
    impl_->touch(false);
    return {impl_->grad.data(), impl_->grad.size()};
}

std::span<float> Tensor::mutable_grad() {
    impl_->touch(true);
    if (impl_->grad.empty()) impl_->grad.assign(static_cast<size_t>(numel()), 0.0f);
    return {impl_->grad.data(), impl_->grad.size()};
}

void Tensor::clear_grad() {
    impl_->touch(true);
    impl_->grad = Buffer();
}

Tensor Tensor::detach() const {
    auto d = data();
    auto impl = make_impl(shape(), false);
    std::copy(d.begin(), d.end(), impl->data.begin());
    return Tensor(std::move(impl));
}

IdTensor::IdTensor(Shape s, std::vector<int32_t> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape)) {
        fail(ErrorCode::ShapeMismatch, "id count " + std::to_string(data.size()) +
                                           " does not match shape " + shape_str(shape));
    }
}

}  // namespace mft
