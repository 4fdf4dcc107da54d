#include <cmath>
#include <limits>

#include "doctest.h"
#include "mft/ops.h"
#include "mft/tape.h"
#include "mft/tensor.h"
#include "util.h"

using namespace mft;
using mft::testing::code_of;

TEST_CASE("tensor handles alias storage") {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor b = a;
    b.mutable_data()[0] = 9;
    CHECK(a.data()[0] == 9);
    Tensor c = a.detach();
    c.mutable_data()[1] = -1;
    CHECK(a.data()[1] == 2);
    CHECK(a.size(-1) == 2);
    CHECK(a.bytes() == 16);
    CHECK(code_of([&] { a.size(2); }) == ErrorCode::IndexOutOfRange);
    CHECK(code_of([&] { a.item(); }) == ErrorCode::NotScalar);
    CHECK(code_of([] { Tensor::from({3}, {1, 2}); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("live byte counter follows allocations") {
    const int64_t before = live_tensor_bytes();
    {
        Tensor t = Tensor::zeros({256});
        CHECK(live_tensor_bytes() - before == 1024);
        t.mutable_grad();
        CHECK(live_tensor_bytes() - before == 2048);
    }
    CHECK(live_tensor_bytes() == before);
}

TEST_CASE("backward accumulates and zero_grad clears") {
    Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    for (int i = 0; i < 2; ++i) backward(sum(mul(x, x)));
    auto g = x.grad();
    CHECK(g[0] == doctest::Approx(4.0));
    CHECK(g[2] == doctest::Approx(12.0));
    CHECK(current_tape().size() == 0);
    std::vector<Tensor> ps{x};
    zero_grad(ps);
    for (float v : x.grad()) CHECK(v == 0.0f);
}

TEST_CASE("a tensor used twice receives both contributions") {
    Tensor x = Tensor::from({2}, {3, -1}, true);
    Tensor y = add(scale(x, 2.0f), mul(x, x));
    backward(sum(y));
    CHECK(x.grad()[0] == doctest::Approx(8.0));
    CHECK(x.grad()[1] == doctest::Approx(0.0));
}

TEST_CASE("backward preconditions") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    CHECK(code_of([&] { backward(mul(x, x)); }) == ErrorCode::NotScalar);
    current_tape().clear();
    Tensor leaf = Tensor::scalar(1.0f, true);
    CHECK(code_of([&] { backward(leaf); }) == ErrorCode::NoTape);
    Tensor l;
    {
        NoGradGuard guard;
        l = sum(mul(x, x));
        CHECK(current_tape().size() == 0);
    }
    CHECK(code_of([&] { backward(l); }) == ErrorCode::NoTape);
}

TEST_CASE("ops reject bad shapes and ids") {
    Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({4, 2});
    CHECK(code_of([&] { matmul(a, b); }) == ErrorCode::ShapeMismatch);
    CHECK(code_of([&] { add(a, Tensor::zeros({2})); }) == ErrorCode::ShapeMismatch);
    CHECK(code_of([&] { reshape(a, {4}); }) == ErrorCode::ShapeMismatch);
    CHECK(code_of([&] { embedding(Tensor::zeros({4, 2}), IdTensor({1}, {4})); }) == ErrorCode::IndexOutOfRange);
    CHECK(code_of([&] { cross_entropy(a, IdTensor({2}, {-100, -100})); }) == ErrorCode::AllTargetsIgnored);
    CHECK(code_of([&] { cross_entropy(a, IdTensor({2}, {0, 3})); }) == ErrorCode::IndexOutOfRange);
    Tensor q = Tensor::zeros({1, 2, 6});
    CHECK(code_of([&] { causal_attention(q, q, q, 4); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("validation mode screens outputs for non-finite values") {
    Tensor x = Tensor::from({2}, {std::numeric_limits<float>::max(), 1.0f});
    set_validation_mode(true);
    CHECK(code_of([&] { scale(x, 10.0f); }) == ErrorCode::InvalidArgument);
    set_validation_mode(false);
    CHECK(std::isinf(scale(x, 10.0f).data()[0]));
}

TEST_CASE("softmax rows sum to one and cross entropy matches log-softmax") {
    Tensor x = Tensor::from({2, 3}, {1, 2, 3, -5, 0, 5});
    Tensor s = softmax(x);
    CHECK(s.data()[0] + s.data()[1] + s.data()[2] == doctest::Approx(1.0));
    std::vector<float> lp(6);
    log_softmax_rows(x.data(), 2, 3, lp);
    Tensor ce = cross_entropy(x, IdTensor({2}, {2, 0}));
    CHECK(ce.item() == doctest::Approx(-(lp[2] + lp[3]) / 2.0));
    Tensor ce_ignored = cross_entropy(x, IdTensor({2}, {2, -100}));
    CHECK(ce_ignored.item() == doctest::Approx(-lp[2]));
}

TEST_CASE("attention with more keys than queries sees the cached prefix") {
    Rng rng(3);
    Tensor q = Tensor::randn({1, 4, 4}, 1.0f, rng), k = Tensor::randn({1, 4, 4}, 1.0f, rng), v = Tensor::randn({1, 4, 4}, 1.0f, rng);
    Tensor full = causal_attention(q, k, v, 2);
    Tensor last_q = Tensor::from({1, 1, 4}, std::vector<float>(q.data().begin() + 12, q.data().end()));
    Tensor last = causal_attention(last_q, k, v, 2);
    for (int i = 0; i < 4; ++i) CHECK(last.data()[i] == doctest::Approx(full.data()[12 + i]).epsilon(1e-6));
    // The first query sees only the first key, so it returns the first value row.
    for (int i = 0; i < 4; ++i) CHECK(full.data()[i] == doctest::Approx(v.data()[i]));
}

TEST_CASE("dropout is identity at p = 0 and keeps expectation otherwise") {
    Rng rng(1);
    Tensor x = Tensor::full({20000}, 1.0f);
    CHECK(dropout(x, 0.0f, rng).same(x));
    Tensor y = dropout(x, 0.25f, rng);
    double s = 0;
    for (float v : y.data()) s += v;
    CHECK(s / 20000.0 == doctest::Approx(1.0).epsilon(0.03));
    CHECK(code_of([&] { dropout(x, 1.0f, rng); }) == ErrorCode::InvalidArgument);
}
