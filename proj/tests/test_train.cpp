#include <cmath>

#include "doctest.h"
#include "mcq_models.h"
#include "mft/tape.h"
#include "mft/train.h"
#include "util.h"

using namespace mft;
using namespace mft::testing;

namespace {

ModelConfig toy() {
    ModelConfig c;
    c.vocab_size = 256;
    c.d_model = 32;
    c.n_layers = 2;
    c.n_heads = 4;
    c.max_seq_len = 32;
    return c;
}

std::vector<int32_t> corpus_tokens() {
    const std::string text =
        "the cat sat on the mat. the dog sat on the log. a bird sang in the tree. "
        "the cat and the dog met the bird under the tree and all three sat down.";
    std::vector<int32_t> ids;
    for (int rep = 0; rep < 4; ++rep)
        for (unsigned char c : text) ids.push_back(c);
    return ids;
}

TrainConfig base_config() {
    TrainConfig c;
    c.batch_size = 8;
    c.micro_batch_size = 8;
    c.seq_len = 16;
    c.lr = 1e-3f;
    c.seed = 3;
    return c;
}

std::vector<std::vector<float>> grads_of(const Trainer& t) {
    std::vector<std::vector<float>> g;
    for (const auto& p : t.trainable().params) g.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
    return g;
}

}  // namespace

TEST_CASE("accumulated micro-batch gradients equal the full-batch gradient") {
    std::vector<std::vector<float>> ref;
    double ref_loss = 0;
    for (int64_t a : {1, 2, 4, 8}) {
        auto m = GPT2Model::build(toy(), 1);
        TokenDataset data(corpus_tokens(), 16, 5);
        TrainConfig c = base_config();
        c.micro_batch_size = 8 / a;
        c.optimizer = OptimizerKind::SGD;
        c.lr = 0.0f;
        Trainer t(*m, c, data);
        CHECK(t.config().accumulation_steps() == a);
        auto rec = t.step();
        auto g = grads_of(t);
        if (a == 1) {
            ref = g;
            ref_loss = rec.train_loss;
            continue;
        }
        CHECK(rec.train_loss == doctest::Approx(ref_loss).epsilon(1e-6));
        double num = 0, den = 0;
        for (size_t i = 0; i < g.size(); ++i)
            for (size_t j = 0; j < g[i].size(); ++j) {
                num += std::pow(g[i][j] - ref[i][j], 2);
                den += std::pow(ref[i][j], 2);
            }
        INFO("a = " << a);
        CHECK(std::sqrt(num / den) < 1e-5);
    }
}

TEST_CASE("macro-step loss is the model loss on the drawn batch") {
    auto m = GPT2Model::build(toy(), 2);
    TokenDataset data(corpus_tokens(), 16, 5);
    TokenDataset probe(corpus_tokens(), 16, 5);
    Batch b = probe.get_batch(8);
    double expect;
    {
        NoGradGuard g;
        expect = m->compute_loss(m->forward(b.inputs, ForwardCtx{}), b.targets).item();
    }
    TrainConfig c = base_config();
    c.micro_batch_size = 2;
    Trainer t(*m, c, data);
    CHECK(t.step().train_loss == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("trainer configuration is validated") {
    auto m = GPT2Model::build(toy(), 2);
    TokenDataset data(corpus_tokens(), 16, 5);
    TrainConfig c = base_config();
    c.micro_batch_size = 3;
    CHECK(code_of([&] { Trainer(*m, c, data); }) == ErrorCode::InvalidConfig);
    c = base_config();
    c.seq_len = 64;
    TokenDataset long_data(corpus_tokens(), 64, 5);
    CHECK(code_of([&] { Trainer(*m, c, long_data); }) == ErrorCode::InvalidConfig);
    c = base_config();
    c.throttle = ThrottlePolicy{};
    CHECK(code_of([&] { Trainer(*m, c, data); }) == ErrorCode::InvalidConfig);
    c = base_config();
    c.seq_len = 8;
    CHECK(code_of([&] { Trainer(*m, c, data); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("LoRA training moves only the adapters") {
    auto m = GPT2Model::build(toy(), 2);
    const auto before = m->parameter("h.0.attn.q_proj.weight").to_vector();
    TokenDataset data(corpus_tokens(), 16, 5);
    TrainConfig c = base_config();
    c.mode = FinetuneMode::LoRA;
    LoRAConfig lc;
    lc.rank = 4;
    c.lora = lc;
    Trainer t(*m, c, data);
    REQUIRE(m->lora_config().has_value());
    int64_t adapters = 0;
    for (const auto& p : t.trainable().params) {
        CHECK(p.name.find("lora_") != std::string::npos);
        adapters += p.tensor.numel();
    }
    CHECK(adapters == 2 * 2 * 4 * (32 + 32));
    for (int i = 0; i < 3; ++i) t.step();
    CHECK(m->parameter("h.0.attn.q_proj.weight").to_vector() == before);
    CHECK(m->blocks()[0].attn.q_proj.lora()->B.to_vector() != std::vector<float>(32 * 4, 0.0f));
}

TEST_CASE("run covers steps_per_epoch x epochs and evaluates on schedule") {
    auto m = GPT2Model::build(toy(), 2);
    auto [tr, te] = split_stream(corpus_tokens());
    TokenDataset train(tr, 16, 5), test(te, 16, 0, false);
    TrainConfig c = base_config();
    c.max_epochs = 2;
    c.eval_every = 2;
    Trainer t(*m, c, train, &test);
    CHECK(t.total_steps() == 2 * ((train.num_windows() + 7) / 8));
    ScratchDir dir("run");
    MetricsSink sink(dir / "m.jsonl");
    auto recs = t.run(&sink);
    CHECK(static_cast<int64_t>(recs.size()) == t.total_steps());
    for (const auto& r : recs) {
        CHECK(r.test_loss.has_value() == (r.step % 2 == 0));
        if (r.ppl) CHECK(*r.ppl == std::exp(*r.test_loss));
        CHECK_FALSE(r.wall_ms.has_value());
    }
    CHECK(t.timings().size() == recs.size());
}

TEST_CASE("non-deterministic mode reports wall-clock fields") {
    auto m = GPT2Model::build(toy(), 2);
    TokenDataset data(corpus_tokens(), 16, 5);
    TrainConfig c = base_config();
    c.deterministic = false;
    Trainer t(*m, c, data);
    auto r = t.step();
    REQUIRE(r.wall_ms.has_value());
    CHECK(*r.wall_ms > 0);
    CHECK(r.rss_bytes.value_or(0) > 0);
    CHECK(*r.power == doctest::Approx(t.timings()[0].compute_s * 5.0));
}

TEST_CASE("sharded and throttled training keep the loss sequence") {
    auto run = [](bool shard, bool throttle) {
        auto m = GPT2Model::build(toy(), 2);
        TokenDataset data(corpus_tokens(), 16, 5);
        TrainConfig c = base_config();
        if (shard) c.shard = SegmentCount{3};
        if (throttle) c.throttle = ThrottlePolicy{};
        FixedSource low(30.0f);
        Trainer t(*m, c, data, nullptr, throttle ? &low : nullptr);
        std::vector<double> losses;
        for (int i = 0; i < 4; ++i) losses.push_back(t.step().train_loss);
        if (throttle) {
            CHECK(t.throttle()->throttled());
            CHECK(t.timings().back().sleep_s > 0.0);
        }
        if (shard) CHECK(t.shard()->peak_resident_bytes() <= t.shard()->manifest().budget_bytes);
        return losses;
    };
    const auto plain = run(false, false);
    CHECK(run(true, false) == plain);
    CHECK(run(false, true) == plain);
}

TEST_CASE("perplexity is the exponential of the mean token NLL") {
    auto m = GPT2Model::build(toy(), 4);
    TokenDataset test(corpus_tokens(), 16, 0, false);
    auto ev = evaluate_ppl(*m, test, 3);
    CHECK(ev.ppl == std::exp(ev.test_loss));
    CHECK(ev.tokens == test.num_windows() * 16);
    double total = 0;
    for (int64_t i = 0; i < test.num_windows(); ++i) {
        Batch b = test.batch_at(i, 1);
        NoGradGuard g;
        total += m->compute_loss(m->forward(b.inputs, ForwardCtx{}), b.targets).item();
    }
    CHECK(ev.test_loss == doctest::Approx(total / static_cast<double>(test.num_windows())).epsilon(1e-6));
    UniformLM u(256);
    CHECK(evaluate_ppl(u, test).ppl == doctest::Approx(256.0));
    TokenDataset empty(std::vector<int32_t>{1, 2}, 16);
    CHECK(code_of([&] { evaluate_ppl(*m, empty); }) == ErrorCode::EmptyDataset);
}

TEST_CASE("MCQ scores are mean option log-probabilities given the question") {
    Tokenizer tok = Tokenizer::byte_level();
    auto m = GPT2Model::build(toy(), 4);
    MCQItem item{"q?", {{"A", "ab"}, {"B", "xyz"}}, "B"};
    auto scores = score_mcq_item(*m, tok, item);
    REQUIRE(scores.size() == 2);
    // Option B by hand: context "q?\n", continuation "xyz".
    std::vector<int32_t> seq{'q', '?', '\n', 'x', 'y'};
    Tensor logits = m->forward(IdTensor({1, 5}, seq), ForwardCtx{});
    std::vector<float> lp(5 * 256);
    log_softmax_rows(logits.data(), 5, 256, lp);
    const double manual = (lp[2 * 256 + 'x'] + lp[3 * 256 + 'y'] + lp[4 * 256 + 'z']) / 3.0;
    CHECK(scores[1] == doctest::Approx(manual).epsilon(1e-6));

    UniformLM u(256);
    auto tie = score_mcq_item(u, tok, item);
    CHECK(tie[0] == tie[1]);
    CHECK(evaluate_mcq(u, tok, {item}) == 0.0);
    item.answer = "A";
    CHECK(evaluate_mcq(u, tok, {item}) == 1.0);
    CHECK(code_of([&] { evaluate_mcq(u, tok, {}); }) == ErrorCode::EmptyDataset);
}

TEST_CASE("the rigged model answers every item") {
    Tokenizer tok = Tokenizer::byte_level();
    auto items = random_mcq_items(50, 3);
    RiggedLM rigged(tok, items, 256);
    CHECK(evaluate_mcq(rigged, tok, items) == 1.0);
}
