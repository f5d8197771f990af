#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <thread>

#include "mop/data.hpp"
#include "mop/training.hpp"
#include "oracles.hpp"

using namespace mop;

namespace {

ModelConfig micro_config(std::size_t n_layers = 2) {
    return ModelConfig{.n_layers = n_layers,
                       .d_model = 16,
                       .n_heads = 2,
                       .d_head = 8,
                       .d_ff = 32,
                       .vocab_size = 16,
                       .max_seq_len = 64};
}

template <typename Real>
bool models_bit_equal(const TransformerModel<Real>& a, const TransformerModel<Real>& b) {
    auto pa = parameters(a), pb = parameters(b);
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (pa[i]->shape != pb[i]->shape || pa[i]->data != pb[i]->data) return false;
    return true;
}

std::vector<std::vector<TokenId>> micro_docs(std::uint64_t seed = 2) {
    return gen_corpus(seed, 120, 24, 16, 1).docs;
}

}  // namespace

TEST_CASE("tune_schedule is 10*i, 1-based") {
    REQUIRE(tune_schedule(1) == 10);
    REQUIRE(tune_schedule(7) == 70);
    REQUIRE_THROWS_MATCHES(tune_schedule(0), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::contract;
                           }));
}

TEST_CASE("AdamW with zero gradients and zero weight decay is a no-op") {
    auto p = tensor<double>({4}, {1.0, -2.0, 3.0, 0.5}, true);
    p->ensure_grad();
    AdamW<double> opt({p}, AdamWConfig{});
    opt.step();
    opt.step();
    REQUIRE(p->data == std::vector<double>{1.0, -2.0, 3.0, 0.5});
    REQUIRE(opt.step_count() == 2);
}

TEST_CASE("fine_tune: steps=0 identity, determinism, pure function") {
    auto m = init_model<float>(micro_config(), 5);
    auto docs = micro_docs();

    auto same = fine_tune(clone_model(m), docs, 0, 3e-4, 4, 9);
    REQUIRE(models_bit_equal(m, same));

    auto a = fine_tune(clone_model(m), docs, 8, 1e-3, 4, 9);
    auto b = fine_tune(clone_model(m), docs, 8, 1e-3, 4, 9);
    REQUIRE(models_bit_equal(a, b));
    REQUIRE_FALSE(models_bit_equal(a, m));
    auto c = fine_tune(clone_model(m), docs, 8, 1e-3, 4, 10);
    REQUIRE_FALSE(models_bit_equal(a, c));
}

TEST_CASE("fine_tune: 50 steps lower the training loss") {
    auto m = init_model<float>(micro_config(), 5);
    FineTuneStats stats;
    fine_tune(clone_model(m), micro_docs(), 50, 1e-3, 4, 9, &stats);
    CAPTURE(stats.first_loss, stats.last_loss);
    REQUIRE(stats.last_loss < stats.first_loss);
}

TEST_CASE("fine_tune rejects an empty dataset when steps > 0") {
    auto m = init_model<float>(micro_config(), 5);
    REQUIRE_THROWS_MATCHES(fine_tune(clone_model(m), {}, 1, 3e-4, 4, 9), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::data;
                           }));
}

TEST_CASE("concurrent fine-tunes of independent copies match sequential runs") {
    auto m = init_model<float>(micro_config(), 5);
    auto docs = micro_docs();
    auto serial1 = fine_tune(clone_model(m), docs, 6, 1e-3, 2, 100);
    auto serial2 = fine_tune(clone_model(m), docs, 6, 1e-3, 2, 200);

    TransformerModel<float> par1, par2;
    std::thread t1([&] { par1 = fine_tune(clone_model(m), docs, 6, 1e-3, 2, 100); });
    std::thread t2([&] { par2 = fine_tune(clone_model(m), docs, 6, 1e-3, 2, 200); });
    t1.join();
    t2.join();
    REQUIRE(models_bit_equal(serial1, par1));
    REQUIRE(models_bit_equal(serial2, par2));
}

TEST_CASE("lora_attach: behavior-preserving at attach, base frozen") {
    auto m = init_model<float>(micro_config(), 7);
    std::vector<TokenId> tokens{1, 5, 2, 9, 0};
    auto before = forward(m, tokens);

    auto lm = lora_attach(clone_model(m), 4, 16.0f, 33);
    auto after = forward(lm.model, tokens, static_cast<Tape<float>*>(nullptr), &lm.adapters);
    REQUIRE(before->data == after->data);  // b = 0: exact

    for (const auto& p : parameters(lm.model)) REQUIRE_FALSE(p->requires_grad);
    for (const auto& p : lora_parameters(lm)) REQUIRE(p->requires_grad);

    // Rank above the smallest target dimension is rejected.
    REQUIRE_THROWS_MATCHES(lora_attach(clone_model(m), 17, 16.0f, 33), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::config;
                           }));
}

TEST_CASE("lora_merge: zero-delta merge, adapted equivalence, double-merge error") {
    auto m = init_model<float>(micro_config(), 11);
    {
        auto lm = lora_attach(clone_model(m), 4, 10.0f, 1);
        auto merged = lora_merge(lm);
        REQUIRE(models_bit_equal(m, merged));
        REQUIRE_THROWS_MATCHES(lora_merge(lm), Error,
                               Catch::Matchers::Predicate<Error>([](const Error& e) {
                                   return e.kind() == ErrorKind::contract;
                               }));
    }

    auto docs = micro_docs(4);
    auto lm = lora_attach(clone_model(m), 4, 10.0f, 1);
    auto base_snapshot = clone_model(lm.model);
    fine_tune_lora(lm, docs, 12, 1e-3, 2, 3);
    // Base weights untouched by adapter training.
    REQUIRE(models_bit_equal(base_snapshot, lm.model));

    std::vector<TokenId> tokens{3, 1, 4, 1, 5};
    auto adapted = forward(lm.model, tokens, static_cast<Tape<float>*>(nullptr), &lm.adapters);
    auto merged = lora_merge(lm);
    auto plain = forward(merged, tokens);
    double mx = 0.0;
    for (std::size_t i = 0; i < plain->size(); ++i)
        mx = std::max(mx, std::abs(static_cast<double>(plain->data[i]) -
                                   static_cast<double>(adapted->data[i])));
    REQUIRE(mx <= 1e-5);
    // Training moved the adapters, so the merged model differs from the base.
    REQUIRE_FALSE(models_bit_equal(merged, m));
    for (const auto& p : parameters(merged)) REQUIRE(p->requires_grad);
}

TEST_CASE("fine_tune_lora reduces loss through frozen weights") {
    auto m = init_model<float>(micro_config(), 13);
    auto lm = lora_attach(clone_model(m), 8, 16.0f, 2);
    FineTuneStats stats;
    fine_tune_lora(lm, micro_docs(6), 40, 3e-3, 4, 5, &stats);
    CAPTURE(stats.first_loss, stats.last_loss);
    REQUIRE(stats.last_loss < stats.first_loss);
}
