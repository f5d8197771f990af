#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mop/surgery.hpp"
#include "mop/transformer.hpp"
#include "oracles.hpp"

using namespace mop;

namespace {

ModelConfig micro_config(std::size_t n_layers = 2) {
    return ModelConfig{.n_layers = n_layers,
                       .d_model = 8,
                       .n_heads = 2,
                       .d_head = 4,
                       .d_ff = 16,
                       .vocab_size = 11,
                       .max_seq_len = 32};
}

template <typename Real>
double max_logit_diff(const TransformerModel<Real>& a, const TransformerModel<Real>& b,
                      const std::vector<TokenId>& tokens) {
    auto la = forward(a, tokens), lb = forward(b, tokens);
    double mx = 0.0;
    for (std::size_t i = 0; i < la->size(); ++i)
        mx = std::max(mx, std::abs(static_cast<double>(la->data[i]) -
                                   static_cast<double>(lb->data[i])));
    return mx;
}

// Uniform synthetic scores: every unit equally important.
WidthScores flat_scores(const TransformerModel<float>& m) {
    WidthScores s;
    for (const auto& l : m.layers) {
        s.head_scores.emplace_back(l.n_heads, 1.0);
        s.neuron_scores.emplace_back(l.d_ff, 1.0);
    }
    return s;
}

const std::vector<TokenId> kTokens{1, 5, 2, 9, 0, 3};

}  // namespace

TEST_CASE("total_params from tensor enumeration") {
    auto m = init_model<float>(micro_config(), 1);
    REQUIRE(total_params(m) == 1496);

    auto fewer = remove_layer(m, 0);
    REQUIRE(total_params(fewer) == 1496 - 656);
    REQUIRE(total_params(fewer) == 840);

    auto empty_cfg = micro_config(0);
    auto empty = init_model<float>(empty_cfg, 1);
    REQUIRE(total_params(empty) == 88 + 8 + 88);  // embedding + final norm + lm_head
}

TEST_CASE("layer_params") {
    auto m = init_model<float>(micro_config(), 2);
    REQUIRE(layer_params(m, 0) == 656);
    REQUIRE(layer_params(m, 0) == 4 * 64 + 3 * 8 * 16 + 2 * 8);
    REQUIRE_THROWS_MATCHES(layer_params(m, 2), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::index;
                           }));

    // Recount reflects shrunken shapes after width surgery.
    auto pruned = remove_heads(m, 0, {0});
    pruned = remove_neurons(pruned, 0, {0, 1, 2, 3, 4, 5, 6, 7});
    REQUIRE(layer_params(pruned, 0) == 4 * 8 * 4 + 3 * 8 * 8 + 2 * 8);
}

TEST_CASE("compute_ct") {
    auto m = init_model<float>(micro_config(), 3);
    REQUIRE_THAT(compute_ct(m, 0), Catch::Matchers::WithinAbs(656.0 / 1496.0, 1e-12));
    REQUIRE_THAT(compute_ct(m, 0), Catch::Matchers::WithinAbs(0.43850, 1e-5));
    REQUIRE(compute_ct(m, 0) == compute_ct(m, 1));  // identical layers

    // c_t strictly decreases after a width-prune iteration on a model whose
    // extras (embedding, lm_head) outweigh one layer's share.
    ModelConfig cfg{.n_layers = 4,
                    .d_model = 16,
                    .n_heads = 4,
                    .d_head = 4,
                    .d_ff = 24,
                    .vocab_size = 64,
                    .max_seq_len = 32};
    auto big = init_model<float>(cfg, 5);
    const double before = compute_ct(big, 0);
    auto pruned = width_prune(big, [&] {
        WidthScores s;
        for (const auto& l : big.layers) {
            s.head_scores.emplace_back(l.n_heads, 1.0);
            s.neuron_scores.emplace_back(l.d_ff, 1.0);
        }
        return s;
    }(), before);
    const double after = compute_ct(pruned, 0);
    REQUIRE(after < before);
}

TEST_CASE("remove_layer") {
    auto m = init_model<float>(micro_config(3), 7);
    // An identity layer (zeroed output projections) is logit-preserving.
    std::fill(m.layers[1].wo->data.begin(), m.layers[1].wo->data.end(), 0.0f);
    std::fill(m.layers[1].w_down->data.begin(), m.layers[1].w_down->data.end(), 0.0f);
    auto fewer = remove_layer(m, 1);
    REQUIRE(max_logit_diff(m, fewer, kTokens) <= 1e-6);
    REQUIRE(total_params(fewer) == total_params(m) - layer_params(m, 1));
    REQUIRE(fewer.config.n_layers == 2);

    REQUIRE_THROWS_MATCHES(remove_layer(m, 3), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::index;
                           }));

    // Removing the third-to-last of a 32-layer stack preserves the last two.
    ModelConfig deep = micro_config(32);
    auto big = init_model<float>(deep, 9);
    auto cut = remove_layer(big, 32 - 3);
    REQUIRE(cut.n_layers() == 31);
    REQUIRE(cut.layers[30].wq->data == big.layers[31].wq->data);
    REQUIRE(cut.layers[29].wq->data == big.layers[30].wq->data);
    REQUIRE(cut.layers[28].wq->data == big.layers[28].wq->data);
}

TEST_CASE("remove_heads") {
    auto m = init_model<float>(micro_config(2), 11);
    const std::size_t d = 8, dh = 4;

    // Zero head 1's wo row block in layer 0: removing it preserves logits.
    auto zeroed = clone_model(m);
    for (std::size_t r = dh; r < 2 * dh; ++r)
        for (std::size_t c = 0; c < d; ++c) zeroed.layers[0].wo->data[r * d + c] = 0.0f;
    auto cut = remove_heads(zeroed, 0, {1});
    REQUIRE(max_logit_diff(zeroed, cut, kTokens) <= 1e-6);
    REQUIRE(cut.layers[0].n_heads == 1);

    // Parameter drop per head is exactly 4 * d_model * d_head.
    REQUIRE(total_params(m) - total_params(remove_heads(m, 0, {0})) == 4 * d * dh);

    // Removing {0, 1} equals removing {1} then {0} on a 4-head layer.
    ModelConfig cfg4 = micro_config(1);
    cfg4.n_heads = 4;
    cfg4.d_head = 2;
    auto m4 = init_model<float>(cfg4, 3);
    auto at_once = remove_heads(m4, 0, {0, 1});
    auto stepwise = remove_heads(remove_heads(m4, 0, {1}), 0, {0});
    REQUIRE(at_once.layers[0].wq->data == stepwise.layers[0].wq->data);
    REQUIRE(at_once.layers[0].wo->data == stepwise.layers[0].wo->data);

    REQUIRE_THROWS_MATCHES(remove_heads(m, 0, {0, 1}), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::contract;
                           }));
    REQUIRE_THROWS_MATCHES(remove_heads(m, 0, {0, 0}), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::index;
                           }));
    REQUIRE_THROWS_AS(remove_heads(m, 0, {2}), Error);
}

TEST_CASE("remove_neurons") {
    auto m = init_model<float>(micro_config(2), 13);
    const std::size_t d = 8;

    auto zeroed = clone_model(m);
    for (std::size_t c = 0; c < d; ++c) zeroed.layers[1].w_down->data[5 * d + c] = 0.0f;
    auto cut = remove_neurons(zeroed, 1, {5});
    REQUIRE(max_logit_diff(zeroed, cut, kTokens) <= 1e-6);
    REQUIRE(cut.layers[1].d_ff == 15);

    REQUIRE(total_params(m) - total_params(remove_neurons(m, 0, {3})) == 3 * d);

    // Empty index list is the identity.
    auto same = remove_neurons(m, 0, {});
    REQUIRE(same.layers[0].w_gate->data == m.layers[0].w_gate->data);
    REQUIRE(total_params(same) == total_params(m));

    std::vector<std::size_t> all(16);
    for (std::size_t i = 0; i < 16; ++i) all[i] = i;
    REQUIRE_THROWS_MATCHES(remove_neurons(m, 0, all), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::contract;
                           }));
}

TEST_CASE("width_prune: one-head-per-layer budget") {
    // Attention-heavy layers: one head per layer is the proportional pick.
    ModelConfig cfg{.n_layers = 3,
                    .d_model = 8,
                    .n_heads = 4,
                    .d_head = 2,
                    .d_ff = 4,
                    .vocab_size = 11,
                    .max_seq_len = 16};
    auto m = init_model<float>(cfg, 17);
    const std::size_t head_unit = 4 * 8 * 2;
    const double c_t = static_cast<double>(3 * head_unit) / static_cast<double>(total_params(m));
    PrunePlan plan;
    auto pruned = width_prune(m, flat_scores(m), c_t, &plan);
    for (std::size_t l = 0; l < 3; ++l) {
        REQUIRE(plan.heads[l].size() == 1);
        REQUIRE(plan.heads[l][0] == 0);  // flat scores: tie toward lowest index
        REQUIRE(plan.neurons[l].empty());
    }
    REQUIRE(total_params(m) - total_params(pruned) == 3 * head_unit);
}

TEST_CASE("width_prune: ties break toward lower index") {
    auto m = init_model<float>(micro_config(2), 19);
    WidthScores s = flat_scores(m);
    const double c_t = 0.10;
    PrunePlan plan = plan_width_prune(m, s, c_t);
    for (const auto& layer_neurons : plan.neurons)
        for (std::size_t i = 0; i < layer_neurons.size(); ++i) REQUIRE(layer_neurons[i] == i);
}

TEST_CASE("width_prune: removed mass within 2% of the depth quantum") {
    // Desk-scale shape.
    ModelConfig cfg{.n_layers = 12,
                    .d_model = 128,
                    .n_heads = 8,
                    .d_head = 16,
                    .d_ff = 344,
                    .vocab_size = 256,
                    .max_seq_len = 512};
    auto m = init_model<float>(cfg, 23);
    const std::size_t l_star = m.n_layers() - 3;
    const double c_t = compute_ct(m, l_star);
    const std::size_t p_layer = layer_params(m, l_star);

    Rng rng(29);
    WidthScores s;
    for (const auto& l : m.layers) {
        s.head_scores.emplace_back();
        s.neuron_scores.emplace_back();
        for (std::size_t h = 0; h < l.n_heads; ++h) s.head_scores.back().push_back(rng.unit());
        for (std::size_t j = 0; j < l.d_ff; ++j) s.neuron_scores.back().push_back(rng.unit());
    }
    PrunePlan plan;
    auto pruned = width_prune(m, s, c_t, &plan);
    const std::size_t removed = total_params(m) - total_params(pruned);
    REQUIRE(removed == plan.planned_removal);
    const double mismatch = std::abs(static_cast<double>(removed) - static_cast<double>(p_layer)) /
                            static_cast<double>(p_layer);
    CAPTURE(removed, p_layer);
    REQUIRE(mismatch <= 0.02);
    // Same removal counts in every layer (up to the last-layer residual).
    for (std::size_t l = 1; l + 1 < 12; ++l) {
        REQUIRE(plan.heads[l].size() == plan.heads[0].size());
        REQUIRE(plan.neurons[l].size() == plan.neurons[0].size());
    }
}

TEST_CASE("width_prune: conservation and validation") {
    auto m = init_model<float>(micro_config(4), 31);
    auto s = flat_scores(m);
    PrunePlan plan;
    auto pruned = width_prune(m, s, 0.2, &plan);
    std::size_t deleted = 0;
    for (std::size_t l = 0; l < 4; ++l)
        deleted += plan.heads[l].size() * 4 * 8 * 4 + plan.neurons[l].size() * 3 * 8;
    REQUIRE(total_params(m) == total_params(pruned) + deleted);

    REQUIRE_THROWS_MATCHES(plan_width_prune(m, s, 1.5), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::contract;
                           }));
    WidthScores wrong = s;
    wrong.head_scores[0].pop_back();
    REQUIRE_THROWS_MATCHES(plan_width_prune(m, wrong, 0.2), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::dimension;
                           }));
    // A target near the whole prunable mass would empty layers.
    REQUIRE_THROWS_MATCHES(plan_width_prune(m, s, 0.99), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::contract;
                           }));
}

TEST_CASE("zero-contribution width units are logit-preserving when pruned") {
    auto m = init_model<float>(micro_config(2), 37);
    // Zero the output-side blocks of head 0 (layer 0) and neuron 7 (layer 1).
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 8; ++c) m.layers[0].wo->data[r * 8 + c] = 0.0f;
    for (std::size_t c = 0; c < 8; ++c) m.layers[1].w_down->data[7 * 8 + c] = 0.0f;

    auto cut = remove_neurons(remove_heads(m, 0, {0}), 1, {7});
    REQUIRE(max_logit_diff(m, cut, kTokens) <= 1e-6);
}
