#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mop/errors.hpp"
#include "mop/rng.hpp"
#include "mop/tensor.hpp"

namespace mop {

inline constexpr double kRmsNormEps = 1e-5;
inline constexpr double kInitStd = 0.02;

struct ModelConfig {
    std::size_t n_layers{0};
    std::size_t d_model{0};
    std::size_t n_heads{0};
    std::size_t d_head{0};  // d_model / n_heads at initialization
    std::size_t d_ff{0};
    std::size_t vocab_size{0};
    std::size_t max_seq_len{0};
    double rope_theta{10000.0};

    void validate() const {
        require(d_model >= 1 && n_heads >= 1 && d_ff >= 1 && vocab_size >= 1 && max_seq_len >= 1,
                ErrorKind::config, "ModelConfig: all dimension counts must be >= 1");
        require(d_head >= 2 && d_head % 2 == 0, ErrorKind::config,
                "ModelConfig: d_head must be even and >= 2 (rotary pairs)");
        require(d_model == n_heads * d_head, ErrorKind::config,
                "ModelConfig: d_model must equal n_heads * d_head at initialization");
        require(rope_theta > 0.0, ErrorKind::config, "ModelConfig: rope_theta must be positive");
    }
};

// One pre-norm decoder layer. n_heads/d_ff are the currently active widths;
// projection shapes shrink in lockstep with them under surgery. The residual
// stream stays d_model wide no matter what was removed.
template <typename Real>
struct TransformerLayer {
    TensorPtr<Real> wq, wk, wv;  // d_model x (n_heads * d_head)
    TensorPtr<Real> wo;          // (n_heads * d_head) x d_model
    TensorPtr<Real> w_gate, w_up;  // d_model x d_ff
    TensorPtr<Real> w_down;        // d_ff x d_model
    TensorPtr<Real> norm_attn, norm_mlp;  // gain vectors, length d_model
    std::size_t n_heads{0};
    std::size_t d_head{0};
    std::size_t d_ff{0};
};

template <typename Real>
struct TransformerModel {
    ModelConfig config;
    TensorPtr<Real> embedding;  // vocab_size x d_model
    std::vector<TransformerLayer<Real>> layers;
    TensorPtr<Real> final_norm;  // length d_model
    TensorPtr<Real> lm_head;     // d_model x vocab_size (untied)

    std::size_t n_layers() const { return layers.size(); }
};

// Low-rank adapters for the seven projection matrices of each layer.
// a: d_in x r (normal init), b: r x d_out (zero init), effective delta is
// (alpha / r) * a * b, so a freshly attached adapter is a no-op.
enum class ProjSlot : int { wq = 0, wk, wv, wo, w_gate, w_up, w_down };
inline constexpr std::size_t kNumProjSlots = 7;

template <typename Real>
struct LoraPair {
    TensorPtr<Real> a, b;
};

template <typename Real>
struct LoraSet {
    std::size_t rank{0};
    Real alpha{0};
    bool merged{false};
    std::vector<std::array<LoraPair<Real>, kNumProjSlots>> layers;

    Real scaling() const { return alpha / static_cast<Real>(rank); }
};

// Instrumentation hook used by activation-magnitude scoring: sees each
// layer's head outputs before wo and the gated MLP activations.
template <typename Real>
struct ForwardProbe {
    std::function<void(std::size_t layer, const Tensor<Real>& attn_ctx,
                       const Tensor<Real>& mlp_gated)>
        on_layer;
};

template <typename Real>
TransformerModel<Real> init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(mix64(seed, 0x6d6f64656cULL));
    auto normal_tensor = [&](std::vector<std::size_t> shape) {
        auto t = tensor<Real>(std::move(shape), true);
        for (auto& v : t->data) v = static_cast<Real>(rng.normal(0.0, kInitStd));
        return t;
    };
    auto ones_tensor = [&](std::size_t d) {
        auto t = tensor<Real>({d}, true);
        std::fill(t->data.begin(), t->data.end(), Real(1));
        return t;
    };

    TransformerModel<Real> m;
    m.config = config;
    m.embedding = normal_tensor({config.vocab_size, config.d_model});
    m.layers.reserve(config.n_layers);
    const std::size_t attn_w = config.n_heads * config.d_head;
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        TransformerLayer<Real> layer;
        layer.wq = normal_tensor({config.d_model, attn_w});
        layer.wk = normal_tensor({config.d_model, attn_w});
        layer.wv = normal_tensor({config.d_model, attn_w});
        layer.wo = normal_tensor({attn_w, config.d_model});
        layer.w_gate = normal_tensor({config.d_model, config.d_ff});
        layer.w_up = normal_tensor({config.d_model, config.d_ff});
        layer.w_down = normal_tensor({config.d_ff, config.d_model});
        layer.norm_attn = ones_tensor(config.d_model);
        layer.norm_mlp = ones_tensor(config.d_model);
        layer.n_heads = config.n_heads;
        layer.d_head = config.d_head;
        layer.d_ff = config.d_ff;
        m.layers.push_back(std::move(layer));
    }
    m.final_norm = ones_tensor(config.d_model);
    m.lm_head = normal_tensor({config.d_model, config.vocab_size});
    return m;
}

template <typename Real>
TransformerModel<Real> clone_model(const TransformerModel<Real>& m) {
    TransformerModel<Real> c;
    c.config = m.config;
    c.embedding = clone_tensor(m.embedding);
    c.layers.reserve(m.layers.size());
    for (const auto& l : m.layers) {
        TransformerLayer<Real> cl;
        cl.wq = clone_tensor(l.wq);
        cl.wk = clone_tensor(l.wk);
        cl.wv = clone_tensor(l.wv);
        cl.wo = clone_tensor(l.wo);
        cl.w_gate = clone_tensor(l.w_gate);
        cl.w_up = clone_tensor(l.w_up);
        cl.w_down = clone_tensor(l.w_down);
        cl.norm_attn = clone_tensor(l.norm_attn);
        cl.norm_mlp = clone_tensor(l.norm_mlp);
        cl.n_heads = l.n_heads;
        cl.d_head = l.d_head;
        cl.d_ff = l.d_ff;
        c.layers.push_back(std::move(cl));
    }
    c.final_norm = clone_tensor(m.final_norm);
    c.lm_head = clone_tensor(m.lm_head);
    return c;
}

// All trainable tensors in a fixed traversal order. This order is also the
// checkpoint tensor order and the optimizer state order.
template <typename Real>
std::vector<TensorPtr<Real>> parameters(const TransformerModel<Real>& m) {
    std::vector<TensorPtr<Real>> out;
    out.reserve(2 + m.layers.size() * 9 + 1);
    out.push_back(m.embedding);
    for (const auto& l : m.layers) {
        out.push_back(l.wq);
        out.push_back(l.wk);
        out.push_back(l.wv);
        out.push_back(l.wo);
        out.push_back(l.w_gate);
        out.push_back(l.w_up);
        out.push_back(l.w_down);
        out.push_back(l.norm_attn);
        out.push_back(l.norm_mlp);
    }
    out.push_back(m.final_norm);
    out.push_back(m.lm_head);
    return out;
}

template <typename Real>
std::vector<std::string> parameter_names(const TransformerModel<Real>& m) {
    std::vector<std::string> out;
    out.push_back("embedding");
    static const char* slots[] = {"wq", "wk", "wv", "wo", "w_gate", "w_up", "w_down",
                                  "norm_attn", "norm_mlp"};
    for (std::size_t l = 0; l < m.layers.size(); ++l)
        for (const char* s : slots) out.push_back("layers." + std::to_string(l) + "." + s);
    out.push_back("final_norm");
    out.push_back("lm_head");
    return out;
}

// Causal forward pass: pre-norm residual blocks with rotary q/k and a
// SwiGLU MLP, final RMSNorm, untied lm_head. Returns T x vocab logits.
template <typename Real>
TensorPtr<Real> forward(const TransformerModel<Real>& m, const std::vector<TokenId>& tokens,
                        Tape<Real>* tape = nullptr, const LoraSet<Real>* lora = nullptr,
                        const ForwardProbe<Real>* probe = nullptr) {
    require(!tokens.empty(), ErrorKind::input, "forward: empty token sequence");
    require(tokens.size() <= m.config.max_seq_len, ErrorKind::input,
            "forward: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                std::to_string(m.config.max_seq_len));
    if (lora)
        require(lora->layers.size() == m.layers.size() && !lora->merged, ErrorKind::contract,
                "forward: adapter set does not match model");
    const Real eps = static_cast<Real>(kRmsNormEps);

    auto project = [&](const TensorPtr<Real>& x, const TensorPtr<Real>& w, std::size_t layer,
                       ProjSlot slot) {
        auto y = matmul(tape, x, w);
        if (lora) {
            const auto& p = lora->layers[layer][static_cast<int>(slot)];
            auto delta = matmul(tape, matmul(tape, x, p.a), p.b);
            y = add_scaled(tape, y, delta, lora->scaling());
        }
        return y;
    };

    auto x = embedding_rows(tape, m.embedding, tokens);
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        const auto& l = m.layers[li];
        auto h = rmsnorm(tape, x, l.norm_attn, eps);
        auto q = rope_rows(tape, project(h, l.wq, li, ProjSlot::wq), l.d_head,
                           m.config.rope_theta);
        auto k = rope_rows(tape, project(h, l.wk, li, ProjSlot::wk), l.d_head,
                           m.config.rope_theta);
        auto v = project(h, l.wv, li, ProjSlot::wv);
        auto ctx = causal_attention(tape, q, k, v, l.n_heads);
        x = add(tape, x, project(ctx, l.wo, li, ProjSlot::wo));

        auto h2 = rmsnorm(tape, x, l.norm_mlp, eps);
        auto gate = silu(tape, project(h2, l.w_gate, li, ProjSlot::w_gate));
        auto up = project(h2, l.w_up, li, ProjSlot::w_up);
        auto act = mul(tape, gate, up);
        if (probe && probe->on_layer) probe->on_layer(li, *ctx, *act);
        x = add(tape, x, project(act, l.w_down, li, ProjSlot::w_down));
    }
    x = rmsnorm(tape, x, m.final_norm, eps);
    return matmul(tape, x, m.lm_head);
}

// Greedy argmax decoding with full recompute per step; ties resolve to the
// lowest token id. Deterministic for fixed weights and prompt.
template <typename Real>
std::vector<TokenId> generate(const TransformerModel<Real>& m, const std::vector<TokenId>& prompt,
                              std::size_t n_new) {
    require(!prompt.empty(), ErrorKind::input, "generate: empty prompt");
    require(prompt.size() + n_new <= m.config.max_seq_len, ErrorKind::input,
            "generate: prompt length " + std::to_string(prompt.size()) + " + " +
                std::to_string(n_new) + " new tokens exceeds max_seq_len " +
                std::to_string(m.config.max_seq_len));
    std::vector<TokenId> seq = prompt;
    for (std::size_t i = 0; i < n_new; ++i) {
        auto logits = forward<Real>(m, seq);
        const std::size_t v = logits->cols();
        const Real* last = logits->data.data() + (logits->rows() - 1) * v;
        seq.push_back(static_cast<TokenId>(argmax_row(last, v)));
    }
    return seq;
}

}  // namespace mop
