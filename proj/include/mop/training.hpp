#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mop/errors.hpp"
#include "mop/rng.hpp"
#include "mop/tensor.hpp"
#include "mop/transformer.hpp"

namespace mop {

struct AdamWConfig {
    double lr{3e-4};
    double beta1{0.9};
    double beta2{0.999};
    double eps{1e-8};
    double weight_decay{0.0};
};

// Holds first/second moment accumulators per parameter tensor and a strictly
// increasing step counter. Gradients are consumed additively; the caller
// zeroes them between steps.
template <typename Real>
class AdamW {
  public:
    AdamW(std::vector<TensorPtr<Real>> params, AdamWConfig cfg)
        : params_(std::move(params)), cfg_(cfg) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const auto& p : params_) {
            m_.emplace_back(p->size(), 0.0);
            v_.emplace_back(p->size(), 0.0);
        }
    }

    void step() {
        ++step_count_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            if (p.grad.empty()) continue;
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double g = static_cast<double>(p.grad[j]);
                m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
                v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
                const double mh = m_[i][j] / bc1;
                const double vh = v_[i][j] / bc2;
                const double w = static_cast<double>(p.data[j]);
                p.data[j] = static_cast<Real>(
                    w - cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * w));
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    std::size_t step_count() const { return step_count_; }

  private:
    std::vector<TensorPtr<Real>> params_;
    AdamWConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t step_count_{0};
};

// Intermediate alignment schedule: 10 * i fine-tuning steps at iteration i
// (1-based).
inline std::size_t tune_schedule(std::size_t i) {
    require(i >= 1, ErrorKind::contract, "tune_schedule: iterations are 1-based");
    return 10 * i;
}

struct FineTuneStats {
    double first_loss{0.0};
    double last_loss{0.0};
    std::vector<double> losses;
};

template <typename Real>
struct LoraModel {
    TransformerModel<Real> model;
    LoraSet<Real> adapters;
};

namespace detail {

// Next-token AdamW training shared by plain and LoRA fine-tuning. Batches are
// gradient-accumulated document by document; documents are consumed in a
// seeded shuffle, reshuffled each pass.
template <typename Real>
void train_steps(TransformerModel<Real>& model, const LoraSet<Real>* lora,
                 std::vector<TensorPtr<Real>> trainable,
                 const std::vector<std::vector<TokenId>>& docs, std::size_t steps, double lr,
                 std::size_t batch, std::uint64_t seed, FineTuneStats* stats) {
    if (steps == 0) return;
    require(!docs.empty(), ErrorKind::data, "fine_tune: empty dataset");
    require(batch >= 1, ErrorKind::config, "fine_tune: batch must be >= 1");
    for (const auto& d : docs)
        require(d.size() >= 2, ErrorKind::data, "fine_tune: document shorter than 2 tokens");

    AdamWConfig adam;
    adam.lr = lr;
    AdamW<Real> opt(trainable, adam);

    std::vector<std::size_t> order(docs.size());
    std::size_t cursor = order.size();  // trigger shuffle on first use
    std::uint64_t pass = 0;
    const Real inv_batch = Real(1) / static_cast<Real>(batch);

    for (std::size_t step = 0; step < steps; ++step) {
        double loss_acc = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            if (cursor >= order.size()) {
                for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
                Rng rng(mix64(seed, pass++));
                rng.shuffle(order);
                cursor = 0;
            }
            const auto& doc = docs[order[cursor++]];
            std::vector<TokenId> inputs(doc.begin(), doc.end() - 1);
            std::vector<TokenId> targets(doc.begin() + 1, doc.end());
            Tape<Real> tape;
            auto logits = forward<Real>(model, inputs, &tape, lora);
            auto loss = cross_entropy(&tape, logits, targets);
            tape.backward(loss, inv_batch);
            loss_acc += static_cast<double>(loss->data[0]);
        }
        opt.step();
        opt.zero_grad();
        if (stats) {
            const double mean_loss = loss_acc / static_cast<double>(batch);
            if (step == 0) stats->first_loss = mean_loss;
            stats->last_loss = mean_loss;
            stats->losses.push_back(mean_loss);
        }
    }
}

}  // namespace detail

// Full-weight fine-tuning. A pure function of its arguments: same inputs,
// bit-identical resulting weights.
template <typename Real>
TransformerModel<Real> fine_tune(TransformerModel<Real> model,
                                 const std::vector<std::vector<TokenId>>& docs, std::size_t steps,
                                 double lr, std::size_t batch, std::uint64_t seed,
                                 FineTuneStats* stats = nullptr) {
    detail::train_steps<Real>(model, nullptr, parameters(model), docs, steps, lr, batch, seed,
                              stats);
    return model;
}

// Attaches zero-initialized low-rank adapters to the seven projection
// matrices of every layer and freezes the base weights. Forward behavior is
// unchanged until training moves b away from zero.
template <typename Real>
LoraModel<Real> lora_attach(TransformerModel<Real> model, std::size_t rank, Real alpha,
                            std::uint64_t seed) {
    require(rank >= 1, ErrorKind::config, "lora_attach: rank must be >= 1");
    LoraModel<Real> lm;
    lm.adapters.rank = rank;
    lm.adapters.alpha = alpha;
    lm.adapters.layers.resize(model.layers.size());
    Rng rng(mix64(seed, 0x6c6f7261ULL));
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const auto& l = model.layers[li];
        const TensorPtr<Real> targets[kNumProjSlots] = {l.wq, l.wk, l.wv,    l.wo,
                                                        l.w_gate, l.w_up, l.w_down};
        for (std::size_t s = 0; s < kNumProjSlots; ++s) {
            const auto& w = targets[s];
            require(rank <= std::min(w->shape[0], w->shape[1]), ErrorKind::config,
                    "lora_attach: rank " + std::to_string(rank) + " exceeds min dimension of " +
                        shape_str(w->shape) + " (layer " + std::to_string(li) + ")");
            auto& pair = lm.adapters.layers[li][s];
            pair.a = tensor<Real>({w->shape[0], rank}, true);
            for (auto& v : pair.a->data) v = static_cast<Real>(rng.normal(0.0, kInitStd));
            pair.b = tensor<Real>({rank, w->shape[1]}, true);  // zero-init
        }
    }
    for (auto& p : parameters(model)) p->requires_grad = false;
    lm.model = std::move(model);
    return lm;
}

template <typename Real>
std::vector<TensorPtr<Real>> lora_parameters(const LoraModel<Real>& lm) {
    std::vector<TensorPtr<Real>> out;
    out.reserve(lm.adapters.layers.size() * kNumProjSlots * 2);
    for (const auto& layer : lm.adapters.layers)
        for (const auto& pair : layer) {
            out.push_back(pair.a);
            out.push_back(pair.b);
        }
    return out;
}

// Folds every adapter into its base weight (w += (alpha/r) * a * b), unfreezes
// the model, and invalidates the adapter set. Merging twice is an error.
template <typename Real>
TransformerModel<Real> lora_merge(LoraModel<Real>& lm) {
    require(!lm.adapters.merged, ErrorKind::contract, "lora_merge: adapters already merged");
    lm.adapters.merged = true;
    const Real scale = lm.adapters.scaling();
    for (std::size_t li = 0; li < lm.model.layers.size(); ++li) {
        auto& l = lm.model.layers[li];
        const TensorPtr<Real> targets[kNumProjSlots] = {l.wq, l.wk, l.wv,    l.wo,
                                                        l.w_gate, l.w_up, l.w_down};
        for (std::size_t s = 0; s < kNumProjSlots; ++s) {
            const auto& pair = lm.adapters.layers[li][s];
            auto& w = *targets[s];
            const std::size_t m = pair.a->shape[0], r = pair.a->shape[1], n = pair.b->shape[1];
            std::vector<Real> delta(m * n, Real(0));
            detail::gemm(m, r, n, pair.a->data.data(), pair.b->data.data(), delta.data(), false);
            for (std::size_t i = 0; i < w.size(); ++i) w.data[i] += scale * delta[i];
        }
    }
    for (auto& p : parameters(lm.model)) p->requires_grad = true;
    return std::move(lm.model);
}

// LoRA recovery fine-tuning: only adapter parameters receive updates; the
// frozen base still propagates activations.
template <typename Real>
void fine_tune_lora(LoraModel<Real>& lm, const std::vector<std::vector<TokenId>>& docs,
                    std::size_t steps, double lr, std::size_t batch, std::uint64_t seed,
                    FineTuneStats* stats = nullptr) {
    require(!lm.adapters.merged, ErrorKind::contract, "fine_tune_lora: adapters already merged");
    detail::train_steps(lm.model, &lm.adapters, lora_parameters(lm), docs, steps, lr, batch, seed,
                        stats);
}

}  // namespace mop
