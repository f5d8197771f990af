#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mop/errors.hpp"
#include "mop/transformer.hpp"

namespace mop {

// Per-layer importance of every active attention head and MLP neuron.
// Produced by the width criterion (criteria.hpp), consumed by width_prune.
struct WidthScores {
    std::vector<std::vector<double>> head_scores;
    std::vector<std::vector<double>> neuron_scores;
};

struct PrunePlan {
    enum class Kind { depth, width };
    Kind kind{Kind::width};
    std::size_t layer_idx{0};  // depth only
    // Width only: per-layer unit indices to remove, ascending.
    std::vector<std::vector<std::size_t>> heads;
    std::vector<std::vector<std::size_t>> neurons;
    std::size_t planned_removal{0};  // width only, exact parameter count
};

template <typename Real>
std::size_t total_params(const TransformerModel<Real>& m) {
    std::size_t n = 0;
    for (const auto& p : parameters(m)) n += p->size();
    return n;
}

template <typename Real>
std::size_t layer_params(const TransformerModel<Real>& m, std::size_t idx) {
    require(idx < m.layers.size(), ErrorKind::index,
            "layer_params: layer " + std::to_string(idx) + " out of range [0, " +
                std::to_string(m.layers.size()) + ")");
    const auto& l = m.layers[idx];
    return l.wq->size() + l.wk->size() + l.wv->size() + l.wo->size() + l.w_gate->size() +
           l.w_up->size() + l.w_down->size() + l.norm_attn->size() + l.norm_mlp->size();
}

// c_t: fraction of the current model occupied by the selected layer.
// Recomputed every iteration; never cached across surgeries.
template <typename Real>
double compute_ct(const TransformerModel<Real>& m, std::size_t idx) {
    return static_cast<double>(layer_params(m, idx)) / static_cast<double>(total_params(m));
}

template <typename Real>
TransformerModel<Real> remove_layer(const TransformerModel<Real>& m, std::size_t idx) {
    require(idx < m.layers.size(), ErrorKind::index,
            "remove_layer: layer " + std::to_string(idx) + " out of range [0, " +
                std::to_string(m.layers.size()) + ")");
    TransformerModel<Real> out = clone_model(m);
    out.layers.erase(out.layers.begin() + static_cast<std::ptrdiff_t>(idx));
    out.config.n_layers = out.layers.size();
    return out;
}

namespace detail {

inline void check_unit_indices(const std::vector<std::size_t>& indices, std::size_t active,
                               const char* what) {
    std::vector<std::size_t> sorted = indices;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        require(sorted[i] < active, ErrorKind::index,
                std::string(what) + ": index " + std::to_string(sorted[i]) + " out of range [0, " +
                    std::to_string(active) + ")");
        require(i == 0 || sorted[i] != sorted[i - 1], ErrorKind::index,
                std::string(what) + ": duplicate index " + std::to_string(sorted[i]));
    }
    require(sorted.size() < active, ErrorKind::contract,
            std::string(what) + ": removal would empty the layer");
}

template <typename Real>
std::vector<std::size_t> keep_list(std::size_t active, const std::vector<std::size_t>& removed) {
    std::vector<bool> drop(active, false);
    for (std::size_t i : removed) drop[i] = true;
    std::vector<std::size_t> keep;
    keep.reserve(active - removed.size());
    for (std::size_t i = 0; i < active; ++i)
        if (!drop[i]) keep.push_back(i);
    return keep;
}

// Drops column blocks of width `unit` from a rows x (active*unit) matrix.
template <typename Real>
TensorPtr<Real> drop_col_blocks(const TensorPtr<Real>& w, std::size_t unit,
                                const std::vector<std::size_t>& keep) {
    const std::size_t rows = w->shape[0], old_cols = w->shape[1], new_cols = keep.size() * unit;
    auto out = tensor<Real>({rows, new_cols}, w->requires_grad);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* src = w->data.data() + r * old_cols;
        Real* dst = out->data.data() + r * new_cols;
        for (std::size_t b = 0; b < keep.size(); ++b)
            std::copy_n(src + keep[b] * unit, unit, dst + b * unit);
    }
    return out;
}

// Drops row blocks of height `unit` from an (active*unit) x cols matrix.
template <typename Real>
TensorPtr<Real> drop_row_blocks(const TensorPtr<Real>& w, std::size_t unit,
                                const std::vector<std::size_t>& keep) {
    const std::size_t cols = w->shape[1], new_rows = keep.size() * unit;
    auto out = tensor<Real>({new_rows, cols}, w->requires_grad);
    for (std::size_t b = 0; b < keep.size(); ++b)
        std::copy_n(w->data.data() + keep[b] * unit * cols, unit * cols,
                    out->data.data() + b * unit * cols);
    return out;
}

template <typename Real>
void strip_heads(TransformerLayer<Real>& l, const std::vector<std::size_t>& head_indices) {
    if (head_indices.empty()) return;
    check_unit_indices(head_indices, l.n_heads, "remove_heads");
    auto keep = keep_list<Real>(l.n_heads, head_indices);
    l.wq = drop_col_blocks(l.wq, l.d_head, keep);
    l.wk = drop_col_blocks(l.wk, l.d_head, keep);
    l.wv = drop_col_blocks(l.wv, l.d_head, keep);
    l.wo = drop_row_blocks(l.wo, l.d_head, keep);
    l.n_heads = keep.size();
}

template <typename Real>
void strip_neurons(TransformerLayer<Real>& l, const std::vector<std::size_t>& neuron_indices) {
    if (neuron_indices.empty()) return;
    check_unit_indices(neuron_indices, l.d_ff, "remove_neurons");
    auto keep = keep_list<Real>(l.d_ff, neuron_indices);
    l.w_gate = drop_col_blocks(l.w_gate, 1, keep);
    l.w_up = drop_col_blocks(l.w_up, 1, keep);
    l.w_down = drop_row_blocks(l.w_down, 1, keep);
    l.d_ff = keep.size();
}

}  // namespace detail

template <typename Real>
TransformerModel<Real> remove_heads(const TransformerModel<Real>& m, std::size_t layer_idx,
                                    const std::vector<std::size_t>& head_indices) {
    require(layer_idx < m.layers.size(), ErrorKind::index,
            "remove_heads: layer " + std::to_string(layer_idx) + " out of range");
    TransformerModel<Real> out = clone_model(m);
    detail::strip_heads(out.layers[layer_idx], head_indices);
    return out;
}

template <typename Real>
TransformerModel<Real> remove_neurons(const TransformerModel<Real>& m, std::size_t layer_idx,
                                      const std::vector<std::size_t>& neuron_indices) {
    require(layer_idx < m.layers.size(), ErrorKind::index,
            "remove_neurons: layer " + std::to_string(layer_idx) + " out of range");
    TransformerModel<Real> out = clone_model(m);
    detail::strip_neurons(out.layers[layer_idx], neuron_indices);
    return out;
}

namespace detail {

// Lowest-scored k unit indices, ties toward lower index, returned ascending.
inline std::vector<std::size_t> lowest_k(const std::vector<double>& scores, std::size_t k) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&scores](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] < scores[b];
        return a < b;
    });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace detail

// Plans a width pruning step that removes ~c_t of the model's parameters,
// with the same number of heads and the same number of neurons removed in
// every layer. The head/neuron budget split is proportional to each module's
// share of prunable parameters where head granularity allows; the neuron
// budget absorbs head rounding, and the final rounding residual lands as
// extra neurons in the last layer (the finest removal quantum).
template <typename Real>
PrunePlan plan_width_prune(const TransformerModel<Real>& m, const WidthScores& scores,
                           double c_t) {
    require(c_t > 0.0 && c_t < 1.0, ErrorKind::contract,
            "width_prune: c_t must lie in (0, 1), got " + std::to_string(c_t));
    const std::size_t n_layers = m.layers.size();
    require(n_layers >= 1, ErrorKind::contract, "width_prune: model has no layers");
    require(scores.head_scores.size() == n_layers && scores.neuron_scores.size() == n_layers,
            ErrorKind::dimension, "width_prune: scores do not cover every layer");

    const std::size_t d_model = m.config.d_model;
    std::size_t attn_prunable = 0, mlp_prunable = 0, min_heads = SIZE_MAX, min_ff = SIZE_MAX;
    std::size_t head_unit = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const auto& layer = m.layers[l];
        require(scores.head_scores[l].size() == layer.n_heads &&
                    scores.neuron_scores[l].size() == layer.d_ff,
                ErrorKind::dimension,
                "width_prune: scores for layer " + std::to_string(l) +
                    " do not match active unit counts");
        head_unit = 4 * d_model * layer.d_head;
        attn_prunable += head_unit * layer.n_heads;
        mlp_prunable += 3 * d_model * layer.d_ff;
        min_heads = std::min(min_heads, layer.n_heads);
        min_ff = std::min(min_ff, layer.d_ff);
    }
    const std::size_t neuron_unit = 3 * d_model;
    const std::size_t prunable = attn_prunable + mlp_prunable;
    const std::size_t budget = static_cast<std::size_t>(
        std::llround(c_t * static_cast<double>(total_params(m))));

    // Heads: proportional share, rounded, never exceeding the whole budget.
    const double attn_share = static_cast<double>(attn_prunable) / static_cast<double>(prunable);
    std::size_t k_h = static_cast<std::size_t>(std::llround(
        static_cast<double>(budget) * attn_share / static_cast<double>(n_layers * head_unit)));
    k_h = std::min(k_h, min_heads - 1);
    while (k_h > 0 && k_h * n_layers * head_unit > budget) --k_h;

    // Neurons: absorb the rest of the budget uniformly.
    const std::size_t head_removal = k_h * n_layers * head_unit;
    const std::size_t neuron_budget = budget - head_removal;
    std::size_t k_n = std::min(neuron_budget / (n_layers * neuron_unit), min_ff - 1);

    // Residual: extra neurons in the last layer.
    const std::size_t residual = neuron_budget - k_n * n_layers * neuron_unit;
    std::size_t extra = static_cast<std::size_t>(
        std::llround(static_cast<double>(residual) / static_cast<double>(neuron_unit)));
    extra = std::min(extra, m.layers.back().d_ff - 1 - k_n);

    const std::size_t removal =
        head_removal + (k_n * n_layers + extra) * neuron_unit;
    require(removal > 0, ErrorKind::contract, "width_prune: budget below one removal unit");
    // Unreachable targets (every cap binding, shortfall beyond quantization)
    // are an error rather than a silent under-prune. Plain rounding leaves a
    // shortfall below one neuron unit.
    const double shortfall = static_cast<double>(budget - std::min(budget, removal));
    require(shortfall <= std::max(0.02 * static_cast<double>(budget),
                                  static_cast<double>(neuron_unit)),
            ErrorKind::contract,
            "width_prune: target c_t=" + std::to_string(c_t) +
                " unreachable without emptying a layer");

    PrunePlan plan;
    plan.kind = PrunePlan::Kind::width;
    plan.planned_removal = removal;
    plan.heads.resize(n_layers);
    plan.neurons.resize(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        plan.heads[l] = detail::lowest_k(scores.head_scores[l], k_h);
        const std::size_t kn = k_n + (l + 1 == n_layers ? extra : 0);
        plan.neurons[l] = detail::lowest_k(scores.neuron_scores[l], kn);
    }
    return plan;
}

template <typename Real>
TransformerModel<Real> apply_prune_plan(const TransformerModel<Real>& m, const PrunePlan& plan) {
    if (plan.kind == PrunePlan::Kind::depth) return remove_layer(m, plan.layer_idx);
    require(plan.heads.size() == m.layers.size() && plan.neurons.size() == m.layers.size(),
            ErrorKind::dimension, "apply_prune_plan: plan does not cover every layer");
    TransformerModel<Real> out = clone_model(m);
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        detail::strip_heads(out.layers[l], plan.heads[l]);
        detail::strip_neurons(out.layers[l], plan.neurons[l]);
    }
    return out;
}

template <typename Real>
TransformerModel<Real> width_prune(const TransformerModel<Real>& m, const WidthScores& scores,
                                   double c_t, PrunePlan* plan_out = nullptr) {
    PrunePlan plan = plan_width_prune(m, scores, c_t);
    if (plan_out) *plan_out = plan;
    return apply_prune_plan(m, plan);
}

}  // namespace mop
