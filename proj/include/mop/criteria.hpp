#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mop/data.hpp"
#include "mop/errors.hpp"
#include "mop/surgery.hpp"
#include "mop/transformer.hpp"

namespace mop {

enum class Branch { width, depth };

inline const char* branch_name(Branch b) { return b == Branch::width ? "width" : "depth"; }

// Activation-magnitude width scores: per head the mean token-wise L2 norm of
// the head's output before wo, per neuron the mean |silu(x*w_gate) * (x*w_up)|
// component, both over one sweep of the calibration segments.
template <typename Real>
WidthScores amp_scores(const TransformerModel<Real>& m, const CalibSet& calib) {
    require(!calib.segments.empty(), ErrorKind::data, "amp_scores: empty calibration set");
    const std::size_t n_layers = m.layers.size();
    WidthScores s;
    s.head_scores.resize(n_layers);
    s.neuron_scores.resize(n_layers);
    std::vector<std::vector<double>> head_acc(n_layers), neuron_acc(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        head_acc[l].assign(m.layers[l].n_heads, 0.0);
        neuron_acc[l].assign(m.layers[l].d_ff, 0.0);
    }
    std::size_t tokens = 0;

    ForwardProbe<Real> probe;
    probe.on_layer = [&](std::size_t l, const Tensor<Real>& ctx, const Tensor<Real>& act) {
        const std::size_t t_len = ctx.rows();
        const std::size_t dh = m.layers[l].d_head, heads = head_acc[l].size();
        for (std::size_t t = 0; t < t_len; ++t) {
            const Real* row = ctx.data.data() + t * ctx.cols();
            for (std::size_t h = 0; h < heads; ++h) {
                double sq = 0.0;
                for (std::size_t c = 0; c < dh; ++c) {
                    const double v = static_cast<double>(row[h * dh + c]);
                    sq += v * v;
                }
                head_acc[l][h] += std::sqrt(sq);
            }
            const Real* arow = act.data.data() + t * act.cols();
            for (std::size_t j = 0; j < neuron_acc[l].size(); ++j)
                neuron_acc[l][j] += std::abs(static_cast<double>(arow[j]));
        }
    };

    for (const auto& seg : calib.segments) {
        forward<Real>(m, seg, nullptr, nullptr, &probe);
        tokens += seg.size();
    }
    for (std::size_t l = 0; l < n_layers; ++l) {
        s.head_scores[l].resize(head_acc[l].size());
        s.neuron_scores[l].resize(neuron_acc[l].size());
        for (std::size_t h = 0; h < head_acc[l].size(); ++h)
            s.head_scores[l][h] = head_acc[l][h] / static_cast<double>(tokens);
        for (std::size_t j = 0; j < neuron_acc[l].size(); ++j)
            s.neuron_scores[l][j] = neuron_acc[l][j] / static_cast<double>(tokens);
    }
    return s;
}

// Layer criterion: always the third-to-last layer, so the final two layers
// survive and depth steps walk from the end toward the beginning.
template <typename Real>
std::size_t select_layer(const TransformerModel<Real>& m) {
    require(m.layers.size() >= 3, ErrorKind::contract,
            "select_layer: need at least 3 layers, have " + std::to_string(m.layers.size()));
    return m.layers.size() - 3;
}

// Angle between two flattened logit vectors, in [0, pi]. Evaluated as
// 2*atan2(|u' - v'|, |u' + v'|) on the normalized vectors, which equals the
// clamped arccos of their cosine but stays accurate near 0 and pi (identical
// vectors give exactly 0).
template <typename Real>
double cosine_angle(const std::vector<Real>& a, const std::vector<Real>& b) {
    require(a.size() == b.size(), ErrorKind::dimension,
            "cosine_angle: length mismatch " + std::to_string(a.size()) + " vs " +
                std::to_string(b.size()));
    double na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
        nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
    }
    require(na > 0.0 && nb > 0.0, ErrorKind::degenerate, "cosine_angle: zero vector");
    const double inv_na = 1.0 / std::sqrt(na), inv_nb = 1.0 / std::sqrt(nb);
    double diff = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = static_cast<double>(a[i]) * inv_na;
        const double y = static_cast<double>(b[i]) * inv_nb;
        diff += (x - y) * (x - y);
        sum += (x + y) * (x + y);
    }
    return 2.0 * std::atan2(std::sqrt(diff), std::sqrt(sum));
}

template <typename Real>
double cosine_angle(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
    return cosine_angle(a->data, b->data);
}

namespace detail {

template <typename Real>
void log_softmax_row(const Real* row, std::size_t n, std::vector<double>& out) {
    double mx = static_cast<double>(row[0]);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(s);
    out.resize(n);
    for (std::size_t j = 0; j < n; ++j) out[j] = static_cast<double>(row[j]) - lse;
}

}  // namespace detail

// Mean over positions of sum_x p(x) log(p(x)/q(x)), where p and q are the
// per-position softmax distributions of the reference and candidate logits.
template <typename Real>
double kl_divergence(const TensorPtr<Real>& ref_logits, const TensorPtr<Real>& cand_logits) {
    require(ref_logits->shape == cand_logits->shape, ErrorKind::dimension,
            "kl_divergence: shape mismatch " + shape_str(ref_logits->shape) + " vs " +
                shape_str(cand_logits->shape));
    const std::size_t rows = ref_logits->rows(), v = ref_logits->cols();
    std::vector<double> lp, lq;
    double acc = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        detail::log_softmax_row(ref_logits->data.data() + r * v, v, lp);
        detail::log_softmax_row(cand_logits->data.data() + r * v, v, lq);
        for (std::size_t j = 0; j < v; ++j) acc += std::exp(lp[j]) * (lp[j] - lq[j]);
    }
    return acc / static_cast<double>(rows);
}

// exp of the mean negative log-likelihood over all predicted positions of
// all segments.
template <typename Real>
double perplexity(const TransformerModel<Real>& m,
                  const std::vector<std::vector<TokenId>>& segments) {
    require(!segments.empty(), ErrorKind::data, "perplexity: empty calibration set");
    double nll = 0.0;
    std::size_t positions = 0;
    for (const auto& seg : segments) {
        require(seg.size() >= 2, ErrorKind::data, "perplexity: segment shorter than 2 tokens");
        std::vector<TokenId> inputs(seg.begin(), seg.end() - 1);
        std::vector<TokenId> targets(seg.begin() + 1, seg.end());
        auto logits = forward<Real>(m, inputs);
        auto loss = cross_entropy<Real>(nullptr, logits, targets);
        nll += static_cast<double>(loss->data[0]) * static_cast<double>(targets.size());
        positions += targets.size();
    }
    return std::exp(nll / static_cast<double>(positions));
}

template <typename Real>
double eval_ppl(const TransformerModel<Real>& m, const Corpus& corpus, std::size_t seg_len) {
    auto segs = tile_segments(corpus.eval_docs(), seg_len);
    require(!segs.empty(), ErrorKind::data, "eval_ppl: held-out split too small for segment length");
    return perplexity(m, segs);
}

enum class PathKind { cosine, kl, ppl, random };

inline const char* path_kind_name(PathKind k) {
    switch (k) {
        case PathKind::cosine: return "cosine";
        case PathKind::kl: return "kl";
        case PathKind::ppl: return "ppl";
        case PathKind::random: return "random";
    }
    return "?";
}

struct PathCriterion {
    PathKind kind{PathKind::random};
    std::uint64_t seed{0};
};

// Scores candidates against the original model on a frozen calibration set.
// Reference logits are computed once at construction; scoring is read-only
// and safe to call from two candidate threads. Lower is better for every
// variant. The random variant draws from a stream indexed by (seed, t,
// branch), so results do not depend on evaluation order.
template <typename Real>
class PathScorer {
  public:
    PathScorer(PathCriterion crit, const CalibSet* calib, const TransformerModel<Real>* reference)
        : crit_(crit), calib_(calib) {
        if (crit_.kind == PathKind::cosine || crit_.kind == PathKind::kl) {
            ref_logits_.reserve(calib_->texts.size());
            for (const auto& text : calib_->texts)
                ref_logits_.push_back(forward<Real>(*reference, text));
        }
    }

    double score(const TransformerModel<Real>& candidate, std::uint64_t t, Branch branch) const {
        switch (crit_.kind) {
            case PathKind::cosine: {
                double acc = 0.0;
                for (std::size_t i = 0; i < calib_->texts.size(); ++i) {
                    auto logits = forward<Real>(candidate, calib_->texts[i]);
                    acc += cosine_angle(ref_logits_[i], logits);
                }
                return acc / static_cast<double>(calib_->texts.size());
            }
            case PathKind::kl: {
                double acc = 0.0;
                for (std::size_t i = 0; i < calib_->texts.size(); ++i) {
                    auto logits = forward<Real>(candidate, calib_->texts[i]);
                    acc += kl_divergence(ref_logits_[i], logits);
                }
                return acc / static_cast<double>(calib_->texts.size());
            }
            case PathKind::ppl:
                return perplexity(candidate, calib_->segments);
            case PathKind::random:
                return static_cast<double>(
                           mix64(crit_.seed, t, branch == Branch::width ? 1 : 2) >> 11) *
                       0x1.0p-53;
        }
        fail(ErrorKind::config, "path_score: unknown criterion");
    }

  private:
    PathCriterion crit_;
    const CalibSet* calib_;
    std::vector<TensorPtr<Real>> ref_logits_;
};

// One-shot spelling of the op contract; the engine holds a PathScorer to
// reuse the reference logits across iterations.
template <typename Real>
double path_score(PathCriterion crit, const TransformerModel<Real>& candidate,
                  const TransformerModel<Real>& reference, const CalibSet& calib,
                  std::uint64_t t = 1, Branch branch = Branch::width) {
    PathScorer<Real> scorer(crit, &calib, &reference);
    return scorer.score(candidate, t, branch);
}

}  // namespace mop
