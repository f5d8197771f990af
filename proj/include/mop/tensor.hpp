#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "mop/errors.hpp"

namespace mop {

using TokenId = std::int32_t;

// Dense row-major tensor. Gradient storage is materialized lazily the first
// time the backward pass touches it; accumulation is additive and the caller
// zeroes grads between optimizer steps.
template <typename Real>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<Real> data;
    std::vector<Real> grad;
    bool requires_grad{false};

    std::size_t size() const { return data.size(); }
    std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
    std::size_t rows() const { return shape.empty() ? 1 : size() / shape.back(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
    }
    void zero_grad() { std::fill(grad.begin(), grad.end(), Real(0)); }
};

template <typename Real>
using TensorPtr = std::shared_ptr<Tensor<Real>>;

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

template <typename Real>
TensorPtr<Real> tensor(std::vector<std::size_t> shape, bool requires_grad = false) {
    auto t = std::make_shared<Tensor<Real>>();
    t->data.assign(shape_numel(shape), Real(0));
    t->shape = std::move(shape);
    t->requires_grad = requires_grad;
    return t;
}

template <typename Real>
TensorPtr<Real> tensor(std::vector<std::size_t> shape, std::vector<Real> values,
                       bool requires_grad = false) {
    require(shape_numel(shape) == values.size(), ErrorKind::dimension,
            "tensor: shape " + shape_str(shape) + " does not match " +
                std::to_string(values.size()) + " values");
    auto t = std::make_shared<Tensor<Real>>();
    t->shape = std::move(shape);
    t->data = std::move(values);
    t->requires_grad = requires_grad;
    return t;
}

template <typename Real>
TensorPtr<Real> clone_tensor(const TensorPtr<Real>& t) {
    auto c = std::make_shared<Tensor<Real>>(*t);
    return c;
}

// Records one backward closure per forward op; replaying them in reverse
// recording order yields gradients on every requires_grad leaf reachable
// from the loss. Single-threaded by contract.
template <typename Real>
class Tape {
  public:
    void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

    std::size_t size() const { return ops_.size(); }

    void backward(const TensorPtr<Real>& loss, Real seed = Real(1)) {
        require(loss && loss->size() == 1, ErrorKind::contract,
                "backward: loss must be a scalar tensor");
        loss->ensure_grad();
        loss->grad[0] += seed;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

    void clear() { ops_.clear(); }

  private:
    std::vector<std::function<void()>> ops_;
};

// Free-function spelling of the op contract.
template <typename Real>
void backward(Tape<Real>& tape, const TensorPtr<Real>& loss, Real seed = Real(1)) {
    tape.backward(loss, seed);
}

namespace detail {

// C(m x n) = A(m x k) * B(k x n). Each output element accumulates over k in
// ascending order, so results are bit-identical to the naive triple loop.
template <typename Real>
void gemm(std::size_t m, std::size_t k, std::size_t n, const Real* a, const Real* b, Real* c,
          bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        Real* crow = c + i * n;
        if (!accumulate) std::fill(crow, crow + n, Real(0));
        const Real* arow = a + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const Real av = arow[kk];
            const Real* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename Real>
std::vector<Real> transposed(std::size_t r, std::size_t c, const Real* in) {
    std::vector<Real> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
    return out;
}

template <typename Real>
bool grad_ready(const TensorPtr<Real>& out) {
    return !out->grad.empty();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops. Every op validates shapes, computes the forward value, and (when a
// tape is supplied and an input requires grad) records its backward rule.
// ---------------------------------------------------------------------------

template <typename Real>
TensorPtr<Real> matmul(Tape<Real>* tape, const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
    require(a->shape.size() == 2 && b->shape.size() == 2 && a->shape[1] == b->shape[0],
            ErrorKind::dimension,
            "matmul: incompatible shapes " + shape_str(a->shape) + " x " + shape_str(b->shape));
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = tensor<Real>({m, n});
    detail::gemm(m, k, n, a->data.data(), b->data.data(), out->data.data(), false);
    if (tape && (a->requires_grad || b->requires_grad)) {
        out->requires_grad = true;
        tape->record([a, b, out, m, k, n] {
            if (!detail::grad_ready(out)) return;
            if (a->requires_grad) {
                a->ensure_grad();
                auto bt = detail::transposed(k, n, b->data.data());  // n x k
                detail::gemm(m, n, k, out->grad.data(), bt.data(), a->grad.data(), true);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                auto at = detail::transposed(m, k, a->data.data());  // k x m
                detail::gemm(k, m, n, at.data(), out->grad.data(), b->grad.data(), true);
            }
        });
    }
    return out;
}

template <typename Real>
TensorPtr<Real> add(Tape<Real>* tape, const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
    require(a->shape == b->shape, ErrorKind::dimension,
            "add: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    auto out = tensor<Real>(a->shape);
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] + b->data[i];
    if (tape && (a->requires_grad || b->requires_grad)) {
        out->requires_grad = true;
        tape->record([a, b, out] {
            if (!detail::grad_ready(out)) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

// out = a + c * b  (LoRA delta path).
template <typename Real>
TensorPtr<Real> add_scaled(Tape<Real>* tape, const TensorPtr<Real>& a, const TensorPtr<Real>& b,
                           Real c) {
    require(a->shape == b->shape, ErrorKind::dimension,
            "add_scaled: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    auto out = tensor<Real>(a->shape);
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] + c * b->data[i];
    if (tape && (a->requires_grad || b->requires_grad)) {
        out->requires_grad = true;
        tape->record([a, b, out, c] {
            if (!detail::grad_ready(out)) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += c * out->grad[i];
            }
        });
    }
    return out;
}

template <typename Real>
TensorPtr<Real> mul(Tape<Real>* tape, const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
    require(a->shape == b->shape, ErrorKind::dimension,
            "mul: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    auto out = tensor<Real>(a->shape);
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * b->data[i];
    if (tape && (a->requires_grad || b->requires_grad)) {
        out->requires_grad = true;
        tape->record([a, b, out] {
            if (!detail::grad_ready(out)) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i] * b->data[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[i] * a->data[i];
            }
        });
    }
    return out;
}

template <typename Real>
TensorPtr<Real> silu(Tape<Real>* tape, const TensorPtr<Real>& x) {
    auto out = tensor<Real>(x->shape);
    for (std::size_t i = 0; i < x->size(); ++i) {
        const Real v = x->data[i];
        const Real sig = Real(1) / (Real(1) + std::exp(-v));
        out->data[i] = v * sig;
    }
    if (tape && x->requires_grad) {
        out->requires_grad = true;
        tape->record([x, out] {
            if (!detail::grad_ready(out)) return;
            x->ensure_grad();
            for (std::size_t i = 0; i < x->size(); ++i) {
                const Real v = x->data[i];
                const Real sig = Real(1) / (Real(1) + std::exp(-v));
                x->grad[i] += out->grad[i] * sig * (Real(1) + v * (Real(1) - sig));
            }
        });
    }
    return out;
}

template <typename Real>
TensorPtr<Real> sum(Tape<Real>* tape, const TensorPtr<Real>& x) {
    auto out = tensor<Real>({1});
    Real acc = Real(0);
    for (Real v : x->data) acc += v;
    out->data[0] = acc;
    if (tape && x->requires_grad) {
        out->requires_grad = true;
        tape->record([x, out] {
            if (!detail::grad_ready(out)) return;
            x->ensure_grad();
            const Real g = out->grad[0];
            for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += g;
        });
    }
    return out;
}

// Row-wise softmax over the last dimension, stabilized by row-max subtraction.
template <typename Real>
TensorPtr<Real> softmax_rows(Tape<Real>* tape, const TensorPtr<Real>& x) {
    require(!x->shape.empty(), ErrorKind::dimension, "softmax_rows: scalar input");
    const std::size_t rows = x->rows(), n = x->cols();
    auto out = tensor<Real>(x->shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* in = x->data.data() + r * n;
        Real* o = out->data.data() + r * n;
        Real mx = in[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
        Real s = Real(0);
        for (std::size_t j = 0; j < n; ++j) {
            o[j] = std::exp(in[j] - mx);
            s += o[j];
        }
        const Real inv = Real(1) / s;
        for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
    }
    if (tape && x->requires_grad) {
        out->requires_grad = true;
        tape->record([x, out, rows, n] {
            if (!detail::grad_ready(out)) return;
            x->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* p = out->data.data() + r * n;
                const Real* g = out->grad.data() + r * n;
                Real dot = Real(0);
                for (std::size_t j = 0; j < n; ++j) dot += g[j] * p[j];
                Real* gx = x->grad.data() + r * n;
                for (std::size_t j = 0; j < n; ++j) gx[j] += p[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

// RMS normalization with learned gain over the last dimension.
template <typename Real>
TensorPtr<Real> rmsnorm(Tape<Real>* tape, const TensorPtr<Real>& x, const TensorPtr<Real>& gain,
                        Real eps) {
    require(gain->shape.size() == 1 && gain->shape[0] == x->cols(), ErrorKind::dimension,
            "rmsnorm: gain " + shape_str(gain->shape) + " does not match feature dim of " +
                shape_str(x->shape));
    require(eps > Real(0), ErrorKind::config, "rmsnorm: eps must be positive");
    const std::size_t rows = x->rows(), d = x->cols();
    auto out = tensor<Real>(x->shape);
    std::vector<Real> inv_rms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* in = x->data.data() + r * d;
        Real ms = Real(0);
        for (std::size_t j = 0; j < d; ++j) ms += in[j] * in[j];
        ms /= Real(d);
        const Real inv = Real(1) / std::sqrt(ms + eps);
        inv_rms[r] = inv;
        Real* o = out->data.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) o[j] = in[j] * inv * gain->data[j];
    }
    if (tape && (x->requires_grad || gain->requires_grad)) {
        out->requires_grad = true;
        tape->record([x, gain, out, inv_rms = std::move(inv_rms), rows, d] {
            if (!detail::grad_ready(out)) return;
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* in = x->data.data() + r * d;
                const Real* g = out->grad.data() + r * d;
                const Real inv = inv_rms[r];
                if (gain->requires_grad) {
                    gain->ensure_grad();
                    for (std::size_t j = 0; j < d; ++j) gain->grad[j] += g[j] * in[j] * inv;
                }
                if (x->requires_grad) {
                    x->ensure_grad();
                    Real dot = Real(0);
                    for (std::size_t j = 0; j < d; ++j) dot += g[j] * gain->data[j] * in[j];
                    const Real k = inv * inv * inv * dot / Real(d);
                    Real* gx = x->grad.data() + r * d;
                    for (std::size_t j = 0; j < d; ++j)
                        gx[j] += g[j] * gain->data[j] * inv - in[j] * k;
                }
            }
        });
    }
    return out;
}

// Gathers rows of an embedding table; backward scatter-adds into the table.
template <typename Real>
TensorPtr<Real> embedding_rows(Tape<Real>* tape, const TensorPtr<Real>& table,
                               const std::vector<TokenId>& ids) {
    require(table->shape.size() == 2, ErrorKind::dimension, "embedding_rows: table must be 2-d");
    const std::size_t v = table->shape[0], d = table->shape[1];
    for (TokenId id : ids)
        require(id >= 0 && static_cast<std::size_t>(id) < v, ErrorKind::input,
                "embedding_rows: token id " + std::to_string(id) + " out of range [0, " +
                    std::to_string(v) + ")");
    auto out = tensor<Real>({ids.size(), d});
    for (std::size_t t = 0; t < ids.size(); ++t)
        std::copy_n(table->data.data() + static_cast<std::size_t>(ids[t]) * d, d,
                    out->data.data() + t * d);
    if (tape && table->requires_grad) {
        out->requires_grad = true;
        tape->record([table, out, ids, d] {
            if (!detail::grad_ready(out)) return;
            table->ensure_grad();
            for (std::size_t t = 0; t < ids.size(); ++t) {
                Real* dst = table->grad.data() + static_cast<std::size_t>(ids[t]) * d;
                const Real* src = out->grad.data() + t * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

// Rotary position encoding applied independently to each d_head-wide block,
// rotating consecutive pairs; row index is the absolute position.
template <typename Real>
TensorPtr<Real> rope_rows(Tape<Real>* tape, const TensorPtr<Real>& x, std::size_t d_head,
                          double theta) {
    require(x->shape.size() == 2 && d_head >= 2 && d_head % 2 == 0 && x->cols() % d_head == 0,
            ErrorKind::dimension,
            "rope_rows: width " + shape_str(x->shape) + " incompatible with head dim " +
                std::to_string(d_head));
    const std::size_t rows = x->rows(), w = x->cols(), half = d_head / 2;
    auto rotate = [rows, w, d_head, half, theta](const Real* in, Real* o, bool inverse) {
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t h0 = 0; h0 < w; h0 += d_head) {
                for (std::size_t p = 0; p < half; ++p) {
                    const double freq =
                        std::pow(theta, -2.0 * static_cast<double>(p) / static_cast<double>(d_head));
                    const double ang = static_cast<double>(r) * freq;
                    const Real c = static_cast<Real>(std::cos(ang));
                    const Real s = static_cast<Real>(inverse ? -std::sin(ang) : std::sin(ang));
                    const std::size_t i0 = r * w + h0 + 2 * p;
                    const Real a = in[i0], b = in[i0 + 1];
                    o[i0] = a * c - b * s;
                    o[i0 + 1] = a * s + b * c;
                }
            }
        }
    };
    auto out = tensor<Real>(x->shape);
    rotate(x->data.data(), out->data.data(), false);
    if (tape && x->requires_grad) {
        out->requires_grad = true;
        tape->record([x, out, rotate] {
            if (!detail::grad_ready(out)) return;
            x->ensure_grad();
            std::vector<Real> gx(x->size());
            rotate(out->grad.data(), gx.data(), true);
            for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += gx[i];
        });
    }
    return out;
}

// Multi-head causal self-attention on pre-projected q/k/v of shape
// T x (n_heads * d_head). Scores scaled by 1/sqrt(d_head); position i attends
// to positions <= i only.
template <typename Real>
TensorPtr<Real> causal_attention(Tape<Real>* tape, const TensorPtr<Real>& q,
                                 const TensorPtr<Real>& k, const TensorPtr<Real>& v,
                                 std::size_t n_heads) {
    require(q->shape.size() == 2 && q->shape == k->shape && q->shape == v->shape,
            ErrorKind::dimension,
            "causal_attention: q/k/v shapes must match, got " + shape_str(q->shape) + ", " +
                shape_str(k->shape) + ", " + shape_str(v->shape));
    require(n_heads >= 1 && q->cols() % n_heads == 0, ErrorKind::dimension,
            "causal_attention: width " + std::to_string(q->cols()) + " not divisible by " +
                std::to_string(n_heads) + " heads");
    const std::size_t t_len = q->rows(), w = q->cols(), dh = w / n_heads;
    const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh)));
    auto out = tensor<Real>(q->shape);

    const bool need_grad = tape && (q->requires_grad || k->requires_grad || v->requires_grad);
    // Probabilities are kept only when the backward pass will need them.
    auto probs = need_grad ? std::make_shared<std::vector<Real>>(n_heads * t_len * t_len, Real(0))
                           : nullptr;
    std::vector<Real> rowbuf(t_len);

    for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < t_len; ++i) {
            const Real* qi = q->data.data() + i * w + off;
            Real mx = Real(0);
            for (std::size_t j = 0; j <= i; ++j) {
                const Real* kj = k->data.data() + j * w + off;
                Real dot = Real(0);
                for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
                rowbuf[j] = dot * scale;
                mx = (j == 0) ? rowbuf[j] : std::max(mx, rowbuf[j]);
            }
            Real s = Real(0);
            for (std::size_t j = 0; j <= i; ++j) {
                rowbuf[j] = std::exp(rowbuf[j] - mx);
                s += rowbuf[j];
            }
            const Real inv = Real(1) / s;
            Real* oi = out->data.data() + i * w + off;
            for (std::size_t j = 0; j <= i; ++j) {
                const Real p = rowbuf[j] * inv;
                if (probs) (*probs)[(h * t_len + i) * t_len + j] = p;
                const Real* vj = v->data.data() + j * w + off;
                for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
            }
        }
    }

    if (need_grad) {
        out->requires_grad = true;
        tape->record([q, k, v, out, probs, n_heads, t_len, w, dh, scale] {
            if (!detail::grad_ready(out)) return;
            if (q->requires_grad) q->ensure_grad();
            if (k->requires_grad) k->ensure_grad();
            if (v->requires_grad) v->ensure_grad();
            std::vector<Real> dp(t_len), ds(t_len);
            for (std::size_t h = 0; h < n_heads; ++h) {
                const std::size_t off = h * dh;
                for (std::size_t i = 0; i < t_len; ++i) {
                    const Real* go = out->grad.data() + i * w + off;
                    const Real* prow = probs->data() + (h * t_len + i) * t_len;
                    // dP[i][j] = dO_i . V_j ; dS = P * (dP - sum_l dP_l P_l)
                    Real dot_acc = Real(0);
                    for (std::size_t j = 0; j <= i; ++j) {
                        const Real* vj = v->data.data() + j * w + off;
                        Real d = Real(0);
                        for (std::size_t c = 0; c < dh; ++c) d += go[c] * vj[c];
                        dp[j] = d;
                        dot_acc += d * prow[j];
                    }
                    for (std::size_t j = 0; j <= i; ++j) ds[j] = prow[j] * (dp[j] - dot_acc);
                    if (v->requires_grad) {
                        for (std::size_t j = 0; j <= i; ++j) {
                            Real* gv = v->grad.data() + j * w + off;
                            const Real p = prow[j];
                            for (std::size_t c = 0; c < dh; ++c) gv[c] += p * go[c];
                        }
                    }
                    if (q->requires_grad) {
                        Real* gq = q->grad.data() + i * w + off;
                        for (std::size_t j = 0; j <= i; ++j) {
                            const Real* kj = k->data.data() + j * w + off;
                            const Real m = ds[j] * scale;
                            for (std::size_t c = 0; c < dh; ++c) gq[c] += m * kj[c];
                        }
                    }
                    if (k->requires_grad) {
                        const Real* qi = q->data.data() + i * w + off;
                        for (std::size_t j = 0; j <= i; ++j) {
                            Real* gk = k->grad.data() + j * w + off;
                            const Real m = ds[j] * scale;
                            for (std::size_t c = 0; c < dh; ++c) gk[c] += m * qi[c];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// Mean over positions of -log softmax(logits)[target].
template <typename Real>
TensorPtr<Real> cross_entropy(Tape<Real>* tape, const TensorPtr<Real>& logits,
                              const std::vector<TokenId>& targets) {
    require(logits->shape.size() == 2, ErrorKind::dimension, "cross_entropy: logits must be 2-d");
    const std::size_t t_len = logits->shape[0], v = logits->shape[1];
    require(targets.size() == t_len, ErrorKind::dimension,
            "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                std::to_string(t_len) + " rows");
    for (TokenId id : targets)
        require(id >= 0 && static_cast<std::size_t>(id) < v, ErrorKind::index,
                "cross_entropy: target id " + std::to_string(id) + " out of range [0, " +
                    std::to_string(v) + ")");
    auto lse = std::make_shared<std::vector<Real>>(t_len);
    double acc = 0.0;
    for (std::size_t r = 0; r < t_len; ++r) {
        const Real* row = logits->data.data() + r * v;
        Real mx = row[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        Real s = Real(0);
        for (std::size_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
        (*lse)[r] = mx + std::log(s);
        acc += static_cast<double>((*lse)[r]) - static_cast<double>(row[targets[r]]);
    }
    auto out = tensor<Real>({1});
    out->data[0] = static_cast<Real>(acc / static_cast<double>(t_len));
    if (tape && logits->requires_grad) {
        out->requires_grad = true;
        tape->record([logits, out, targets, lse, t_len, v] {
            if (!detail::grad_ready(out)) return;
            logits->ensure_grad();
            const Real g = out->grad[0] / static_cast<Real>(t_len);
            for (std::size_t r = 0; r < t_len; ++r) {
                const Real* row = logits->data.data() + r * v;
                Real* gr = logits->grad.data() + r * v;
                for (std::size_t j = 0; j < v; ++j) {
                    const Real p = std::exp(row[j] - (*lse)[r]);
                    gr[j] += g * (p - (static_cast<std::size_t>(targets[r]) == j ? Real(1) : Real(0)));
                }
            }
        });
    }
    return out;
}

// Argmax with ties broken toward the lowest index.
template <typename Real>
std::size_t argmax_row(const Real* row, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

}  // namespace mop
