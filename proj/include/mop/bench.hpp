#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mop/errors.hpp"
#include "mop/transformer.hpp"

namespace mop {

// Analytic multiply-accumulate count per generated token from the current
// shapes: projections and lm_head, plus attention score/mix terms at the
// given context length. Embedding lookup is a copy and counts nothing.
template <typename Real>
std::uint64_t flops_per_token(const TransformerModel<Real>& m, std::size_t ctx_len = 0) {
    const std::uint64_t d = m.config.d_model;
    std::uint64_t total = 0;
    for (const auto& l : m.layers) {
        const std::uint64_t attn_w = static_cast<std::uint64_t>(l.n_heads) * l.d_head;
        total += 2 * (4 * d * attn_w);                    // wq, wk, wv, wo
        total += 2 * (3 * d * static_cast<std::uint64_t>(l.d_ff));  // gate, up, down
        total += 2 * (2 * attn_w * static_cast<std::uint64_t>(ctx_len));  // scores + mix
    }
    total += 2 * d * static_cast<std::uint64_t>(m.config.vocab_size);  // lm_head
    return total;
}

// Projection-only share (the prunable mass); excludes lm_head, attention
// score terms, and embeddings.
template <typename Real>
std::uint64_t projection_flops_per_token(const TransformerModel<Real>& m) {
    const std::uint64_t d = m.config.d_model;
    std::uint64_t total = 0;
    for (const auto& l : m.layers) {
        const std::uint64_t attn_w = static_cast<std::uint64_t>(l.n_heads) * l.d_head;
        total += 2 * (4 * d * attn_w + 3 * d * static_cast<std::uint64_t>(l.d_ff));
    }
    return total;
}

struct BenchProtocol {
    std::size_t prompt_len{12};
    std::size_t gen_len{128};
    std::size_t runs{20};
    std::size_t warmup{10};
};

struct BenchReport {
    std::vector<double> run_seconds;  // all runs, warm-up first
    std::size_t warmup{0};
    double mean_retained{0.0};
    double stddev_retained{0.0};
    std::size_t tokens_generated{0};
    std::uint64_t flops_per_token{0};

    std::size_t retained_runs() const { return run_seconds.size() - warmup; }
};

// Wall-clock latency of autoregressive generation at batch size 1 with full
// recompute per step (no KV cache); the first `warmup` runs are discarded.
// Strictly serial for timing integrity.
template <typename Real>
BenchReport latency_bench(const TransformerModel<Real>& m,
                          const BenchProtocol& protocol = BenchProtocol{}) {
    require(protocol.runs > protocol.warmup, ErrorKind::config,
            "latency_bench: need more runs than warm-up runs");
    require(protocol.prompt_len >= 1, ErrorKind::config, "latency_bench: empty prompt");
    require(protocol.prompt_len + protocol.gen_len <= m.config.max_seq_len, ErrorKind::input,
            "latency_bench: prompt + generation budget exceeds max_seq_len");

    std::vector<TokenId> prompt(protocol.prompt_len);
    for (std::size_t i = 0; i < prompt.size(); ++i)
        prompt[i] = static_cast<TokenId>((i + 1) % m.config.vocab_size);

    BenchReport report;
    report.warmup = protocol.warmup;
    report.tokens_generated = protocol.gen_len;
    report.flops_per_token = flops_per_token(m, protocol.prompt_len + protocol.gen_len);
    report.run_seconds.reserve(protocol.runs);
    for (std::size_t r = 0; r < protocol.runs; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        auto out = generate(m, prompt, protocol.gen_len);
        const auto t1 = std::chrono::steady_clock::now();
        require(out.size() == protocol.prompt_len + protocol.gen_len, ErrorKind::contract,
                "latency_bench: unexpected generation length");
        report.run_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    const std::size_t n = report.retained_runs();
    double mean = 0.0;
    for (std::size_t r = protocol.warmup; r < protocol.runs; ++r)
        mean += report.run_seconds[r];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = protocol.warmup; r < protocol.runs; ++r) {
        const double d = report.run_seconds[r] - mean;
        var += d * d;
    }
    report.mean_retained = mean;
    report.stddev_retained = n > 1 ? std::sqrt(var / static_cast<double>(n - 1)) : 0.0;
    return report;
}

inline double speedup(const BenchReport& dense, const BenchReport& pruned) {
    return dense.mean_retained / pruned.mean_retained;
}

}  // namespace mop
