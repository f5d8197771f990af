#pragma once

#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mop/criteria.hpp"
#include "mop/data.hpp"
#include "mop/errors.hpp"
#include "mop/surgery.hpp"
#include "mop/training.hpp"
#include "mop/transformer.hpp"

namespace mop {

enum class ForceBranch { none, always_width, always_depth };

inline const char* force_branch_name(ForceBranch f) {
    switch (f) {
        case ForceBranch::none: return "none";
        case ForceBranch::always_width: return "always-width";
        case ForceBranch::always_depth: return "always-depth";
    }
    return "?";
}

struct MopSeeds {
    std::uint64_t path{1};
    std::uint64_t tune_subset{2};
    std::uint64_t fine_tune{3};
};

struct IntermediateFtConfig {
    double lr{3e-4};
    std::size_t batch{4};
};

struct FinalFtConfig {
    std::size_t lora_rank{32};
    double lora_alpha{10.0};
    double lr{3e-4};
    std::size_t batch{16};
    double epochs{2.0};  // passes over the training split; 0 skips recovery
};

struct CalibConfig {
    std::size_t n_texts{32};
    std::size_t seg_len{256};
    std::uint64_t seed{4};
};

struct MopConfig {
    double rho{0.3};
    PathCriterion path_criterion{};
    MopSeeds seeds{};
    IntermediateFtConfig intermediate_ft{};
    FinalFtConfig final_ft{};
    CalibConfig calib{};
    ForceBranch force_branch{ForceBranch::none};
    std::size_t candidate_threads{2};

    void validate() const {
        require(rho > 0.0 && rho < 1.0, ErrorKind::config,
                "MopConfig: rho must lie in (0, 1), got " + std::to_string(rho));
        require(intermediate_ft.batch >= 1 && final_ft.batch >= 1, ErrorKind::config,
                "MopConfig: batch sizes must be >= 1");
        require(final_ft.epochs >= 0.0, ErrorKind::config, "MopConfig: epochs must be >= 0");
        require(candidate_threads == 1 || candidate_threads == 2, ErrorKind::config,
                "MopConfig: candidate_threads must be 1 or 2");
        require(final_ft.lora_rank >= 1, ErrorKind::config, "MopConfig: lora_rank must be >= 1");
    }
};

// Audit record of one pruning iteration.
struct TraceRow {
    std::size_t t{0};
    std::size_t params_before{0};
    std::size_t layer_idx{0};  // layer selected by the layer criterion
    std::size_t p_layer{0};
    double c_t{0.0};
    std::optional<double> s_width, s_layer;  // absent on forced iterations
    Branch chosen{Branch::width};
    bool forced_width_guard{false};  // depth disallowed to keep >= 3 layers
    // Chosen width plan, per layer (empty when a layer was removed instead).
    std::vector<std::size_t> heads_removed, neurons_removed;
    std::vector<std::vector<std::size_t>> head_indices, neuron_indices;
    std::size_t params_after{0};
};

struct PruneTrace {
    std::size_t initial_params{0};
    std::size_t final_params{0};
    double rho{0.0};
    double p_min{0.0};
    MopConfig config{};
    std::vector<TraceRow> rows;
};

// Engine failures carry the trace accumulated so far.
class EngineError : public Error {
  public:
    EngineError(const std::string& msg, PruneTrace trace)
        : Error(ErrorKind::engine, msg), trace_(std::move(trace)) {}
    const PruneTrace& partial_trace() const { return trace_; }

  private:
    PruneTrace trace_;
};

// Path decision: width wins ties.
inline Branch path_decide(double s_width, double s_layer) {
    require(std::isfinite(s_width) && std::isfinite(s_layer), ErrorKind::engine,
            "path_decide: non-finite candidate score");
    return s_width <= s_layer ? Branch::width : Branch::depth;
}

template <typename Real>
struct IterationAudit {
    std::size_t t{0};
    const TransformerModel<Real>* before{nullptr};
    const TransformerModel<Real>* width_candidate{nullptr};  // pre-fine-tune
    const TransformerModel<Real>* depth_candidate{nullptr};
    const TransformerModel<Real>* advanced{nullptr};
    const TraceRow* row{nullptr};
};

template <typename Real>
struct EngineHooks {
    std::function<void(const IterationAudit<Real>&)> on_iteration;
};

template <typename Real>
struct MopResult {
    TransformerModel<Real> model;          // after recovery fine-tuning
    TransformerModel<Real> model_pre_rft;  // as pruned, before recovery
    PruneTrace trace;
};

namespace detail {

inline constexpr std::uint64_t kWidthTag = 1, kDepthTag = 2, kRftTag = 0x726674;

template <typename Real>
struct CandidateOutcome {
    TransformerModel<Real> model;  // pre-fine-tune weights
    std::optional<double> score;
    PrunePlan plan;
};

}  // namespace detail

// Algorithm: iteratively build a width-pruned and a depth-pruned candidate of
// matched parameter mass, align both with a short discarded fine-tune, score
// them against the original model, advance the winner (pre-fine-tune
// weights), and finish with LoRA recovery fine-tuning on the training split.
template <typename Real>
MopResult<Real> mop_prune(const TransformerModel<Real>& model, const MopConfig& cfg,
                          const Corpus& corpus, const EngineHooks<Real>* hooks = nullptr) {
    cfg.validate();
    require(model.n_layers() >= 3, ErrorKind::contract,
            "mop_prune: model must have at least 3 layers");
    CalibSet calib = build_calibration(corpus, cfg.calib.n_texts, cfg.calib.seg_len,
                                       cfg.calib.seed);
    const std::uint64_t calib_hash = content_hash(calib);

    const bool forced = cfg.force_branch != ForceBranch::none;
    std::optional<PathScorer<Real>> scorer;
    if (!forced) {
        // Run-level path randomness combines the run seed with the
        // criterion's own seed; both knobs stay meaningful.
        PathCriterion effective{cfg.path_criterion.kind,
                                mix64(cfg.seeds.path, cfg.path_criterion.seed)};
        scorer.emplace(effective, &calib, &model);
    }

    PruneTrace trace;
    trace.rho = cfg.rho;
    trace.config = cfg;
    trace.initial_params = total_params(model);
    trace.p_min = (1.0 - cfg.rho) * static_cast<double>(trace.initial_params);

    TransformerModel<Real> current = clone_model(model);
    std::size_t t = 1;
    auto engine_fail = [&trace](const std::string& msg) -> EngineError {
        return EngineError(msg, trace);
    };

    while (static_cast<double>(total_params(current)) > trace.p_min) {
        require(content_hash(calib) == calib_hash, ErrorKind::contract,
                "mop_prune: calibration set mutated mid-run");
        TraceRow row;
        row.t = t;
        row.params_before = total_params(current);
        row.layer_idx = select_layer(current);
        row.p_layer = layer_params(current, row.layer_idx);
        row.c_t = compute_ct(current, row.layer_idx);

        // Depth steps must leave at least 3 layers for the next selection.
        row.forced_width_guard =
            cfg.force_branch != ForceBranch::always_depth && current.n_layers() <= 3;
        ForceBranch force = cfg.force_branch;
        if (row.forced_width_guard) force = ForceBranch::always_width;
        if (force == ForceBranch::always_depth && current.n_layers() <= 3)
            throw engine_fail("mop_prune: depth-only run would drop below 3 layers at t=" +
                              std::to_string(t));

        const bool build_width = force != ForceBranch::always_depth;
        const bool build_depth = force != ForceBranch::always_width;
        const bool tune_and_score = force == ForceBranch::none;

        std::vector<std::vector<TokenId>> tune_subset;
        std::size_t ft_steps = 0;
        if (tune_and_score) {
            ft_steps = tune_schedule(t);
            tune_subset = sample_tune_subset(corpus, cfg.intermediate_ft.batch * ft_steps,
                                             cfg.seeds.tune_subset, t);
        }

        std::optional<detail::CandidateOutcome<Real>> width_out, depth_out;
        std::exception_ptr width_err, depth_err;

        auto width_job = [&] {
            try {
                detail::CandidateOutcome<Real> out;
                WidthScores scores = amp_scores(current, calib);
                out.plan = plan_width_prune(current, scores, row.c_t);
                out.model = apply_prune_plan(current, out.plan);
                if (tune_and_score) {
                    auto tuned = fine_tune(clone_model(out.model), tune_subset, ft_steps,
                                           cfg.intermediate_ft.lr, cfg.intermediate_ft.batch,
                                           mix64(cfg.seeds.fine_tune, t, detail::kWidthTag));
                    out.score = scorer->score(tuned, t, Branch::width);
                }
                width_out = std::move(out);
            } catch (...) {
                width_err = std::current_exception();
            }
        };
        auto depth_job = [&] {
            try {
                detail::CandidateOutcome<Real> out;
                out.plan.kind = PrunePlan::Kind::depth;
                out.plan.layer_idx = row.layer_idx;
                out.model = remove_layer(current, row.layer_idx);
                if (tune_and_score) {
                    auto tuned = fine_tune(clone_model(out.model), tune_subset, ft_steps,
                                           cfg.intermediate_ft.lr, cfg.intermediate_ft.batch,
                                           mix64(cfg.seeds.fine_tune, t, detail::kDepthTag));
                    out.score = scorer->score(tuned, t, Branch::depth);
                }
                depth_out = std::move(out);
            } catch (...) {
                depth_err = std::current_exception();
            }
        };

        if (build_width && build_depth && cfg.candidate_threads == 2) {
            std::thread tw(width_job), td(depth_job);
            tw.join();
            td.join();
        } else {
            if (build_width) width_job();
            if (build_depth) depth_job();
        }
        try {
            if (width_err) std::rethrow_exception(width_err);
            if (depth_err) std::rethrow_exception(depth_err);
        } catch (const Error& e) {
            throw engine_fail("mop_prune: candidate construction failed at t=" +
                              std::to_string(t) + ": " + e.what());
        }

        Branch chosen;
        if (force == ForceBranch::always_width) {
            chosen = Branch::width;
        } else if (force == ForceBranch::always_depth) {
            chosen = Branch::depth;
        } else {
            row.s_width = width_out->score;
            row.s_layer = depth_out->score;
            chosen = path_decide(*row.s_width, *row.s_layer);
        }
        row.chosen = chosen;

        auto& winner = chosen == Branch::width ? *width_out : *depth_out;
        if (chosen == Branch::width) {
            row.head_indices = winner.plan.heads;
            row.neuron_indices = winner.plan.neurons;
            row.heads_removed.reserve(winner.plan.heads.size());
            row.neurons_removed.reserve(winner.plan.neurons.size());
            for (const auto& h : winner.plan.heads) row.heads_removed.push_back(h.size());
            for (const auto& n : winner.plan.neurons) row.neurons_removed.push_back(n.size());
        }
        row.params_after = total_params(winner.model);
        if (row.params_after >= row.params_before)
            throw engine_fail("mop_prune: no parameter reduction at t=" + std::to_string(t));

        trace.rows.push_back(row);
        if (hooks && hooks->on_iteration) {
            IterationAudit<Real> audit;
            audit.t = t;
            audit.before = &current;
            audit.width_candidate = width_out ? &width_out->model : nullptr;
            audit.depth_candidate = depth_out ? &depth_out->model : nullptr;
            audit.advanced = &winner.model;
            audit.row = &trace.rows.back();
            hooks->on_iteration(audit);
        }
        current = std::move(winner.model);
        ++t;
    }

    trace.final_params = total_params(current);

    MopResult<Real> result;
    result.model_pre_rft = clone_model(current);
    const auto train = corpus.train_docs();
    const std::size_t steps_per_epoch = train.empty() ? 0 : train.size() / cfg.final_ft.batch;
    const std::size_t rft_steps = static_cast<std::size_t>(
        std::llround(cfg.final_ft.epochs * static_cast<double>(steps_per_epoch)));
    if (rft_steps > 0) {
        auto lm = lora_attach(std::move(current), cfg.final_ft.lora_rank,
                              static_cast<Real>(cfg.final_ft.lora_alpha),
                              mix64(cfg.seeds.fine_tune, detail::kRftTag, 1));
        fine_tune_lora(lm, train, rft_steps, cfg.final_ft.lr, cfg.final_ft.batch,
                       mix64(cfg.seeds.fine_tune, detail::kRftTag, 2));
        result.model = lora_merge(lm);
    } else {
        result.model = std::move(current);
    }
    result.trace = std::move(trace);
    return result;
}

// Figure-2 style sweep: depth-only, width-only, and free (random-path) runs
// at each ratio, each followed by the same recovery schedule and evaluated
// by held-out perplexity.
struct ExtremesRow {
    double ratio{0.0};
    std::string variant;  // "always-width" | "always-depth" | "free"
    std::uint64_t seed{0};
    std::size_t iterations{0};
    std::size_t final_params{0};
    double ppl{0.0};
};

struct ExtremesReport {
    std::vector<ExtremesRow> rows;
    std::vector<PruneTrace> traces;
};

template <typename Real>
ExtremesReport run_extremes(const TransformerModel<Real>& model, const MopConfig& base_cfg,
                            const Corpus& corpus, const std::vector<double>& ratios,
                            std::size_t n_seeds = 3) {
    require(!ratios.empty(), ErrorKind::config, "run_extremes: no ratios given");
    ExtremesReport report;
    auto run_one = [&](double ratio, ForceBranch force, std::uint64_t seed,
                       const std::string& variant) {
        MopConfig cfg = base_cfg;
        cfg.rho = ratio;
        cfg.force_branch = force;
        if (force == ForceBranch::none) {
            cfg.path_criterion.kind = PathKind::random;
            cfg.path_criterion.seed = seed;
        }
        auto result = mop_prune(model, cfg, corpus);
        ExtremesRow row;
        row.ratio = ratio;
        row.variant = variant;
        row.seed = seed;
        row.iterations = result.trace.rows.size();
        row.final_params = result.trace.final_params;
        row.ppl = eval_ppl(result.model, corpus, cfg.calib.seg_len);
        report.rows.push_back(std::move(row));
        report.traces.push_back(std::move(result.trace));
    };
    for (double ratio : ratios) {
        run_one(ratio, ForceBranch::always_width, 0, "always-width");
        run_one(ratio, ForceBranch::always_depth, 0, "always-depth");
        for (std::size_t s = 1; s <= n_seeds; ++s)
            run_one(ratio, ForceBranch::none, mix64(base_cfg.path_criterion.seed, s), "free");
    }
    return report;
}

}  // namespace mop
