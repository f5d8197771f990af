// Command-line surface for the MoP pruning engine: corpus generation, dense
// training, pruning, evaluation, the latency benchmark, the extremes sweep,
// and trace reporting. All randomness flows from explicit --seed flags.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mop/mop.hpp"

namespace {

struct ModelDims {
    std::size_t layers = 12;
    std::size_t d_model = 128;
    std::size_t heads = 8;
    std::size_t d_ff = 344;
    std::size_t vocab = 256;
    std::size_t max_seq = 512;

    mop::ModelConfig to_config() const {
        return mop::ModelConfig{.n_layers = layers,
                                .d_model = d_model,
                                .n_heads = heads,
                                .d_head = d_model / heads,
                                .d_ff = d_ff,
                                .vocab_size = vocab,
                                .max_seq_len = max_seq};
    }
};

void add_dim_flags(CLI::App* cmd, ModelDims& dims) {
    cmd->add_option("--layers", dims.layers, "Decoder layer count");
    cmd->add_option("--d-model", dims.d_model, "Residual stream width");
    cmd->add_option("--heads", dims.heads, "Attention head count");
    cmd->add_option("--d-ff", dims.d_ff, "MLP intermediate width");
    cmd->add_option("--vocab", dims.vocab, "Vocabulary size");
    cmd->add_option("--max-seq", dims.max_seq, "Maximum sequence length");
}

// Derives the per-role seeds of a run from one master seed.
void apply_master_seed(mop::MopConfig& cfg, std::uint64_t seed) {
    cfg.seeds.path = mop::mix64(seed, 1);
    cfg.seeds.tune_subset = mop::mix64(seed, 2);
    cfg.seeds.fine_tune = mop::mix64(seed, 3);
    cfg.calib.seed = mop::mix64(seed, 4);
}

mop::MopConfig load_config(const std::string& path) {
    if (path.empty()) return mop::MopConfig{};
    return mop::config_from_json(nlohmann::json::parse(mop::read_text_file(path)));
}

// --criterion also accepts the forced single-dimension variants.
void apply_criterion(mop::MopConfig& cfg, const std::string& name) {
    if (name == "always-width" || name == "always-depth") {
        cfg.force_branch = mop::force_branch_from_name(name);
    } else {
        cfg.path_criterion.kind = mop::path_kind_from_name(name);
        cfg.force_branch = mop::ForceBranch::none;
    }
}

std::vector<double> parse_ratios(const std::string& spec) {
    std::vector<double> out;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MoP: iterative depth/width structured pruning for toy decoder transformers"};
    app.require_subcommand(1);

    // ---- gen-data ----
    auto* gen = app.add_subcommand("gen-data", "Generate or ingest a token corpus");
    std::uint64_t gen_seed = 1;
    std::size_t gen_docs = 512, gen_doc_len = 64, gen_vocab = 256;
    int gen_order = 1;
    std::string gen_out, gen_from_file;
    gen->add_option("--seed", gen_seed, "Corpus seed");
    gen->add_option("--docs", gen_docs, "Document count");
    gen->add_option("--doc-len", gen_doc_len, "Tokens per document");
    gen->add_option("--vocab", gen_vocab, "Vocabulary size");
    gen->add_option("--order", gen_order, "Markov order (1 or 2)");
    gen->add_option("--from-file", gen_from_file, "Ingest a plain-text file instead");
    gen->add_option("--out", gen_out, "Output corpus path")->required();

    // ---- train ----
    auto* train = app.add_subcommand("train", "Train a dense toy model on the corpus");
    std::string train_corpus, train_out;
    std::size_t train_steps = 500, train_batch = 8, train_seg_len = 256;
    double train_lr = 1e-3;
    std::uint64_t train_seed = 1;
    ModelDims train_dims;
    train->add_option("--corpus", train_corpus, "Corpus path")->required();
    train->add_option("--out", train_out, "Output checkpoint path")->required();
    train->add_option("--steps", train_steps, "Optimizer steps");
    train->add_option("--batch", train_batch, "Batch size (documents)");
    train->add_option("--lr", train_lr, "Learning rate");
    train->add_option("--seed", train_seed, "Init and batching seed");
    train->add_option("--seg-len", train_seg_len, "Held-out evaluation segment length");
    add_dim_flags(train, train_dims);

    // ---- prune ----
    auto* prune = app.add_subcommand("prune", "Run MoP pruning on a checkpoint");
    std::string prune_model, prune_corpus, prune_out, prune_cfg_path, prune_criterion;
    std::string prune_trace_json, prune_trace_csv;
    std::optional<double> prune_rho;
    std::optional<double> prune_rft_epochs;
    std::optional<std::uint64_t> prune_seed;
    std::optional<std::size_t> prune_threads, prune_calib_texts, prune_calib_seg, prune_lora_rank;
    std::optional<double> prune_lora_alpha;
    prune->add_option("--model", prune_model, "Input checkpoint")->required();
    prune->add_option("--corpus", prune_corpus, "Corpus path")->required();
    prune->add_option("--out", prune_out, "Output checkpoint")->required();
    prune->add_option("--config", prune_cfg_path, "JSON config file (defaults apply)");
    prune->add_option("--rho", prune_rho, "Target compression ratio in (0,1)");
    prune->add_option("--criterion", prune_criterion,
                      "cosine|kl|ppl|random|always-width|always-depth");
    prune->add_option("--seed", prune_seed, "Master seed (derives all run seeds)");
    prune->add_option("--rft-epochs", prune_rft_epochs, "Recovery fine-tuning epochs");
    prune->add_option("--threads", prune_threads, "Candidate threads (1 or 2)");
    prune->add_option("--calib-texts", prune_calib_texts, "Calibration text count");
    prune->add_option("--calib-seg-len", prune_calib_seg, "Calibration segment length");
    prune->add_option("--lora-rank", prune_lora_rank, "Recovery adapter rank");
    prune->add_option("--lora-alpha", prune_lora_alpha, "Recovery adapter alpha");
    prune->add_option("--trace-json", prune_trace_json, "Write the full trace as JSON");
    prune->add_option("--trace-csv", prune_trace_csv, "Write the fixed-column trace CSV");

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "Held-out perplexity of a checkpoint");
    std::string eval_model, eval_corpus;
    std::size_t eval_seg_len = 256;
    eval->add_option("--model", eval_model, "Checkpoint path")->required();
    eval->add_option("--corpus", eval_corpus, "Corpus path")->required();
    eval->add_option("--seg-len", eval_seg_len, "Evaluation segment length");

    // ---- bench ----
    auto* bench = app.add_subcommand("bench", "Autoregressive latency benchmark");
    std::string bench_model, bench_dense, bench_json;
    mop::BenchProtocol protocol;
    bench->add_option("--model", bench_model, "Checkpoint path")->required();
    bench->add_option("--dense", bench_dense, "Dense baseline checkpoint (for speedup)");
    bench->add_option("--prompt-len", protocol.prompt_len, "Prompt tokens");
    bench->add_option("--gen-len", protocol.gen_len, "Tokens to generate");
    bench->add_option("--runs", protocol.runs, "Total runs");
    bench->add_option("--warmup", protocol.warmup, "Discarded warm-up runs");
    bench->add_option("--json", bench_json, "Write the report as JSON");

    // ---- extremes ----
    auto* extremes = app.add_subcommand(
        "extremes", "Depth-only vs width-only vs free MoP sweep with held-out perplexity");
    std::string ex_model, ex_corpus, ex_out_dir, ex_cfg_path;
    std::string ex_ratios = "0.1,0.2,0.3,0.4";
    std::size_t ex_seeds = 3;
    std::optional<std::uint64_t> ex_seed;
    std::optional<double> ex_rft_epochs;
    std::optional<std::size_t> ex_calib_texts, ex_calib_seg;
    extremes->add_option("--model", ex_model, "Dense checkpoint")->required();
    extremes->add_option("--corpus", ex_corpus, "Corpus path")->required();
    extremes->add_option("--config", ex_cfg_path, "JSON config file");
    extremes->add_option("--ratios", ex_ratios, "Comma-separated compression ratios");
    extremes->add_option("--seeds", ex_seeds, "Random-path seeds per ratio");
    extremes->add_option("--seed", ex_seed, "Master seed");
    extremes->add_option("--rft-epochs", ex_rft_epochs, "Recovery epochs per run");
    extremes->add_option("--calib-texts", ex_calib_texts, "Calibration text count");
    extremes->add_option("--calib-seg-len", ex_calib_seg, "Calibration segment length");
    extremes->add_option("--out-dir", ex_out_dir, "Directory for CSV and traces")->required();

    // ---- report ----
    auto* report = app.add_subcommand("report", "Render a trace JSON as a table and CSV");
    std::string report_trace, report_csv;
    report->add_option("--trace-json", report_trace, "Trace JSON path")->required();
    report->add_option("--csv", report_csv, "Also write the fixed-column CSV");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            mop::Corpus corpus = gen_from_file.empty()
                                     ? mop::gen_corpus(gen_seed, gen_docs, gen_doc_len, gen_vocab,
                                                       gen_order)
                                     : mop::ingest_text_file(gen_from_file);
            mop::save_corpus(corpus, gen_out);
            std::cout << "corpus: docs=" << corpus.n_docs() << " vocab=" << corpus.vocab_size
                      << " provenance=" << corpus.provenance << " -> " << gen_out << "\n";
        } else if (*train) {
            auto corpus = mop::load_corpus(train_corpus);
            auto cfg = train_dims.to_config();
            mop::require(cfg.vocab_size >= corpus.vocab_size, mop::ErrorKind::config,
                         "train: model vocab smaller than corpus vocab");
            auto model = mop::init_model<float>(cfg, train_seed);
            mop::FineTuneStats stats;
            model = mop::fine_tune(std::move(model), corpus.train_docs(), train_steps, train_lr,
                                   train_batch, mop::mix64(train_seed, 0x747261696eULL), &stats);
            mop::save_checkpoint(model, train_out);
            std::cout << "train: steps=" << train_steps << " first_loss=" << stats.first_loss
                      << " last_loss=" << stats.last_loss
                      << " heldout_ppl=" << mop::eval_ppl(model, corpus, train_seg_len) << " -> "
                      << train_out << "\n";
        } else if (*prune) {
            auto corpus = mop::load_corpus(prune_corpus);
            auto model = mop::load_checkpoint(prune_model);
            auto cfg = load_config(prune_cfg_path);
            if (prune_seed) apply_master_seed(cfg, *prune_seed);
            if (prune_rho) cfg.rho = *prune_rho;
            if (!prune_criterion.empty()) apply_criterion(cfg, prune_criterion);
            if (prune_rft_epochs) cfg.final_ft.epochs = *prune_rft_epochs;
            if (prune_threads) cfg.candidate_threads = *prune_threads;
            if (prune_calib_texts) cfg.calib.n_texts = *prune_calib_texts;
            if (prune_calib_seg) cfg.calib.seg_len = *prune_calib_seg;
            if (prune_lora_rank) cfg.final_ft.lora_rank = *prune_lora_rank;
            if (prune_lora_alpha) cfg.final_ft.lora_alpha = *prune_lora_alpha;

            auto result = mop::mop_prune(model, cfg, corpus);
            mop::save_checkpoint(result.model, prune_out);
            if (!prune_trace_json.empty())
                mop::write_text_file(prune_trace_json, mop::trace_to_json(result.trace).dump(2));
            if (!prune_trace_csv.empty())
                mop::write_text_file(prune_trace_csv, mop::trace_to_csv(result.trace));
            std::cout << mop::render_trace(result.trace);
            std::cout << "pruned: " << result.trace.initial_params << " -> "
                      << result.trace.final_params << " params ("
                      << (1.0 -
                          static_cast<double>(result.trace.final_params) /
                              static_cast<double>(result.trace.initial_params)) *
                             100.0
                      << "% removed) -> " << prune_out << "\n";
        } else if (*eval) {
            auto corpus = mop::load_corpus(eval_corpus);
            auto model = mop::load_checkpoint(eval_model);
            std::cout << "eval: params=" << mop::total_params(model)
                      << " heldout_ppl=" << mop::eval_ppl(model, corpus, eval_seg_len) << "\n";
        } else if (*bench) {
            auto model = mop::load_checkpoint(bench_model);
            auto report_pruned = mop::latency_bench(model, protocol);
            std::cout << "bench: runs=" << protocol.runs << " warmup=" << protocol.warmup
                      << " retained=" << report_pruned.retained_runs()
                      << " mean_s=" << report_pruned.mean_retained
                      << " stddev_s=" << report_pruned.stddev_retained
                      << " flops_per_token=" << report_pruned.flops_per_token << "\n";
            nlohmann::ordered_json j;
            j["runs_s"] = report_pruned.run_seconds;
            j["warmup"] = report_pruned.warmup;
            j["mean_s"] = report_pruned.mean_retained;
            j["stddev_s"] = report_pruned.stddev_retained;
            j["tokens_generated"] = report_pruned.tokens_generated;
            j["flops_per_token"] = report_pruned.flops_per_token;
            if (!bench_dense.empty()) {
                auto dense_report = mop::latency_bench(mop::load_checkpoint(bench_dense), protocol);
                const double s = mop::speedup(dense_report, report_pruned);
                std::cout << "dense_mean_s=" << dense_report.mean_retained << " speedup=" << s
                          << "x\n";
                j["dense_mean_s"] = dense_report.mean_retained;
                j["speedup"] = s;
            }
            if (!bench_json.empty()) mop::write_text_file(bench_json, j.dump(2));
        } else if (*extremes) {
            auto corpus = mop::load_corpus(ex_corpus);
            auto model = mop::load_checkpoint(ex_model);
            auto cfg = load_config(ex_cfg_path);
            if (ex_seed) apply_master_seed(cfg, *ex_seed);
            if (ex_rft_epochs) cfg.final_ft.epochs = *ex_rft_epochs;
            if (ex_calib_texts) cfg.calib.n_texts = *ex_calib_texts;
            if (ex_calib_seg) cfg.calib.seg_len = *ex_calib_seg;
            auto ratios = parse_ratios(ex_ratios);
            auto rep = mop::run_extremes(model, cfg, corpus, ratios, ex_seeds);
            std::filesystem::create_directories(ex_out_dir);
            mop::write_text_file(ex_out_dir + "/extremes.csv", mop::extremes_to_csv(rep));
            for (std::size_t i = 0; i < rep.traces.size(); ++i) {
                const auto& row = rep.rows[i];
                std::ostringstream name;
                name << ex_out_dir << "/trace_" << row.ratio << "_" << row.variant << "_"
                     << row.seed << ".json";
                mop::write_text_file(name.str(), mop::trace_to_json(rep.traces[i]).dump(2));
            }
            std::cout << mop::render_extremes(rep);
            std::cout << "extremes: " << rep.rows.size() << " runs -> " << ex_out_dir << "\n";
        } else if (*report) {
            auto trace = mop::trace_from_json(nlohmann::json::parse(mop::read_text_file(report_trace)));
            std::cout << mop::render_trace(trace);
            if (!report_csv.empty()) mop::write_text_file(report_csv, mop::trace_to_csv(trace));
        }
    } catch (const mop::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
