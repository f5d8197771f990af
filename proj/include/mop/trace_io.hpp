#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mop/engine.hpp"
#include "mop/errors.hpp"

namespace mop {

namespace detail {

// Shortest round-trip-exact decimal form.
inline std::string fmt_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    require(res.ec == std::errc{} && res.ptr == s.data() + s.size(), ErrorKind::data,
            "trace csv: bad number '" + s + "'");
    return v;
}

inline std::uint64_t parse_u64(const std::string& s) {
    std::uint64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    require(res.ec == std::errc{} && res.ptr == s.data() + s.size(), ErrorKind::data,
            "trace csv: bad integer '" + s + "'");
    return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// MopConfig <-> JSON. Every field has a default, so a config file only needs
// the fields it overrides.
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json config_to_json(const MopConfig& cfg) {
    nlohmann::ordered_json j;
    j["rho"] = cfg.rho;
    j["path_criterion"] = {{"kind", path_kind_name(cfg.path_criterion.kind)},
                           {"seed", cfg.path_criterion.seed}};
    j["seeds"] = {{"path", cfg.seeds.path},
                  {"tune_subset", cfg.seeds.tune_subset},
                  {"fine_tune", cfg.seeds.fine_tune}};
    j["intermediate_ft"] = {{"lr", cfg.intermediate_ft.lr}, {"batch", cfg.intermediate_ft.batch}};
    j["final_ft"] = {{"lora_rank", cfg.final_ft.lora_rank},
                     {"lora_alpha", cfg.final_ft.lora_alpha},
                     {"lr", cfg.final_ft.lr},
                     {"batch", cfg.final_ft.batch},
                     {"epochs", cfg.final_ft.epochs}};
    j["calib"] = {{"n_texts", cfg.calib.n_texts},
                  {"seg_len", cfg.calib.seg_len},
                  {"seed", cfg.calib.seed}};
    j["force_branch"] = force_branch_name(cfg.force_branch);
    j["candidate_threads"] = cfg.candidate_threads;
    return j;
}

inline PathKind path_kind_from_name(const std::string& name) {
    if (name == "cosine") return PathKind::cosine;
    if (name == "kl") return PathKind::kl;
    if (name == "ppl") return PathKind::ppl;
    if (name == "random") return PathKind::random;
    fail(ErrorKind::config, "unknown path criterion '" + name + "'");
}

inline ForceBranch force_branch_from_name(const std::string& name) {
    if (name == "none") return ForceBranch::none;
    if (name == "always-width") return ForceBranch::always_width;
    if (name == "always-depth") return ForceBranch::always_depth;
    fail(ErrorKind::config, "unknown force_branch '" + name + "'");
}

inline MopConfig config_from_json(const nlohmann::json& j) {
    MopConfig cfg;
    cfg.rho = j.value("rho", cfg.rho);
    if (j.contains("path_criterion")) {
        const auto& p = j.at("path_criterion");
        cfg.path_criterion.kind =
            path_kind_from_name(p.value("kind", std::string(path_kind_name(cfg.path_criterion.kind))));
        cfg.path_criterion.seed = p.value("seed", cfg.path_criterion.seed);
    }
    if (j.contains("seeds")) {
        const auto& s = j.at("seeds");
        cfg.seeds.path = s.value("path", cfg.seeds.path);
        cfg.seeds.tune_subset = s.value("tune_subset", cfg.seeds.tune_subset);
        cfg.seeds.fine_tune = s.value("fine_tune", cfg.seeds.fine_tune);
    }
    if (j.contains("intermediate_ft")) {
        const auto& f = j.at("intermediate_ft");
        cfg.intermediate_ft.lr = f.value("lr", cfg.intermediate_ft.lr);
        cfg.intermediate_ft.batch = f.value("batch", cfg.intermediate_ft.batch);
    }
    if (j.contains("final_ft")) {
        const auto& f = j.at("final_ft");
        cfg.final_ft.lora_rank = f.value("lora_rank", cfg.final_ft.lora_rank);
        cfg.final_ft.lora_alpha = f.value("lora_alpha", cfg.final_ft.lora_alpha);
        cfg.final_ft.lr = f.value("lr", cfg.final_ft.lr);
        cfg.final_ft.batch = f.value("batch", cfg.final_ft.batch);
        cfg.final_ft.epochs = f.value("epochs", cfg.final_ft.epochs);
    }
    if (j.contains("calib")) {
        const auto& c = j.at("calib");
        cfg.calib.n_texts = c.value("n_texts", cfg.calib.n_texts);
        cfg.calib.seg_len = c.value("seg_len", cfg.calib.seg_len);
        cfg.calib.seed = c.value("seed", cfg.calib.seed);
    }
    cfg.force_branch =
        force_branch_from_name(j.value("force_branch", std::string(force_branch_name(cfg.force_branch))));
    cfg.candidate_threads = j.value("candidate_threads", cfg.candidate_threads);
    return cfg;
}

// ---------------------------------------------------------------------------
// PruneTrace <-> JSON (full fidelity, embeds the resolved config).
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json trace_to_json(const PruneTrace& trace) {
    nlohmann::ordered_json j;
    j["initial_params"] = trace.initial_params;
    j["final_params"] = trace.final_params;
    j["rho"] = trace.rho;
    j["p_min"] = trace.p_min;
    j["config"] = config_to_json(trace.config);
    auto rows = nlohmann::ordered_json::array();
    for (const auto& r : trace.rows) {
        nlohmann::ordered_json row;
        row["t"] = r.t;
        row["params_before"] = r.params_before;
        row["layer_idx"] = r.layer_idx;
        row["p_layer"] = r.p_layer;
        row["c_t"] = r.c_t;
        if (r.s_width) row["s_width"] = *r.s_width;
        if (r.s_layer) row["s_layer"] = *r.s_layer;
        row["choice"] = branch_name(r.chosen);
        row["forced_width_guard"] = r.forced_width_guard;
        row["heads_removed"] = r.heads_removed;
        row["neurons_removed"] = r.neurons_removed;
        row["head_indices"] = r.head_indices;
        row["neuron_indices"] = r.neuron_indices;
        row["params_after"] = r.params_after;
        rows.push_back(std::move(row));
    }
    j["rows"] = std::move(rows);
    return j;
}

inline PruneTrace trace_from_json(const nlohmann::json& j) {
    PruneTrace trace;
    trace.initial_params = j.at("initial_params").get<std::size_t>();
    trace.final_params = j.at("final_params").get<std::size_t>();
    trace.rho = j.at("rho").get<double>();
    trace.p_min = j.at("p_min").get<double>();
    trace.config = config_from_json(j.at("config"));
    for (const auto& row : j.at("rows")) {
        TraceRow r;
        r.t = row.at("t").get<std::size_t>();
        r.params_before = row.at("params_before").get<std::size_t>();
        r.layer_idx = row.at("layer_idx").get<std::size_t>();
        r.p_layer = row.at("p_layer").get<std::size_t>();
        r.c_t = row.at("c_t").get<double>();
        if (row.contains("s_width")) r.s_width = row.at("s_width").get<double>();
        if (row.contains("s_layer")) r.s_layer = row.at("s_layer").get<double>();
        r.chosen = row.at("choice").get<std::string>() == "width" ? Branch::width : Branch::depth;
        r.forced_width_guard = row.at("forced_width_guard").get<bool>();
        r.heads_removed = row.at("heads_removed").get<std::vector<std::size_t>>();
        r.neurons_removed = row.at("neurons_removed").get<std::vector<std::size_t>>();
        r.head_indices = row.at("head_indices").get<std::vector<std::vector<std::size_t>>>();
        r.neuron_indices = row.at("neuron_indices").get<std::vector<std::vector<std::size_t>>>();
        r.params_after = row.at("params_after").get<std::size_t>();
        trace.rows.push_back(std::move(r));
    }
    return trace;
}

// ---------------------------------------------------------------------------
// Trace CSV: fixed column order, one row per iteration. Absent scores are
// empty cells; doubles use their shortest exact form.
// ---------------------------------------------------------------------------

inline constexpr const char* kTraceCsvHeader =
    "t,params_before,layer_idx,p_layer,c_t,s_width,s_layer,choice,params_after";

inline std::string trace_to_csv(const PruneTrace& trace) {
    std::string out = kTraceCsvHeader;
    out += '\n';
    for (const auto& r : trace.rows) {
        out += std::to_string(r.t);
        out += ',' + std::to_string(r.params_before);
        out += ',' + std::to_string(r.layer_idx);
        out += ',' + std::to_string(r.p_layer);
        out += ',' + detail::fmt_double(r.c_t);
        out += ',';
        if (r.s_width) out += detail::fmt_double(*r.s_width);
        out += ',';
        if (r.s_layer) out += detail::fmt_double(*r.s_layer);
        out += ',';
        out += branch_name(r.chosen);
        out += ',' + std::to_string(r.params_after);
        out += '\n';
    }
    return out;
}

inline std::vector<TraceRow> trace_rows_from_csv(const std::string& csv) {
    std::istringstream is(csv);
    std::string line;
    require(static_cast<bool>(std::getline(is, line)) && line == kTraceCsvHeader, ErrorKind::data,
            "trace csv: missing or unexpected header");
    std::vector<TraceRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto cells = detail::split_csv_line(line);
        require(cells.size() == 9, ErrorKind::data, "trace csv: expected 9 columns");
        TraceRow r;
        r.t = detail::parse_u64(cells[0]);
        r.params_before = detail::parse_u64(cells[1]);
        r.layer_idx = detail::parse_u64(cells[2]);
        r.p_layer = detail::parse_u64(cells[3]);
        r.c_t = detail::parse_double(cells[4]);
        if (!cells[5].empty()) r.s_width = detail::parse_double(cells[5]);
        if (!cells[6].empty()) r.s_layer = detail::parse_double(cells[6]);
        require(cells[7] == "width" || cells[7] == "depth", ErrorKind::data,
                "trace csv: bad choice '" + cells[7] + "'");
        r.chosen = cells[7] == "width" ? Branch::width : Branch::depth;
        r.params_after = detail::parse_u64(cells[8]);
        rows.push_back(std::move(r));
    }
    return rows;
}

// Human-readable per-iteration table.
inline std::string render_trace(const PruneTrace& trace) {
    std::ostringstream os;
    os << "MoP trace: rho=" << trace.rho << "  initial=" << trace.initial_params
       << "  target<=" << static_cast<std::size_t>(trace.p_min)
       << "  final=" << trace.final_params << "\n";
    os << std::left << std::setw(4) << "t" << std::setw(15) << "params_before" << std::setw(7)
       << "l*" << std::setw(10) << "p_layer" << std::setw(11) << "c_t" << std::setw(13)
       << "s_width" << std::setw(13) << "s_layer" << std::setw(7) << "choice" << std::setw(14)
       << "params_after" << "\n";
    for (const auto& r : trace.rows) {
        os << std::left << std::setw(4) << r.t << std::setw(15) << r.params_before << std::setw(7)
           << r.layer_idx << std::setw(10) << r.p_layer << std::setw(11) << std::setprecision(5)
           << r.c_t;
        auto cell = [&](const std::optional<double>& v) {
            std::ostringstream c;
            if (v) c << std::setprecision(6) << *v;
            else c << "-";
            os << std::setw(13) << c.str();
        };
        cell(r.s_width);
        cell(r.s_layer);
        os << std::setw(7) << branch_name(r.chosen) << std::setw(14) << r.params_after;
        if (r.forced_width_guard) os << " (width forced: layer floor)";
        os << "\n";
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Extremes table.
// ---------------------------------------------------------------------------

inline constexpr const char* kExtremesCsvHeader = "ratio,variant,seed,iterations,final_params,ppl";

inline std::string extremes_to_csv(const ExtremesReport& report) {
    std::string out = kExtremesCsvHeader;
    out += '\n';
    for (const auto& r : report.rows) {
        out += detail::fmt_double(r.ratio);
        out += ',' + r.variant;
        out += ',' + std::to_string(r.seed);
        out += ',' + std::to_string(r.iterations);
        out += ',' + std::to_string(r.final_params);
        out += ',' + detail::fmt_double(r.ppl);
        out += '\n';
    }
    return out;
}

inline std::string render_extremes(const ExtremesReport& report) {
    std::ostringstream os;
    os << std::left << std::setw(8) << "ratio" << std::setw(15) << "variant" << std::setw(12)
       << "seed" << std::setw(7) << "iters" << std::setw(14) << "final_params" << std::setw(12)
       << "heldout_ppl" << "\n";
    for (const auto& r : report.rows)
        os << std::left << std::setw(8) << r.ratio << std::setw(15) << r.variant << std::setw(12)
           << r.seed << std::setw(7) << r.iterations << std::setw(14) << r.final_params
           << std::setw(12) << std::setprecision(6) << r.ppl << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Small file helpers.
// ---------------------------------------------------------------------------

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    require(static_cast<bool>(os), ErrorKind::io, "cannot open " + path + " for writing");
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    require(static_cast<bool>(os), ErrorKind::io, "write failed for " + path);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(static_cast<bool>(is), ErrorKind::io, "cannot open " + path);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

}  // namespace mop
