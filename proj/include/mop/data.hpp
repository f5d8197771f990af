#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "mop/errors.hpp"
#include "mop/rng.hpp"
#include "mop/tensor.hpp"

namespace mop {

// Token corpus. Documents are split three ways by position, mirroring the
// three data roles of a pruning run: training (fine-tuning), calibration
// (scoring only), and evaluation (held-out perplexity only).
struct Corpus {
    std::vector<std::vector<TokenId>> docs;
    std::size_t vocab_size{0};
    std::string provenance;

    std::size_t n_docs() const { return docs.size(); }
    std::size_t train_end() const { return docs.size() * 8 / 10; }
    std::size_t calib_end() const { return docs.size() * 9 / 10; }

    std::vector<std::vector<TokenId>> train_docs() const {
        return {docs.begin(), docs.begin() + static_cast<std::ptrdiff_t>(train_end())};
    }
    std::vector<std::vector<TokenId>> calib_docs() const {
        return {docs.begin() + static_cast<std::ptrdiff_t>(train_end()),
                docs.begin() + static_cast<std::ptrdiff_t>(calib_end())};
    }
    std::vector<std::vector<TokenId>> eval_docs() const {
        return {docs.begin() + static_cast<std::ptrdiff_t>(calib_end()), docs.end()};
    }
};

// Frozen scoring data: whole texts for the logit-comparison criteria,
// fixed-length segments for perplexity and activation scoring.
struct CalibSet {
    std::vector<std::vector<TokenId>> texts;
    std::vector<std::vector<TokenId>> segments;
    std::uint64_t seed{0};
};

inline std::uint64_t content_hash(const std::vector<std::vector<TokenId>>& docs) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    auto mixbyte = [&h](std::uint8_t b) {
        h ^= b;
        h *= 0x100000001b3ULL;
    };
    for (const auto& d : docs) {
        for (TokenId t : d)
            for (int s = 0; s < 32; s += 8) mixbyte(static_cast<std::uint8_t>(t >> s));
        mixbyte(0xff);
    }
    return h;
}

inline std::uint64_t content_hash(const CalibSet& c) {
    return mix64(content_hash(c.texts), content_hash(c.segments));
}

namespace detail {

// Per-context categorical distribution of the synthetic Markov source,
// derived lazily from (seed, context): a handful of preferred tokens with
// geometric-ish weights, skewed toward low ids, plus uniform smoothing so
// every token stays reachable.
inline constexpr std::size_t kMarkovPreferred = 8;
inline constexpr double kMarkovSmoothing = 0.1;

inline TokenId markov_step(std::uint64_t table_seed, std::uint64_t context, Rng& stream,
                           std::size_t vocab) {
    if (stream.unit() < kMarkovSmoothing)
        return static_cast<TokenId>(stream.below(vocab));
    Rng ctx_rng(mix64(table_seed, context));
    double weights[kMarkovPreferred];
    TokenId prefs[kMarkovPreferred];
    double total = 0.0;
    for (std::size_t i = 0; i < kMarkovPreferred; ++i) {
        const double u = ctx_rng.unit();
        prefs[i] = static_cast<TokenId>(static_cast<std::size_t>(u * u * static_cast<double>(vocab)));
        weights[i] = 1.0 / static_cast<double>(i + 1);
        total += weights[i];
    }
    double pick = stream.unit() * total;
    for (std::size_t i = 0; i < kMarkovPreferred; ++i) {
        pick -= weights[i];
        if (pick < 0.0) return prefs[i];
    }
    return prefs[kMarkovPreferred - 1];
}

}  // namespace detail

// Deterministic synthetic corpus from a seeded order-k Markov source with a
// fixed random transition structure. A desk-scale stand-in for real text.
inline Corpus gen_corpus(std::uint64_t seed, std::size_t n_docs, std::size_t doc_len,
                         std::size_t vocab_size, int order) {
    require(vocab_size >= 4, ErrorKind::config, "gen_corpus: vocab_size must be >= 4");
    require(order == 1 || order == 2, ErrorKind::config, "gen_corpus: order must be 1 or 2");
    require(n_docs >= 1 && doc_len >= 1, ErrorKind::config,
            "gen_corpus: n_docs and doc_len must be >= 1");
    const std::uint64_t table_seed = mix64(seed, 0x7461626c65ULL);
    Corpus c;
    c.vocab_size = vocab_size;
    c.provenance = "synthetic:seed=" + std::to_string(seed) + ":order=" + std::to_string(order);
    c.docs.reserve(n_docs);
    for (std::size_t d = 0; d < n_docs; ++d) {
        Rng stream(mix64(seed, d));
        std::vector<TokenId> doc;
        doc.reserve(doc_len);
        for (std::size_t t = 0; t < doc_len; ++t) {
            if (t < static_cast<std::size_t>(order)) {
                doc.push_back(static_cast<TokenId>(stream.below(vocab_size)));
                continue;
            }
            std::uint64_t context = static_cast<std::uint64_t>(doc[t - 1]);
            if (order == 2)
                context = context * vocab_size + static_cast<std::uint64_t>(doc[t - 2]);
            doc.push_back(detail::markov_step(table_seed, context, stream, vocab_size));
        }
        c.docs.push_back(std::move(doc));
    }
    return c;
}

// Concatenates documents and tiles fixed-length segments, discarding the
// trailing remainder.
inline std::vector<std::vector<TokenId>> tile_segments(
    const std::vector<std::vector<TokenId>>& docs, std::size_t seg_len) {
    require(seg_len >= 2, ErrorKind::config, "tile_segments: segment length must be >= 2");
    std::vector<std::vector<TokenId>> out;
    std::vector<TokenId> cur;
    cur.reserve(seg_len);
    for (const auto& d : docs) {
        for (TokenId t : d) {
            cur.push_back(t);
            if (cur.size() == seg_len) {
                out.push_back(cur);
                cur.clear();
            }
        }
    }
    return out;
}

// Freezes the scoring data for a run: n_texts documents sampled without
// replacement from the calibration slice, and fixed-length segments tiled
// from the same slice.
inline CalibSet build_calibration(const Corpus& corpus, std::size_t n_texts, std::size_t seg_len,
                                  std::uint64_t seed) {
    auto pool = corpus.calib_docs();
    require(pool.size() >= n_texts, ErrorKind::data,
            "build_calibration: calibration slice has " + std::to_string(pool.size()) +
                " docs, need " + std::to_string(n_texts));
    for (const auto& d : pool)
        require(!d.empty(), ErrorKind::data, "build_calibration: empty document in pool");
    CalibSet cal;
    cal.seed = seed;
    Rng rng(mix64(seed, 0x63616c6962ULL));
    for (std::size_t idx : rng.sample_without_replacement(pool.size(), n_texts))
        cal.texts.push_back(pool[idx]);
    cal.segments = tile_segments(pool, seg_len);
    require(!cal.segments.empty(), ErrorKind::data,
            "build_calibration: calibration slice too small for segment length " +
                std::to_string(seg_len));
    return cal;
}

// Uniform sample without replacement from the training documents, seeded by
// (seed, iteration) so each pruning iteration sees a fresh subset.
inline std::vector<std::vector<TokenId>> sample_tune_subset(const Corpus& corpus, std::size_t size,
                                                            std::uint64_t seed, std::uint64_t t) {
    auto pool = corpus.train_docs();
    require(size <= pool.size(), ErrorKind::data,
            "sample_tune_subset: requested " + std::to_string(size) + " docs from a pool of " +
                std::to_string(pool.size()));
    Rng rng(mix64(seed, t));
    std::vector<std::vector<TokenId>> out;
    out.reserve(size);
    for (std::size_t idx : rng.sample_without_replacement(pool.size(), size))
        out.push_back(pool[idx]);
    return out;
}

// ---------------------------------------------------------------------------
// Corpus file format: "MOPCORP1" magic, then little-endian u32 vocab_size,
// u32 n_docs, and per document u32 length followed by i32 token ids.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                 static_cast<char>(v >> 24)};
    os.write(b, 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    require(static_cast<bool>(is), ErrorKind::io, "corpus: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline void save_corpus(const Corpus& c, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    require(static_cast<bool>(os), ErrorKind::io, "save_corpus: cannot open " + path);
    os.write("MOPCORP1", 8);
    detail::write_u32(os, static_cast<std::uint32_t>(c.vocab_size));
    detail::write_u32(os, static_cast<std::uint32_t>(c.docs.size()));
    for (const auto& d : c.docs) {
        detail::write_u32(os, static_cast<std::uint32_t>(d.size()));
        for (TokenId t : d) detail::write_u32(os, static_cast<std::uint32_t>(t));
    }
    require(static_cast<bool>(os), ErrorKind::io, "save_corpus: write failed for " + path);
}

inline Corpus load_corpus(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(static_cast<bool>(is), ErrorKind::io, "load_corpus: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    require(static_cast<bool>(is) && std::string(magic, 8) == "MOPCORP1", ErrorKind::io,
            "load_corpus: bad magic in " + path);
    Corpus c;
    c.provenance = "file:" + path;
    c.vocab_size = detail::read_u32(is);
    const std::uint32_t n = detail::read_u32(is);
    c.docs.reserve(n);
    for (std::uint32_t d = 0; d < n; ++d) {
        const std::uint32_t len = detail::read_u32(is);
        std::vector<TokenId> doc(len);
        for (auto& t : doc) t = static_cast<TokenId>(detail::read_u32(is));
        c.docs.push_back(std::move(doc));
    }
    return c;
}

// Byte-level identity tokenization of a plain-text file, one document per
// non-empty line. vocab_size is fixed at 256.
inline Corpus ingest_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(static_cast<bool>(is), ErrorKind::io, "ingest_text_file: cannot open " + path);
    Corpus c;
    c.vocab_size = 256;
    c.provenance = "text:" + path;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<TokenId> doc;
        doc.reserve(line.size());
        for (unsigned char b : line) doc.push_back(static_cast<TokenId>(b));
        c.docs.push_back(std::move(doc));
    }
    require(!c.docs.empty(), ErrorKind::data, "ingest_text_file: no non-empty lines in " + path);
    return c;
}

}  // namespace mop
