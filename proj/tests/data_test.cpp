#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <set>

#include "mop/data.hpp"
#include "oracles.hpp"

using namespace mop;

namespace {
std::string file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(static_cast<bool>(is));
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}
}  // namespace

TEST_CASE("gen_corpus is a pure function of its seed") {
    auto a = gen_corpus(40, 60, 32, 16, 1);
    auto b = gen_corpus(40, 60, 32, 16, 1);
    REQUIRE(a.docs == b.docs);
    auto c = gen_corpus(41, 60, 32, 16, 1);
    REQUIRE(a.docs != c.docs);

    const std::string p1 = "/tmp/mop_corpus_a.bin", p2 = "/tmp/mop_corpus_b.bin";
    save_corpus(a, p1);
    save_corpus(b, p2);
    REQUIRE(file_bytes(p1) == file_bytes(p2));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("gen_corpus validates parameters") {
    REQUIRE_THROWS_MATCHES(gen_corpus(1, 4, 8, 3, 1), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::config;
                           }));
    REQUIRE_THROWS_AS(gen_corpus(1, 4, 8, 16, 3), Error);
    REQUIRE_THROWS_AS(gen_corpus(1, 0, 8, 16, 1), Error);
}

TEST_CASE("generated stream has non-uniform unigram statistics") {
    auto corpus = gen_corpus(7, 64, 256, 64, 1);
    const double h = oracles::unigram_entropy(corpus.docs, corpus.vocab_size);
    REQUIRE(h < std::log(64.0) - 0.05);
    REQUIRE(h > 1.0);  // not degenerate either

    auto order2 = gen_corpus(7, 64, 256, 64, 2);
    REQUIRE(oracles::unigram_entropy(order2.docs, 64) < std::log(64.0) - 0.05);
}

TEST_CASE("corpus splits are disjoint and sized 80/10/10") {
    auto corpus = gen_corpus(3, 100, 16, 16, 1);
    REQUIRE(corpus.train_docs().size() == 80);
    REQUIRE(corpus.calib_docs().size() == 10);
    REQUIRE(corpus.eval_docs().size() == 10);
}

TEST_CASE("build_calibration freezes its content") {
    auto corpus = gen_corpus(9, 400, 48, 32, 1);
    auto a = build_calibration(corpus, 16, 96, 5);
    auto b = build_calibration(corpus, 16, 96, 5);
    REQUIRE(a.texts == b.texts);
    REQUIRE(a.segments == b.segments);
    REQUIRE(content_hash(a) == content_hash(b));
    auto c = build_calibration(corpus, 16, 96, 6);
    REQUIRE(content_hash(a) != content_hash(c));

    REQUIRE(a.texts.size() == 16);
    for (const auto& seg : a.segments) REQUIRE(seg.size() == 96);
    // Segments tile the calibration slice, discarding the remainder.
    const std::size_t calib_tokens = 40 * 48;
    REQUIRE(a.segments.size() == calib_tokens / 96);

    // Texts come from the calibration slice, never from train or eval docs.
    std::set<std::vector<TokenId>> slice;
    for (const auto& d : corpus.calib_docs()) slice.insert(d);
    for (const auto& t : a.texts) REQUIRE(slice.count(t) == 1);
}

TEST_CASE("build_calibration rejects undersized pools") {
    auto corpus = gen_corpus(9, 50, 16, 16, 1);  // calibration slice: 5 docs
    REQUIRE_THROWS_MATCHES(build_calibration(corpus, 6, 8, 1), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::data;
                           }));
}

TEST_CASE("sample_tune_subset") {
    auto corpus = gen_corpus(2, 50, 8, 16, 1);  // train split: 40 docs

    auto whole = sample_tune_subset(corpus, 40, 11, 1);
    REQUIRE(whole.size() == 40);
    std::set<std::vector<TokenId>> train;
    for (const auto& d : corpus.train_docs()) train.insert(d);
    for (const auto& d : whole) {
        REQUIRE(train.count(d) == 1);
        REQUIRE_FALSE(d.empty());
    }

    auto t1 = sample_tune_subset(corpus, 10, 11, 1);
    auto t1_again = sample_tune_subset(corpus, 10, 11, 1);
    auto t2 = sample_tune_subset(corpus, 10, 11, 2);
    REQUIRE(t1 == t1_again);
    REQUIRE(t1 != t2);

    REQUIRE_THROWS_MATCHES(sample_tune_subset(corpus, 41, 11, 1), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::data;
                           }));
}

TEST_CASE("tile_segments discards the trailing remainder") {
    std::vector<std::vector<TokenId>> docs{{1, 2, 3}, {4, 5, 6, 7}};
    auto segs = tile_segments(docs, 3);
    REQUIRE(segs.size() == 2);
    REQUIRE(segs[0] == std::vector<TokenId>{1, 2, 3});
    REQUIRE(segs[1] == std::vector<TokenId>{4, 5, 6});
}

TEST_CASE("corpus file round trip") {
    auto corpus = gen_corpus(8, 20, 12, 24, 2);
    const std::string path = "/tmp/mop_corpus_rt.bin";
    save_corpus(corpus, path);
    auto loaded = load_corpus(path);
    REQUIRE(loaded.docs == corpus.docs);
    REQUIRE(loaded.vocab_size == corpus.vocab_size);
    std::remove(path.c_str());

    REQUIRE_THROWS_MATCHES(load_corpus("/tmp/does_not_exist_mop.bin"), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::io;
                           }));
}

TEST_CASE("plain-text ingestion tokenizes bytes per non-empty line") {
    const std::string path = "/tmp/mop_ingest.txt";
    {
        std::ofstream os(path, std::ios::binary);
        os << "ab\n\ncd e\n";
    }
    auto corpus = ingest_text_file(path);
    REQUIRE(corpus.vocab_size == 256);
    REQUIRE(corpus.docs.size() == 2);
    REQUIRE(corpus.docs[0] == std::vector<TokenId>{'a', 'b'});
    REQUIRE(corpus.docs[1] == std::vector<TokenId>{'c', 'd', ' ', 'e'});
    std::remove(path.c_str());
}
