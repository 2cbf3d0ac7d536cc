#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "rtalign/corpus.hpp"
#include "rtalign/lm.hpp"
#include "rtalign/regress.hpp"

using namespace rtalign;

namespace {

const char* kHeader = "doc_id\tsent_id\tword_index\tword\tgaze_ms\n";

std::string sentence_tsv(const std::string& sent_id, const std::vector<std::string>& words,
                         double rt = 100.0) {
    std::ostringstream out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        out << "d1\t" << sent_id << "\t" << i << "\t" << words[i] << "\t" << rt << "\n";
    }
    return out.str();
}

Corpus corpus_from(const std::string& body) {
    std::istringstream in(std::string(kHeader) + body);
    return parse_corpus(in, MeasurementKind::gaze);
}

// n distinct 5-word sentences for split tests.
Corpus numbered_corpus(std::size_t n) {
    std::ostringstream body;
    for (std::size_t s = 0; s < n; ++s) {
        body << sentence_tsv("s" + std::to_string(s),
                             {"w" + std::to_string(s), "a", "b", "c", "d"});
    }
    return corpus_from(body.str());
}

std::set<std::string> sent_ids(const Corpus& c) {
    std::set<std::string> ids;
    for (const auto& s : c.sentences) ids.insert(s.sent_id());
    return ids;
}

}  // namespace

TEST_CASE("parse_corpus drops sentences shorter than four words") {
    CHECK_THROWS_AS(corpus_from(sentence_tsv("s1", {"one", "two", "three"})), EmptyCorpusError);

    const Corpus c = corpus_from(sentence_tsv("s1", {"one", "two", "three"}) +
                                 sentence_tsv("s2", {"one", "two", "three", "four"}));
    CHECK(c.sentences.size() == 1);
    CHECK(c.sentences[0].sent_id() == "s2");
}

TEST_CASE("parse_corpus removes duplicate word sequences, keeping the first") {
    const Corpus c = corpus_from(sentence_tsv("s1", {"a", "b", "c", "d", "e"}, 50.0) +
                                 sentence_tsv("s2", {"a", "b", "c", "d", "e"}, 70.0));
    CHECK(c.sentences.size() == 1);
    CHECK(c.sentences[0].sent_id() == "s1");
    CHECK(c.sentences[0].units[0].gaze_ms == 50.0);
}

TEST_CASE("parse_corpus rejects malformed input") {
    std::istringstream empty("");
    CHECK_THROWS_AS(parse_corpus(empty, MeasurementKind::gaze), ParseError);

    // wrong column count on line 3
    {
        std::istringstream in(std::string(kHeader) + "d1\ts1\t0\tthe\t100\n" + "d1\ts1\t1\n");
        try {
            parse_corpus(in, MeasurementKind::gaze);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("line 3") != std::string::npos);
        }
    }
    // non-numeric duration
    {
        std::istringstream in(std::string(kHeader) + "d1\ts1\t0\tthe\tfast\n");
        CHECK_THROWS_AS(parse_corpus(in, MeasurementKind::gaze), ParseError);
    }
    // negative duration
    {
        std::istringstream in(std::string(kHeader) + "d1\ts1\t0\tthe\t-5\n");
        CHECK_THROWS_AS(parse_corpus(in, MeasurementKind::gaze), ParseError);
    }
}

TEST_CASE("parse_corpus reads optional measurement columns and code-point lengths") {
    std::istringstream in(
        "doc_id\tsent_id\tword_index\tword\tgaze_ms\ttotal_ms\tfirst_fix_ms\n"
        "d1\ts1\t0\tnaïve\t100\t150\t80\n"
        "d1\ts1\t1\tb\t90\t120\t70\n"
        "d1\ts1\t2\tc\t95\t110\t60\n"
        "d1\ts1\t3\td\t85\t100\t50\n");
    const Corpus c = parse_corpus(in, MeasurementKind::total);
    const UnitRecord& u = c.sentences[0].units[0];
    CHECK(u.length_chars == 5);  // code points, not bytes
    CHECK(u.measurement(MeasurementKind::gaze) == 100.0);
    CHECK(u.measurement(MeasurementKind::total) == 150.0);
    CHECK(u.measurement(MeasurementKind::first_fixation) == 80.0);
}

TEST_CASE("unigram_surprisal from corpus counts") {
    const Corpus c = corpus_from(sentence_tsv("s1", {"the", "cat", "sat", "the"}));
    const UnigramModel model = UnigramModel::from_corpus(c);
    CHECK(unigram_surprisal(model, "the") == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(unigram_surprisal(model, "cat") == doctest::Approx(2.0).epsilon(1e-12));
    CHECK_THROWS_AS(unigram_surprisal(model, "dog"), MissingFrequencyError);
}

TEST_CASE("unigram_surprisal is strictly decreasing in probability") {
    UnigramModel model;
    model.prob = {{"a", 0.7}, {"b", 0.2}, {"c", 0.1}};
    CHECK(unigram_surprisal(model, "a") < unigram_surprisal(model, "b"));
    CHECK(unigram_surprisal(model, "b") < unigram_surprisal(model, "c"));
}

TEST_CASE("UnigramModel::from_tsv validates normalization") {
    std::istringstream good("the\t0.5\ncat\t0.25\nsat\t0.25\n");
    const UnigramModel model = UnigramModel::from_tsv(good);
    CHECK(model.source == UnigramModel::Source::external_table);
    CHECK(unigram_surprisal(model, "the") == doctest::Approx(1.0));

    std::istringstream bad("the\t0.5\ncat\t0.6\n");
    CHECK_THROWS_AS(UnigramModel::from_tsv(bad), ParseError);
}

TEST_CASE("filter_units keeps zero-RT units as context only") {
    Corpus c = corpus_from(sentence_tsv("s1", {"a", "b", "c", "d"}));
    c.sentences[0].units[2].gaze_ms = 0.0;  // word 2 skipped
    const UnigramModel model = UnigramModel::from_corpus(c);
    const auto units = filter_units(c, model);
    CHECK(units.size() == 3);
    for (const auto& u : units) {
        CHECK(u.rt_ms > 0.0);
        CHECK(u.word_index != 2);
    }
    // the sentence itself is untouched: word 2 still precedes word 3
    CHECK(c.sentences[0].units.size() == 4);
}

TEST_CASE("filter_units excludes zero-frequency words and degenerate corpora") {
    Corpus c = corpus_from(sentence_tsv("s1", {"a", "b", "c", "d"}));
    UnigramModel model = UnigramModel::from_corpus(c);
    model.prob.erase("b");  // out of support now
    CHECK(filter_units(c, model).size() == 3);

    for (auto& u : c.sentences[0].units) u.gaze_ms = 0.0;
    CHECK(filter_units(c, UnigramModel::from_corpus(c)).empty());

    Corpus full = corpus_from(sentence_tsv("s1", {"a", "b", "c", "d"}));
    CHECK(filter_units(full, UnigramModel::from_corpus(full)).size() == full.unit_count());
}

TEST_CASE("split_corpus sizes, determinism, and disjointness") {
    const Corpus c = numbered_corpus(100);
    SplitSpec spec;
    spec.master_seed = 42;
    spec.run_seed = 8;
    const auto [train, test] = split_corpus(c, spec);
    CHECK(test.sentences.size() == 40);
    CHECK(train.sentences.size() == 42);  // round(0.7 * 60)

    const auto [train2, test2] = split_corpus(c, spec);
    CHECK(sent_ids(train) == sent_ids(train2));
    CHECK(sent_ids(test) == sent_ids(test2));

    // the test set depends only on master_seed
    SplitSpec other = spec;
    other.run_seed = 64;
    const auto [train3, test3] = split_corpus(c, other);
    CHECK(sent_ids(test) == sent_ids(test3));
    CHECK(sent_ids(train) != sent_ids(train3));

    // no sentence is in both splits
    for (const auto& id : sent_ids(train)) CHECK(sent_ids(test).count(id) == 0);
}

TEST_CASE("split_corpus rejects corpora too small to split") {
    const Corpus c = numbered_corpus(1);
    SplitSpec spec;
    CHECK_THROWS_AS(split_corpus(c, spec), SplitError);
}

namespace {

LMModel tiny_human_lm() {
    Vocabulary vocab = Vocabulary::from_words({"blue", "cat", "dog", "green", "red", "runs",
                                               "sat", "sleeps", "the", "tree"});
    LMConfig config;
    config.context_window = 8;
    config.embed_dim = 8;
    config.n_layers = 1;
    config.ffn_dim = 16;
    config.seed = 7;
    return init_lm(config, vocab);
}

}  // namespace

TEST_CASE("synthesize_corpus with identity link and no noise reproduces surprisal") {
    const LMModel lm = tiny_human_lm();
    LinkCoefficients link;
    link.surprisal = 1.0;
    const Corpus c = synthesize_corpus(lm, link, 0.0, 10, 123);
    CHECK(c.sentences.size() == 10);
    for (const auto& sent : c.sentences) {
        const std::vector<double> s = sentence_surprisals(lm, sent.words());
        REQUIRE(s.size() == sent.units.size());
        for (std::size_t i = 0; i < s.size(); ++i) {
            CHECK(sent.units[i].gaze_ms ==
                  doctest::Approx(std::max(s[i], 1.0)).epsilon(1e-12));
        }
    }
}

TEST_CASE("synthesize_corpus is deterministic in the seed") {
    const LMModel lm = tiny_human_lm();
    LinkCoefficients link{50.0, 12.0, 0.0, 3.0};
    const Corpus a = synthesize_corpus(lm, link, 20.0, 8, 99);
    const Corpus b = synthesize_corpus(lm, link, 20.0, 8, 99);
    REQUIRE(a.sentences.size() == b.sentences.size());
    for (std::size_t i = 0; i < a.sentences.size(); ++i) {
        REQUIRE(a.sentences[i].units.size() == b.sentences[i].units.size());
        for (std::size_t j = 0; j < a.sentences[i].units.size(); ++j) {
            CHECK(a.sentences[i].units[j].word == b.sentences[i].units[j].word);
            CHECK(a.sentences[i].units[j].gaze_ms == b.sentences[i].units[j].gaze_ms);
        }
    }
}

TEST_CASE("noiseless synthetic data is exactly linear under OLS") {
    const LMModel lm = tiny_human_lm();
    LinkCoefficients link{30.0, 5.0, 2.0, 1.0};
    Corpus c = synthesize_corpus(lm, link, 0.0, 12, 5);
    const UnigramModel unigrams = UnigramModel::from_corpus(c);
    attach_unigram_model(c, unigrams);

    std::vector<RegressionRow> rows;
    for (const auto& sent : c.sentences) {
        const std::vector<double> s = sentence_surprisals(lm, sent.words());
        for (std::size_t i = 0; i < sent.units.size(); ++i) {
            const auto& u = sent.units[i];
            if (u.gaze_ms <= 0.0 || !u.unigram_surprisal_bits) continue;
            if (u.gaze_ms == 1.0) continue;  // possibly clipped
            rows.push_back({s[i], *u.unigram_surprisal_bits,
                            static_cast<double>(u.length_chars), u.gaze_ms});
        }
    }
    REQUIRE(rows.size() > 10);
    const RegressionFit fit = ols_fit(build_design_matrix(rows, true));
    CHECK(fit.sigma2 < 1e-16);
    CHECK(fit.beta[0] == doctest::Approx(link.surprisal).epsilon(1e-8));
}

TEST_CASE("consistency: OLS on noisy synthetic rows recovers the link within 3 SE") {
    const LMModel lm = tiny_human_lm();
    LinkCoefficients link{50.0, 12.0, 0.0, 3.0};
    Corpus c = synthesize_corpus(lm, link, 20.0, 60, 11);
    attach_unigram_model(c, UnigramModel::from_corpus(c));

    std::vector<RegressionRow> rows;
    for (const auto& sent : c.sentences) {
        const std::vector<double> s = sentence_surprisals(lm, sent.words());
        for (std::size_t i = 0; i < sent.units.size(); ++i) {
            const auto& u = sent.units[i];
            if (u.gaze_ms <= 0.0 || !u.unigram_surprisal_bits) continue;
            rows.push_back({s[i], *u.unigram_surprisal_bits,
                            static_cast<double>(u.length_chars), u.gaze_ms});
        }
    }
    REQUIRE(rows.size() > 50);
    const DesignMatrix dm = build_design_matrix(rows, true);
    const RegressionFit fit = ols_fit(dm);

    // standard errors from sigma2_unbiased * diag((X^T X)^{-1})
    const std::size_t n = dm.n, d = dm.d;
    std::vector<double> xtx(d * d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                xtx[i * d + j] += dm.x[r * d + i] * dm.x[r * d + j];
    const double sigma2_unbiased =
        fit.sigma2 * static_cast<double>(n) / static_cast<double>(n - d);
    const std::vector<double> truth = {link.surprisal, link.unigram, link.length,
                                       link.intercept};
    // invert X^T X column by column via Gauss-Jordan
    std::vector<double> inv(d * d, 0.0), a = xtx;
    for (std::size_t i = 0; i < d; ++i) inv[i * d + i] = 1.0;
    for (std::size_t col = 0; col < d; ++col) {
        const double piv = a[col * d + col];
        for (std::size_t j = 0; j < d; ++j) {
            a[col * d + j] /= piv;
            inv[col * d + j] /= piv;
        }
        for (std::size_t r = 0; r < d; ++r) {
            if (r == col) continue;
            const double f = a[r * d + col];
            for (std::size_t j = 0; j < d; ++j) {
                a[r * d + j] -= f * a[col * d + j];
                inv[r * d + j] -= f * inv[col * d + j];
            }
        }
    }
    for (std::size_t i = 0; i < d; ++i) {
        const double se = std::sqrt(sigma2_unbiased * inv[i * d + i]);
        CHECK(std::abs(fit.beta[i] - truth[i]) < 3.0 * se);
    }
}
