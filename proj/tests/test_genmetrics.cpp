#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "doctest.h"
#include "rtalign/genmetrics.hpp"
#include "rtalign/rng.hpp"

using namespace rtalign;

TEST_CASE("mean_surprisal basics") {
    CHECK(mean_surprisal({2.0, 2.0, 2.0}) == 2.0);
    CHECK(mean_surprisal({1.0, 3.0}) == 2.0);
    CHECK_THROWS_AS(mean_surprisal({}), DomainError);
}

TEST_CASE("uid_variance uses the population divisor") {
    CHECK(uid_variance({5.0, 5.0, 5.0}) == 0.0);
    CHECK(uid_variance({1.0, 3.0}) == 1.0);
    CHECK_THROWS_AS(uid_variance({}), DomainError);

    // permutation invariance
    Rng rng(1);
    std::vector<double> s(9);
    for (double& v : s) v = rng.uniform() * 10.0;
    std::vector<double> t = s;
    rng.shuffle(t);
    CHECK(uid_variance(s) == doctest::Approx(uid_variance(t)).epsilon(1e-12));

    // identity var = E[s^2] - E[s]^2
    double m2 = 0.0;
    for (double v : s) m2 += v * v;
    m2 /= static_cast<double>(s.size());
    const double mu = mean_surprisal(s);
    CHECK(uid_variance(s) == doctest::Approx(m2 - mu * mu).epsilon(1e-12));
}

TEST_CASE("uid_local_variance is order sensitive") {
    CHECK(uid_local_variance({1.0, 3.0}) == 4.0);
    CHECK(uid_local_variance({7.0, 7.0, 7.0}) == 0.0);
    CHECK(uid_local_variance({1.0, 3.0, 1.0}) == 4.0);
    CHECK(uid_local_variance({1.0, 1.0, 3.0}) == 2.0);  // sorting changes it
    CHECK_THROWS_AS(uid_local_variance({1.0}), DomainError);
    CHECK(uid_local_variance({2.0, 9.0, 4.0}) >= 0.0);
}

TEST_CASE("unique_ngram_ratio hand values") {
    CHECK(unique_ngram_ratio({"a", "b", "a"}, 1) == doctest::Approx(200.0 / 3.0));
    CHECK(unique_ngram_ratio({"a", "b", "a"}, 2) == 100.0);
    // all-identical tokens: one distinct n-gram
    CHECK(unique_ngram_ratio({"x", "x", "x", "x"}, 1) == 25.0);
    CHECK(unique_ngram_ratio({"x", "x", "x", "x"}, 2) == doctest::Approx(100.0 / 3.0));
    CHECK_THROWS_AS(unique_ngram_ratio({"a"}, 2), DomainError);
    CHECK_THROWS_AS(unique_ngram_ratio({"a", "b"}, 0), DomainError);
}

TEST_CASE("aggregates match an independent reimplementation on random sequences") {
    Rng rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 3 + rng.uniform_int(12);
        std::vector<double> s(n);
        std::vector<std::string> tokens(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = rng.uniform() * 8.0;
            tokens[i] = std::string(1, static_cast<char>('a' + rng.uniform_int(4)));
        }
        // oracle: direct formula transcriptions
        double mu = 0.0;
        for (double v : s) mu += v;
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (double v : s) var += (v - mu) * (v - mu);
        var /= static_cast<double>(n);
        double lv = 0.0;
        for (std::size_t i = 1; i < n; ++i) lv += (s[i] - s[i - 1]) * (s[i] - s[i - 1]);
        lv /= static_cast<double>(n - 1);
        std::set<std::string> grams;
        for (std::size_t i = 0; i + 2 <= n; ++i) grams.insert(tokens[i] + "\t" + tokens[i + 1]);
        const double ratio =
            100.0 * static_cast<double>(grams.size()) / static_cast<double>(n - 1);

        CHECK(mean_surprisal(s) == doctest::Approx(mu).epsilon(1e-12));
        CHECK(uid_variance(s) == doctest::Approx(var).epsilon(1e-12));
        CHECK(uid_local_variance(s) == doctest::Approx(lv).epsilon(1e-12));
        CHECK(unique_ngram_ratio(tokens, 2) == doctest::Approx(ratio).epsilon(1e-12));
        CHECK(unique_ngram_ratio(tokens, 1) > 0.0);
        CHECK(unique_ngram_ratio(tokens, 1) <= 100.0);
    }
}

namespace {

LMModel repetitive_model() {
    LMConfig config;
    config.context_window = 8;
    config.embed_dim = 12;
    config.n_layers = 1;
    config.ffn_dim = 24;
    config.seed = 3;
    const std::vector<std::vector<std::string>> text(10, {"a", "b", "a", "b", "a", "b", "a",
                                                          "b"});
    PretrainSettings settings;
    settings.steps = 700;
    settings.lr = 1e-2;
    return pretrain_mle(config, text, settings);
}

LMModel diverse_model() {
    LMConfig config;
    config.context_window = 8;
    config.embed_dim = 12;
    config.n_layers = 1;
    config.ffn_dim = 24;
    config.seed = 4;
    return init_lm(config, Vocabulary::from_words({"a", "b", "c", "d", "e", "f", "g", "h"}));
}

}  // namespace

TEST_CASE("generation_report is deterministic and flags degenerate inputs") {
    const LMModel gen = diverse_model();
    const std::vector<std::vector<std::string>> prefixes = {{"a"}, {"b"}, {"c"}, {"d"}};
    GenerationSettings settings;
    settings.max_len = 12;
    settings.seed = 9;
    const GenerationReport a = generation_report(gen, gen, prefixes, settings);
    const GenerationReport b = generation_report(gen, gen, prefixes, settings);
    CHECK(to_json(a) == to_json(b));
    CHECK(a.n_prefixes == 4);
    CHECK(a.n_scored >= 1);
    CHECK_THROWS_AS(generation_report(gen, gen, {}, settings), DomainError);
}

TEST_CASE("a repetitive generator scores a lower unique 1-gram ratio") {
    const LMModel rep = repetitive_model();
    const LMModel div = diverse_model();
    std::vector<std::vector<std::string>> prefixes;
    for (int i = 0; i < 8; ++i) prefixes.push_back({"a"});
    GenerationSettings settings;
    settings.max_len = 16;
    settings.seed = 21;
    // scorer held fixed so only the generators differ
    const GenerationReport r = generation_report(rep, div, prefixes, settings);
    const GenerationReport d = generation_report(div, div, prefixes, settings);
    CHECK(r.unigram_ratio.mean < d.unigram_ratio.mean);
}

TEST_CASE("greedy self-scored generation has near-zero surprisal variance") {
    const LMModel rep = repetitive_model();
    std::vector<std::vector<std::string>> prefixes = {{"a"}, {"b"}};
    GenerationSettings settings;
    settings.max_len = 10;
    settings.temperature = 0.0;  // greedy: the scorer sees its own argmax
    settings.seed = 33;
    const GenerationReport report = generation_report(rep, rep, prefixes, settings);
    CHECK(report.uid_variance.mean < 0.5);
    CHECK(report.mean_surprisal.mean < 1.0);
}
