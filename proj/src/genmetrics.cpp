#include "rtalign/genmetrics.hpp"

#include <cmath>
#include <set>

#include "json.hpp"
#include "rtalign/errors.hpp"

namespace rtalign {

namespace {

MetricSummary summarize(const std::vector<double>& values) {
    MetricSummary s;
    const double n = static_cast<double>(values.size());
    for (double v : values) s.mean += v;
    s.mean /= n;
    if (values.size() > 1) {
        double var = 0.0;
        for (double v : values) var += (v - s.mean) * (v - s.mean);
        s.se = std::sqrt(var / (n - 1.0) / n);
    }
    return s;
}

nlohmann::json metric_json(const MetricSummary& s) {
    return {{"mean", s.mean}, {"se", s.se}};
}

}  // namespace

double mean_surprisal(const std::vector<double>& s) {
    if (s.empty()) throw DomainError("mean_surprisal on empty list");
    double total = 0.0;
    for (double v : s) total += v;
    return total / static_cast<double>(s.size());
}

double uid_variance(const std::vector<double>& s) {
    const double mu = mean_surprisal(s);
    double var = 0.0;
    for (double v : s) var += (v - mu) * (v - mu);
    return var / static_cast<double>(s.size());
}

double uid_local_variance(const std::vector<double>& s) {
    if (s.size() < 2) throw DomainError("uid_local_variance needs at least two values");
    double total = 0.0;
    for (std::size_t i = 1; i < s.size(); ++i) total += (s[i] - s[i - 1]) * (s[i] - s[i - 1]);
    return total / static_cast<double>(s.size() - 1);
}

double unique_ngram_ratio(const std::vector<std::string>& tokens, std::size_t n) {
    if (n == 0) throw DomainError("unique_ngram_ratio requires n >= 1");
    if (tokens.size() < n) throw DomainError("unique_ngram_ratio on too few tokens");
    std::set<std::vector<std::string>> distinct;
    const std::size_t windows = tokens.size() - n + 1;
    for (std::size_t i = 0; i < windows; ++i) {
        distinct.insert(std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n));
    }
    return 100.0 * static_cast<double>(distinct.size()) / static_cast<double>(windows);
}

GenerationReport generation_report(const LMModel& generator, const LMModel& scorer,
                                   const std::vector<std::vector<std::string>>& prefixes,
                                   const GenerationSettings& settings) {
    if (prefixes.empty()) throw DomainError("generation_report on empty prefix list");

    GenerationReport report;
    report.n_prefixes = prefixes.size();
    std::vector<double> mu, uv, ulv, g1, g2, g3;
    for (std::size_t p = 0; p < prefixes.size(); ++p) {
        for (std::size_t c = 0; c < settings.completions_per_prefix; ++c) {
            // per-task seed so completions are independent and reproducible
            const std::uint64_t task_seed =
                settings.seed + 0x9e3779b97f4a7c15ULL *
                                    (p * settings.completions_per_prefix + c + 1);
            CompletionRecord rec;
            rec.prefix = prefixes[p];
            rec.completion = sample(generator, prefixes[p], settings.max_len,
                                    settings.temperature, task_seed);

            std::vector<std::size_t> context;
            for (const auto& w : rec.prefix) context.push_back(scorer.vocab.lookup(w));
            for (const auto& w : rec.completion) {
                const std::size_t id = scorer.vocab.lookup(w);
                rec.surprisal_bits.push_back(surprisal_bits(scorer, id, context));
                context.push_back(id);
            }

            if (rec.completion.size() >= 3) {
                ++report.n_scored;
                mu.push_back(mean_surprisal(rec.surprisal_bits));
                uv.push_back(uid_variance(rec.surprisal_bits));
                ulv.push_back(uid_local_variance(rec.surprisal_bits));
                g1.push_back(unique_ngram_ratio(rec.completion, 1));
                g2.push_back(unique_ngram_ratio(rec.completion, 2));
                g3.push_back(unique_ngram_ratio(rec.completion, 3));
            }
            report.completions.push_back(std::move(rec));
        }
    }
    if (report.n_scored == 0) {
        throw DataError("all completions were shorter than three tokens");
    }
    report.mean_surprisal = summarize(mu);
    report.uid_variance = summarize(uv);
    report.uid_local_variance = summarize(ulv);
    report.unigram_ratio = summarize(g1);
    report.bigram_ratio = summarize(g2);
    report.trigram_ratio = summarize(g3);
    return report;
}

std::string to_json(const GenerationReport& report) {
    nlohmann::json j;
    j["n_prefixes"] = report.n_prefixes;
    j["n_scored"] = report.n_scored;
    j["mean_surprisal"] = metric_json(report.mean_surprisal);
    j["uid_variance"] = metric_json(report.uid_variance);
    j["uid_local_variance"] = metric_json(report.uid_local_variance);
    j["unigram_ratio"] = metric_json(report.unigram_ratio);
    j["bigram_ratio"] = metric_json(report.bigram_ratio);
    j["trigram_ratio"] = metric_json(report.trigram_ratio);
    nlohmann::json completions = nlohmann::json::array();
    for (const auto& rec : report.completions) {
        completions.push_back({{"prefix", rec.prefix},
                               {"completion", rec.completion},
                               {"surprisal_bits", rec.surprisal_bits}});
    }
    j["completions"] = std::move(completions);
    return j.dump(2);
}

}  // namespace rtalign
