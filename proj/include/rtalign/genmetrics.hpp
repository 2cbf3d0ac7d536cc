#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rtalign/lm.hpp"

namespace rtalign {

struct CompletionRecord {
    std::vector<std::string> prefix;
    std::vector<std::string> completion;
    std::vector<double> surprisal_bits;  // scorer-attributed, aligned to completion
};

double mean_surprisal(const std::vector<double>& s);
// Population variance, divisor N.
double uid_variance(const std::vector<double>& s);
// (1/(N-1)) sum over n >= 2 of (s_n - s_{n-1})^2.
double uid_local_variance(const std::vector<double>& s);
// 100 * |distinct n-grams| / (count - n + 1).
double unique_ngram_ratio(const std::vector<std::string>& tokens, std::size_t n);

struct MetricSummary {
    double mean = 0.0;
    double se = 0.0;  // standard error of the per-completion values
};

struct GenerationReport {
    std::size_t n_prefixes = 0;
    std::size_t n_scored = 0;  // completions of length >= 3
    MetricSummary mean_surprisal;
    MetricSummary uid_variance;
    MetricSummary uid_local_variance;
    MetricSummary unigram_ratio;
    MetricSummary bigram_ratio;
    MetricSummary trigram_ratio;
    std::vector<CompletionRecord> completions;  // all, including excluded
};

struct GenerationSettings {
    std::size_t max_len = 50;
    std::size_t completions_per_prefix = 1;
    double temperature = 1.0;
    std::uint64_t seed = 0;
};

// Samples completions from `generator` for each prefix and scores their
// surprisal under `scorer` (a separate model). Completions shorter than
// three tokens are excluded from the aggregates.
GenerationReport generation_report(const LMModel& generator, const LMModel& scorer,
                                   const std::vector<std::vector<std::string>>& prefixes,
                                   const GenerationSettings& settings);

std::string to_json(const GenerationReport& report);

}  // namespace rtalign
