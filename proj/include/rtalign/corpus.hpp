#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rtalign/errors.hpp"

namespace rtalign {

struct LMModel;  // lm.hpp

enum class MeasurementKind { gaze, total, first_fixation };

MeasurementKind measurement_kind_from_string(const std::string& s);
std::string to_string(MeasurementKind kind);

// One word token with its reading-time measurements.
struct UnitRecord {
    std::string doc_id;
    std::string sent_id;
    std::size_t word_index = 0;
    std::string word;
    double gaze_ms = 0.0;
    std::optional<double> total_ms;
    std::optional<double> first_fix_ms;
    std::size_t length_chars = 0;
    std::optional<double> unigram_surprisal_bits;

    double measurement(MeasurementKind kind) const;
};

struct Sentence {
    std::vector<UnitRecord> units;

    const std::string& sent_id() const { return units.front().sent_id; }
    std::vector<std::string> words() const;
};

struct Corpus {
    std::string name;
    std::vector<Sentence> sentences;
    MeasurementKind measurement_kind = MeasurementKind::gaze;

    std::size_t unit_count() const;
};

// Sentence-level split sizes: the test set is fixed by master_seed and the
// train subsample of the remainder varies with run_seed.
struct SplitSpec {
    std::uint64_t master_seed = 0;
    std::uint64_t run_seed = 0;
    double test_fraction = 0.40;
    double train_subsample_fraction = 0.70;
};

struct UnigramModel {
    enum class Source { corpus_mle, external_table };

    std::unordered_map<std::string, double> prob;
    std::size_t total_tokens = 0;
    Source source = Source::corpus_mle;

    bool contains(const std::string& word) const { return prob.count(word) > 0; }

    // Maximum-likelihood estimate over the corpus tokens.
    static UnigramModel from_corpus(const Corpus& corpus);
    // TSV rows `word \t probability`; probabilities must be positive and sum
    // to 1 within 1e-9.
    static UnigramModel from_tsv(std::istream& in);
};

// -log2 p(word). Throws MissingFrequencyError for out-of-support words.
double unigram_surprisal(const UnigramModel& model, const std::string& word);

// Attaches unigram_surprisal_bits to every in-support unit in place.
void attach_unigram_model(Corpus& corpus, const UnigramModel& model);

// TSV with header `doc_id sent_id word_index word gaze_ms [total_ms]
// [first_fix_ms]`. Removes duplicate sentences (first occurrence kept) and
// sentences shorter than four words.
Corpus parse_corpus(std::istream& in, MeasurementKind kind, const std::string& name = "");
Corpus parse_corpus_file(const std::string& path, MeasurementKind kind);

// A unit eligible for a regression row: positive active measurement and
// positive unigram probability. Ineligible units stay in the sentence as
// context only.
struct EligibleUnit {
    std::size_t sentence_index = 0;
    std::size_t word_index = 0;
    double rt_ms = 0.0;
    double unigram_bits = 0.0;
    double length_chars = 0.0;
};

std::vector<EligibleUnit> filter_units(const Corpus& corpus, const UnigramModel& model);

std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, const SplitSpec& spec);

struct LinkCoefficients {
    double intercept = 0.0;
    double surprisal = 0.0;
    double unigram = 0.0;
    double length = 0.0;
};

// Samples sentences from a known "human" LM and generates reading times as
// an affine function of its true surprisal plus Gaussian noise, clipped
// below at 1 ms.
Corpus synthesize_corpus(const LMModel& human_lm, const LinkCoefficients& link,
                         double noise_std_ms, std::size_t n_sentences, std::uint64_t seed,
                         std::size_t max_sentence_len = 12);

}  // namespace rtalign
