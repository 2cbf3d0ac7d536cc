#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rtalign/corpus.hpp"
#include "rtalign/optim.hpp"
#include "rtalign/tensor.hpp"

namespace rtalign {

// Word-level alphabet augmented with EOS. UNK is an ordinary word of the
// alphabet standing in for anything out of vocabulary; EOS doubles as the
// start-of-sequence input symbol.
struct Vocabulary {
    std::vector<std::string> words;  // sorted, unique, without UNK/EOS
    std::unordered_map<std::string, std::size_t> index;

    static Vocabulary from_sentences(const std::vector<std::vector<std::string>>& sentences);
    static Vocabulary from_words(std::vector<std::string> words);

    std::size_t unk_id() const { return words.size(); }
    std::size_t eos_id() const { return words.size() + 1; }
    // |Σ̄|: the words, UNK, and EOS.
    std::size_t symbol_count() const { return words.size() + 2; }

    std::size_t lookup(const std::string& word) const;
    std::string word_for(std::size_t id) const;
};

struct LMConfig {
    std::size_t context_window = 16;
    std::size_t embed_dim = 32;
    std::size_t n_layers = 2;
    std::size_t n_heads = 1;
    std::size_t ffn_dim = 64;
    std::uint64_t seed = 0;
};

struct ParamTensor {
    std::size_t rows = 0, cols = 0;
    std::vector<double> values;
};

// std::map keeps parameter iteration order deterministic.
using ParamMap = std::map<std::string, ParamTensor>;

struct LMModel {
    LMConfig config;
    Vocabulary vocab;
    ParamMap params;

    std::size_t param_count() const;
};

LMModel init_lm(const LMConfig& config, const Vocabulary& vocab);

// Per-word ids with EOS appended (OOV -> UNK).
std::vector<std::size_t> encode(const Vocabulary& vocab, const std::vector<std::string>& sentence);

// Parameter leaves for one differentiable forward pass.
struct LMGraph {
    std::map<std::string, Tensor> leaves;
};

LMGraph lm_leaves(Tape& tape, const LMModel& model, bool requires_grad);

// Log-probability rows for each prediction position of a sentence: row i
// conditions on words 0..i-1 (the last row predicts EOS). Contexts longer
// than the model window are truncated to the last W inputs.
Tensor sentence_logprob_rows(Tape& tape, const LMModel& model, const LMGraph& graph,
                             const std::vector<std::size_t>& word_ids);

// ---- read-only scoring (each call runs on a private tape) ----

std::vector<double> next_log_probs(const LMModel& model, const std::vector<std::size_t>& context_ids);
double surprisal_bits(const LMModel& model, std::size_t unit_id,
                      const std::vector<std::size_t>& context_ids);
// Per-word surprisal in bits; contexts reset at the sentence boundary.
std::vector<double> sentence_surprisals(const LMModel& model,
                                        const std::vector<std::string>& sentence);
// Total sentence log-probability in nats, EOS included.
double sentence_logprob_nats(const LMModel& model, const std::vector<std::string>& sentence);

double perplexity(const LMModel& model, const Corpus& corpus);
double perplexity(const LMModel& model, const std::vector<std::vector<std::string>>& sentences);

struct PretrainSettings {
    std::size_t steps = 2000;
    double lr = 3e-3;
    AdamSettings adam;
    std::uint64_t seed = 0;
};

// Maximum-likelihood pretraining on raw sentences; builds the vocabulary
// from the text.
LMModel pretrain_mle(const LMConfig& config, const std::vector<std::vector<std::string>>& text,
                     const PretrainSettings& settings);
// Continues training an existing model on encodable text.
void pretrain_mle_inplace(LMModel& model, const std::vector<std::vector<std::string>>& text,
                          const PretrainSettings& settings);

// Deep immutable copy serving as p_ref.
LMModel snapshot_reference(const LMModel& model);

std::vector<std::string> sample(const LMModel& model, const std::vector<std::string>& prefix,
                                std::size_t max_len, double temperature, std::uint64_t seed);

struct MinimalPair {
    std::vector<std::string> good;
    std::vector<std::string> bad;
};

// Fraction of pairs where logP(good) > logP(bad); ties count as incorrect.
double minimal_pair_accuracy(const LMModel& model, const std::vector<MinimalPair>& pairs);

// JSON checkpoint: config, vocabulary, named tensors. Doubles round-trip
// bit-exactly.
void save_checkpoint(const LMModel& model, const std::string& path);
LMModel load_checkpoint(const std::string& path);

}  // namespace rtalign
