#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rtalign/corpus.hpp"
#include "rtalign/lm.hpp"
#include "rtalign/optim.hpp"
#include "rtalign/regress.hpp"
#include "rtalign/tensor.hpp"

namespace rtalign {

struct AlignConfig {
    double lambda = 0.0;        // KL coefficient
    double rho = 1e-5;          // ridge strength inside the reward
    std::size_t total_steps = 5000;  // data steps (one sentence each)
    std::size_t grad_accum = 2;      // micro-batches per optimizer step
    std::size_t batch_sentences = 1;
    std::size_t eval_every = 50;     // in data steps
    std::size_t cv_folds = 5;
    CosineWarmRestartSchedule schedule;
    double weight_decay = 0.01;  // decoupled, matrix parameters only
    std::uint64_t seed = 0;
};

// One sentence's contribution to a reward batch: the word ids plus the
// positions that carry a regression row.
struct BatchSentence {
    std::vector<std::size_t> word_ids;
    std::vector<std::size_t> unit_positions;
    std::vector<double> unigram_bits;   // aligned to unit_positions
    std::vector<double> length_chars;   // aligned to unit_positions
    std::vector<double> rt_ms;          // aligned to unit_positions
};

// Assembles reward batches from a corpus: sentences encoded against the
// model vocabulary, eligible units per filter_units. Sentences without any
// eligible unit are dropped.
std::vector<BatchSentence> make_batches(const Corpus& corpus, const UnigramModel& unigrams,
                                        const Vocabulary& vocab);

// r~(theta) = -(1/N) ||psi - X beta*||^2 with beta* = (X^T X + rho I)^{-1}
// X^T psi solved in-graph; gradients flow through the full closed form.
// Only the surprisal column of X depends on theta.
Tensor batch_reward(Tape& tape, const LMModel& model, const LMGraph& graph,
                    const std::vector<BatchSentence>& batch, double rho);

// phi(theta): mean over every prediction position of the batch sentences of
// the exact KL from the frozen reference to the trainee. Reference terms
// enter as constants.
Tensor kl_term(Tape& tape, const LMModel& trainee, const LMGraph& graph, const LMModel& ref,
               const std::vector<std::vector<std::size_t>>& sentences);

// J(theta) = reward - lambda * kl; training maximizes J.
Tensor objective(Tape& tape, const LMModel& trainee, const LMGraph& graph, const LMModel& ref,
                 const std::vector<BatchSentence>& batch, double lambda, double rho);

struct TrainRecord {
    std::size_t step = 0;  // data step
    double reward = 0.0;
    double kl = 0.0;
    double mse = 0.0;
    double dllh_nats = 0.0;
    double log_ppl = 0.0;
    double beta_surprisal = 0.0;
    double beta_unigram = 0.0;
    double beta_length = 0.0;
    double beta_bias = 0.0;
};

struct TrainLog {
    std::vector<TrainRecord> records;
};

std::string to_csv(const TrainLog& log);
std::string to_json(const TrainLog& log);

// Fine-tunes `model` in place on the train split, evaluating the regression
// protocol and perplexity on the test split every eval_every data steps
// (plus a step-0 record of the pre-training state). Deterministic given the
// config seed.
TrainLog train(LMModel& model, const LMModel& ref, const Corpus& train_corpus,
               const Corpus& test_corpus, const UnigramModel& unigrams,
               const AlignConfig& config);

// Same loop, but the training reading times are replaced by draws from
// Normal(mean_train, std_train) clipped at 1 ms; evaluation still uses the
// real test reading times.
TrainLog random_rt_control(LMModel& model, const LMModel& ref, const Corpus& train_corpus,
                           const Corpus& test_corpus, const UnigramModel& unigrams,
                           const AlignConfig& config);

}  // namespace rtalign
