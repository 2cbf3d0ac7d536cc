#include "rtalign/align.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "rtalign/rng.hpp"

namespace rtalign {

namespace {

std::vector<std::size_t> vocab_ids(const Vocabulary& vocab,
                                   const std::vector<std::string>& words) {
    std::vector<std::size_t> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(vocab.lookup(w));
    return ids;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Regression rows for the evaluation protocol: trainee surprisals on every
// eligible unit of the corpus.
std::vector<RegressionRow> regression_rows(const LMModel& model, const Corpus& corpus,
                                           const UnigramModel& unigrams) {
    std::vector<RegressionRow> rows;
    for (const auto& sentence : corpus.sentences) {
        std::vector<double> surprisals;
        bool scored = false;
        for (const auto& unit : sentence.units) {
            if (unit.measurement(corpus.measurement_kind) <= 0.0 ||
                !unigrams.contains(unit.word)) {
                continue;
            }
            if (!scored) {
                surprisals = sentence_surprisals(model, sentence.words());
                scored = true;
            }
            rows.push_back({surprisals[unit.word_index],
                            unigram_surprisal(unigrams, unit.word),
                            static_cast<double>(unit.length_chars),
                            unit.measurement(corpus.measurement_kind)});
        }
    }
    return rows;
}

}  // namespace

std::vector<BatchSentence> make_batches(const Corpus& corpus, const UnigramModel& unigrams,
                                        const Vocabulary& vocab) {
    std::vector<BatchSentence> batches;
    for (const auto& sentence : corpus.sentences) {
        BatchSentence bs;
        bs.word_ids = vocab_ids(vocab, sentence.words());
        for (const auto& unit : sentence.units) {
            if (unit.measurement(corpus.measurement_kind) <= 0.0 ||
                !unigrams.contains(unit.word)) {
                continue;
            }
            bs.unit_positions.push_back(unit.word_index);
            bs.unigram_bits.push_back(unigram_surprisal(unigrams, unit.word));
            bs.length_chars.push_back(static_cast<double>(unit.length_chars));
            bs.rt_ms.push_back(unit.measurement(corpus.measurement_kind));
        }
        if (!bs.unit_positions.empty()) batches.push_back(std::move(bs));
    }
    return batches;
}

Tensor batch_reward(Tape& tape, const LMModel& model, const LMGraph& graph,
                    const std::vector<BatchSentence>& batch, double rho) {
    if (batch.empty()) throw DomainError("batch_reward on empty batch");
    if (!(rho > 0.0)) throw DomainError("batch_reward requires rho > 0");

    std::vector<Tensor> surprisal_parts;
    std::vector<double> unigram, length, rt;
    for (const auto& bs : batch) {
        if (bs.unit_positions.empty()) throw DomainError("batch sentence without units");
        const Tensor rows = sentence_logprob_rows(tape, model, graph, bs.word_ids);
        std::vector<std::size_t> cols;
        cols.reserve(bs.unit_positions.size());
        for (std::size_t p : bs.unit_positions) cols.push_back(bs.word_ids[p]);
        surprisal_parts.push_back(tape.gather(rows, bs.unit_positions, cols));
        unigram.insert(unigram.end(), bs.unigram_bits.begin(), bs.unigram_bits.end());
        length.insert(length.end(), bs.length_chars.begin(), bs.length_chars.end());
        rt.insert(rt.end(), bs.rt_ms.begin(), bs.rt_ms.end());
    }
    const std::size_t n = rt.size();

    // log p (nats) -> surprisal in bits
    const Tensor surprisal =
        tape.scalar_mul(tape.concat_rows(surprisal_parts), -1.0 / std::numbers::ln2);
    const Tensor x = tape.concat_cols({surprisal, tape.leaf(n, 1, unigram),
                                       tape.leaf(n, 1, length),
                                       tape.leaf(n, 1, std::vector<double>(n, 1.0))});
    const Tensor psi = tape.leaf(n, 1, rt);

    std::vector<double> ridge(16, 0.0);
    for (std::size_t i = 0; i < 4; ++i) ridge[i * 4 + i] = rho;
    const Tensor xt = tape.transpose(x);
    const Tensor a = tape.add(tape.matmul(xt, x), tape.leaf(4, 4, ridge));
    const Tensor beta = tape.spd_solve(a, tape.matmul(xt, psi));
    const Tensor resid = tape.sub(psi, tape.matmul(x, beta));
    return tape.scalar_mul(tape.mean(tape.square(resid)), -1.0);
}

Tensor kl_term(Tape& tape, const LMModel& trainee, const LMGraph& graph, const LMModel& ref,
               const std::vector<std::vector<std::size_t>>& sentences) {
    if (sentences.empty()) throw DomainError("kl_term on empty context list");
    Tensor total;
    std::size_t n_rows = 0;
    for (const auto& ids : sentences) {
        const Tensor theta_rows = sentence_logprob_rows(tape, trainee, graph, ids);

        // Reference log-probabilities on a private tape; they enter the
        // trainee's graph only as constants.
        Tape ref_tape;
        const LMGraph ref_graph = lm_leaves(ref_tape, ref, false);
        const Tensor ref_rows = sentence_logprob_rows(ref_tape, ref, ref_graph, ids);
        const std::vector<double>& ref_lp = ref_rows.value();

        std::vector<double> p(ref_lp.size());
        double entropy_term = 0.0;  // sum of p_ref * log p_ref
        for (std::size_t i = 0; i < ref_lp.size(); ++i) {
            p[i] = std::exp(ref_lp[i]);
            entropy_term += p[i] * ref_lp[i];
        }
        const Tensor p_leaf = tape.leaf(theta_rows.rows(), theta_rows.cols(), std::move(p));
        const Tensor cross = tape.sum(tape.mul(p_leaf, theta_rows));
        const Tensor contrib = tape.sub(tape.scalar_const(entropy_term), cross);
        total = total.valid() ? tape.add(total, contrib) : contrib;
        n_rows += theta_rows.rows();
    }
    return tape.scalar_mul(total, 1.0 / static_cast<double>(n_rows));
}

Tensor objective(Tape& tape, const LMModel& trainee, const LMGraph& graph, const LMModel& ref,
                 const std::vector<BatchSentence>& batch, double lambda, double rho) {
    const Tensor reward = batch_reward(tape, trainee, graph, batch, rho);
    if (lambda == 0.0) return reward;
    std::vector<std::vector<std::size_t>> contexts;
    contexts.reserve(batch.size());
    for (const auto& bs : batch) contexts.push_back(bs.word_ids);
    const Tensor kl = kl_term(tape, trainee, graph, ref, contexts);
    return tape.sub(reward, tape.scalar_mul(kl, lambda));
}

std::string to_csv(const TrainLog& log) {
    std::ostringstream out;
    out << "step,reward,kl,mse,dllh_nats,log_ppl,beta_surprisal,beta_unigram,beta_length,"
           "beta_bias\n";
    for (const auto& r : log.records) {
        out << r.step << "," << fmt(r.reward) << "," << fmt(r.kl) << "," << fmt(r.mse) << ","
            << fmt(r.dllh_nats) << "," << fmt(r.log_ppl) << "," << fmt(r.beta_surprisal) << ","
            << fmt(r.beta_unigram) << "," << fmt(r.beta_length) << "," << fmt(r.beta_bias)
            << "\n";
    }
    return out.str();
}

std::string to_json(const TrainLog& log) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : log.records) {
        records.push_back({{"step", r.step},
                           {"reward", r.reward},
                           {"kl", r.kl},
                           {"mse", r.mse},
                           {"dllh_nats", r.dllh_nats},
                           {"log_ppl", r.log_ppl},
                           {"beta_surprisal", r.beta_surprisal},
                           {"beta_unigram", r.beta_unigram},
                           {"beta_length", r.beta_length},
                           {"beta_bias", r.beta_bias}});
    }
    nlohmann::json j;
    j["records"] = std::move(records);
    return j.dump(2);
}

namespace {

TrainRecord evaluate(std::size_t step, const LMModel& model, const LMModel& ref,
                     const std::vector<BatchSentence>& probe, const Corpus& test_corpus,
                     const UnigramModel& unigrams, const AlignConfig& config) {
    TrainRecord rec;
    rec.step = step;

    Tape tape;
    const LMGraph graph = lm_leaves(tape, model, false);
    rec.reward = batch_reward(tape, model, graph, probe, config.rho).scalar();
    std::vector<std::vector<std::size_t>> contexts;
    for (const auto& bs : probe) contexts.push_back(bs.word_ids);
    rec.kl = kl_term(tape, model, graph, ref, contexts).scalar();

    const std::vector<RegressionRow> rows = regression_rows(model, test_corpus, unigrams);
    const CVReport report = kfold_cv(rows, config.cv_folds, config.seed);
    rec.mse = report.mean_mse;
    rec.dllh_nats = report.mean_dllh_nats;
    rec.beta_surprisal = report.coefficient_means.at("surprisal");
    rec.beta_unigram = report.coefficient_means.at("unigram");
    rec.beta_length = report.coefficient_means.at("length");
    rec.beta_bias = report.coefficient_means.at("intercept");
    rec.log_ppl = std::log(perplexity(model, test_corpus));
    return rec;
}

}  // namespace

TrainLog train(LMModel& model, const LMModel& ref, const Corpus& train_corpus,
               const Corpus& test_corpus, const UnigramModel& unigrams,
               const AlignConfig& config) {
    const std::vector<BatchSentence> batches =
        make_batches(train_corpus, unigrams, model.vocab);
    if (batches.empty()) throw DataError("no trainable sentences in the train split");
    if (config.grad_accum == 0 || config.batch_sentences == 0 || config.eval_every == 0) {
        throw DomainError("grad_accum, batch_sentences, and eval_every must be positive");
    }

    const std::size_t probe_size = std::min<std::size_t>(8, batches.size());
    const std::vector<BatchSentence> probe(batches.begin(), batches.begin() + probe_size);

    TrainLog log;
    log.records.push_back(
        evaluate(0, model, ref, probe, test_corpus, unigrams, config));

    AdamSettings adam;
    adam.weight_decay = config.weight_decay;
    AdamW optimizer(adam);
    Rng shuffle_rng(config.seed);
    std::vector<std::size_t> order(batches.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = order.size();  // forces a shuffle on first use

    std::map<std::string, std::vector<double>> acc;
    std::size_t accumulated = 0;
    std::size_t opt_step = 0;

    for (std::size_t step = 1; step <= config.total_steps; ++step) {
        std::vector<BatchSentence> batch;
        for (std::size_t b = 0; b < config.batch_sentences; ++b) {
            if (cursor >= order.size()) {
                shuffle_rng.shuffle(order);
                cursor = 0;
            }
            batch.push_back(batches[order[cursor++]]);
        }

        Tape tape;
        const LMGraph graph = lm_leaves(tape, model, true);
        const Tensor j = objective(tape, model, graph, ref, batch, config.lambda, config.rho);
        const Tensor loss = tape.scalar_mul(j, -1.0);
        if (!std::isfinite(loss.scalar())) {
            throw TrainingError("non-finite loss at data step " + std::to_string(step));
        }
        tape.backward(loss);

        for (const auto& [name, leaf] : graph.leaves) {
            auto& g = acc[name];
            const std::vector<double>& grad = leaf.grad();
            if (g.empty()) g.assign(grad.size(), 0.0);
            for (std::size_t i = 0; i < grad.size(); ++i) g[i] += grad[i];
        }
        if (++accumulated == config.grad_accum) {
            const double scale = 1.0 / static_cast<double>(config.grad_accum);
            for (auto& [name, g] : acc)
                for (double& v : g) v *= scale;
            optimizer.step(model.params, acc, config.schedule.lr(opt_step));
            ++opt_step;
            acc.clear();
            accumulated = 0;
        }

        if (step % config.eval_every == 0 || step == config.total_steps) {
            log.records.push_back(
                evaluate(step, model, ref, probe, test_corpus, unigrams, config));
        }
    }
    return log;
}

TrainLog random_rt_control(LMModel& model, const LMModel& ref, const Corpus& train_corpus,
                           const Corpus& test_corpus, const UnigramModel& unigrams,
                           const AlignConfig& config) {
    // Match the first two moments of the real eligible training RTs.
    const std::vector<EligibleUnit> units = filter_units(train_corpus, unigrams);
    if (units.empty()) throw DataError("no eligible units in the train split");
    double mean = 0.0;
    for (const auto& u : units) mean += u.rt_ms;
    mean /= static_cast<double>(units.size());
    double var = 0.0;
    for (const auto& u : units) var += (u.rt_ms - mean) * (u.rt_ms - mean);
    const double stddev = std::sqrt(var / static_cast<double>(units.size()));

    Corpus shuffled = train_corpus;
    Rng rng(config.seed ^ 0x5261745f43747253ULL);
    for (const auto& u : units) {
        double& rt = shuffled.sentences[u.sentence_index].units[u.word_index].gaze_ms;
        UnitRecord& unit = shuffled.sentences[u.sentence_index].units[u.word_index];
        const double draw = std::max(rng.normal(mean, stddev), 1.0);
        switch (shuffled.measurement_kind) {
            case MeasurementKind::gaze:
                rt = draw;
                break;
            case MeasurementKind::total:
                unit.total_ms = draw;
                break;
            case MeasurementKind::first_fixation:
                unit.first_fix_ms = draw;
                break;
        }
    }
    return train(model, ref, shuffled, test_corpus, unigrams, config);
}

}  // namespace rtalign
