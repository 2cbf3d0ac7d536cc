#include "rtalign/lm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"
#include "rtalign/rng.hpp"

namespace rtalign {

namespace {

constexpr double kLn2 = 0.6931471805599453;

std::vector<std::size_t> word_ids(const Vocabulary& vocab,
                                  const std::vector<std::string>& sentence) {
    std::vector<std::size_t> ids;
    ids.reserve(sentence.size());
    for (const auto& w : sentence) ids.push_back(vocab.lookup(w));
    return ids;
}

// Single forward pass over input ids (length <= W): returns T x S log-probs.
Tensor forward_window(Tape& tape, const LMModel& model, const LMGraph& graph,
                      const std::vector<std::size_t>& input_ids) {
    const LMConfig& cfg = model.config;
    const std::size_t t = input_ids.size();
    const std::size_t e = cfg.embed_dim;
    auto leaf = [&](const std::string& name) -> Tensor { return graph.leaves.at(name); };

    std::vector<std::size_t> positions(t);
    std::iota(positions.begin(), positions.end(), 0);
    Tensor x = tape.add(tape.embedding_lookup(leaf("tok_embed"), input_ids),
                        tape.embedding_lookup(leaf("pos_embed"), positions));

    // Causal mask: strictly-upper entries get a large negative constant.
    std::vector<double> mask(t * t, 0.0);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = i + 1; j < t; ++j) mask[i * t + j] = -1e9;
    Tensor mask_t = tape.leaf(t, t, mask, false);

    const double scale = 1.0 / std::sqrt(static_cast<double>(e));
    for (std::size_t layer = 0; layer < cfg.n_layers; ++layer) {
        const std::string p = "layer" + std::to_string(layer) + ".";
        Tensor q = tape.matmul(x, leaf(p + "wq"));
        Tensor k = tape.matmul(x, leaf(p + "wk"));
        Tensor v = tape.matmul(x, leaf(p + "wv"));
        Tensor scores = tape.add(tape.scalar_mul(tape.matmul(q, tape.transpose(k)), scale), mask_t);
        Tensor attn = tape.exp(tape.log_softmax_rows(scores));
        x = tape.add(x, tape.matmul(tape.matmul(attn, v), leaf(p + "wo")));
        Tensor hidden = tape.relu(tape.matmul(x, leaf(p + "w1")));
        x = tape.add(x, tape.matmul(hidden, leaf(p + "w2")));
    }
    return tape.log_softmax_rows(tape.matmul(x, leaf("out_proj")));
}

std::map<std::string, std::vector<double>> collect_grads(const LMGraph& graph) {
    std::map<std::string, std::vector<double>> grads;
    for (const auto& [name, leaf] : graph.leaves) grads[name] = leaf.grad();
    return grads;
}

}  // namespace

Vocabulary Vocabulary::from_sentences(const std::vector<std::vector<std::string>>& sentences) {
    std::set<std::string> unique;
    for (const auto& s : sentences)
        for (const auto& w : s) unique.insert(w);
    return from_words({unique.begin(), unique.end()});
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    Vocabulary v;
    v.words = std::move(words);
    for (std::size_t i = 0; i < v.words.size(); ++i) v.index[v.words[i]] = i;
    return v;
}

std::size_t Vocabulary::lookup(const std::string& word) const {
    const auto it = index.find(word);
    return it == index.end() ? unk_id() : it->second;
}

std::string Vocabulary::word_for(std::size_t id) const {
    if (id < words.size()) return words[id];
    if (id == unk_id()) return "<unk>";
    if (id == eos_id()) return "<eos>";
    throw DomainError("word id " + std::to_string(id) + " out of range");
}

std::size_t LMModel::param_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params) n += p.values.size();
    return n;
}

LMModel init_lm(const LMConfig& config, const Vocabulary& vocab) {
    if (config.context_window < 2 || config.embed_dim == 0 || config.n_layers == 0 ||
        config.ffn_dim == 0) {
        throw ModelError("invalid LM configuration");
    }
    if (config.n_heads != 1) throw ModelError("only single-head attention is supported");
    LMModel model;
    model.config = config;
    model.vocab = vocab;
    Rng rng(config.seed);
    auto init = [&](const std::string& name, std::size_t rows, std::size_t cols, double std) {
        ParamTensor p;
        p.rows = rows;
        p.cols = cols;
        p.values.resize(rows * cols);
        for (auto& v : p.values) v = rng.normal(0.0, std);
        model.params[name] = std::move(p);
    };
    const std::size_t s = vocab.symbol_count();
    const std::size_t e = config.embed_dim;
    init("tok_embed", s, e, 0.1);
    init("pos_embed", config.context_window, e, 0.1);
    for (std::size_t layer = 0; layer < config.n_layers; ++layer) {
        const std::string p = "layer" + std::to_string(layer) + ".";
        init(p + "wq", e, e, 0.1);
        init(p + "wk", e, e, 0.1);
        init(p + "wv", e, e, 0.1);
        init(p + "wo", e, e, 0.1);
        init(p + "w1", e, config.ffn_dim, 0.1);
        init(p + "w2", config.ffn_dim, e, 0.1);
    }
    init("out_proj", e, s, 0.1);
    return model;
}

std::vector<std::size_t> encode(const Vocabulary& vocab,
                                const std::vector<std::string>& sentence) {
    std::vector<std::size_t> ids = word_ids(vocab, sentence);
    ids.push_back(vocab.eos_id());
    return ids;
}

LMGraph lm_leaves(Tape& tape, const LMModel& model, bool requires_grad) {
    LMGraph graph;
    for (const auto& [name, p] : model.params) {
        graph.leaves.emplace(name, tape.leaf(p.rows, p.cols, p.values, requires_grad));
    }
    return graph;
}

Tensor sentence_logprob_rows(Tape& tape, const LMModel& model, const LMGraph& graph,
                             const std::vector<std::size_t>& ids) {
    const std::size_t w = model.config.context_window;
    std::vector<std::size_t> input;
    input.reserve(ids.size() + 1);
    input.push_back(model.vocab.eos_id());
    input.insert(input.end(), ids.begin(), ids.end());
    const std::size_t t = input.size();
    if (t <= w) return forward_window(tape, model, graph, input);
    // Long sentence: full-window rows first, then one sliding window per
    // remaining position.
    std::vector<Tensor> parts;
    parts.push_back(forward_window(
        tape, model, graph, std::vector<std::size_t>(input.begin(), input.begin() + static_cast<std::ptrdiff_t>(w))));
    for (std::size_t i = w; i < t; ++i) {
        const std::vector<std::size_t> window(input.begin() + static_cast<std::ptrdiff_t>(i + 1 - w),
                                              input.begin() + static_cast<std::ptrdiff_t>(i + 1));
        Tensor rows = forward_window(tape, model, graph, window);
        parts.push_back(tape.slice_rows(rows, w - 1, w));
    }
    return tape.concat_rows(parts);
}

std::vector<double> next_log_probs(const LMModel& model,
                                   const std::vector<std::size_t>& context_ids) {
    const std::size_t w = model.config.context_window;
    std::vector<std::size_t> input;
    input.push_back(model.vocab.eos_id());
    input.insert(input.end(), context_ids.begin(), context_ids.end());
    if (input.size() > w) input.erase(input.begin(), input.end() - static_cast<std::ptrdiff_t>(w));
    Tape tape;
    LMGraph graph = lm_leaves(tape, model, false);
    Tensor rows = forward_window(tape, model, graph, input);
    const std::size_t t = input.size();
    const std::size_t s = model.vocab.symbol_count();
    const auto& v = rows.value();
    return {v.begin() + static_cast<std::ptrdiff_t>((t - 1) * s), v.end()};
}

double surprisal_bits(const LMModel& model, std::size_t unit_id,
                      const std::vector<std::size_t>& context_ids) {
    const std::vector<double> lp = next_log_probs(model, context_ids);
    if (unit_id >= lp.size()) throw DomainError("unit id out of range");
    return -lp[unit_id] / kLn2;
}

std::vector<double> sentence_surprisals(const LMModel& model,
                                        const std::vector<std::string>& sentence) {
    const std::vector<std::size_t> ids = word_ids(model.vocab, sentence);
    Tape tape;
    LMGraph graph = lm_leaves(tape, model, false);
    Tensor rows = sentence_logprob_rows(tape, model, graph, ids);
    const std::size_t s = model.vocab.symbol_count();
    std::vector<double> out(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out[i] = -rows.value()[i * s + ids[i]] / kLn2;
    }
    return out;
}

double sentence_logprob_nats(const LMModel& model, const std::vector<std::string>& sentence) {
    const std::vector<std::size_t> ids = word_ids(model.vocab, sentence);
    std::vector<std::size_t> targets = ids;
    targets.push_back(model.vocab.eos_id());
    Tape tape;
    LMGraph graph = lm_leaves(tape, model, false);
    Tensor rows = sentence_logprob_rows(tape, model, graph, ids);
    const std::size_t s = model.vocab.symbol_count();
    double total = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) total += rows.value()[i * s + targets[i]];
    return total;
}

double perplexity(const LMModel& model, const std::vector<std::vector<std::string>>& sentences) {
    if (sentences.empty()) throw DomainError("perplexity of empty corpus");
    double nll = 0.0;
    std::size_t tokens = 0;
    for (const auto& sentence : sentences) {
        nll -= sentence_logprob_nats(model, sentence);
        tokens += sentence.size() + 1;  // EOS is a predicted token
    }
    return std::exp(nll / static_cast<double>(tokens));
}

double perplexity(const LMModel& model, const Corpus& corpus) {
    std::vector<std::vector<std::string>> sentences;
    sentences.reserve(corpus.sentences.size());
    for (const auto& s : corpus.sentences) sentences.push_back(s.words());
    return perplexity(model, sentences);
}

void pretrain_mle_inplace(LMModel& model, const std::vector<std::vector<std::string>>& text,
                          const PretrainSettings& settings) {
    if (text.empty()) throw TrainingError("empty pretraining corpus");
    AdamW opt(settings.adam);
    Rng rng(settings.seed);
    std::vector<std::size_t> order(text.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t step = 0; step < settings.steps; ++step) {
        if (step % text.size() == 0) rng.shuffle(order);
        const std::vector<std::string>& sentence = text[order[step % text.size()]];
        const std::vector<std::size_t> ids = word_ids(model.vocab, sentence);
        std::vector<std::size_t> targets = ids;
        targets.push_back(model.vocab.eos_id());

        Tape tape;
        LMGraph graph = lm_leaves(tape, model, true);
        Tensor rows = sentence_logprob_rows(tape, model, graph, ids);
        std::vector<std::size_t> row_idx(targets.size());
        std::iota(row_idx.begin(), row_idx.end(), 0);
        Tensor nll = tape.scalar_mul(tape.mean(tape.gather(rows, row_idx, targets)), -1.0);
        if (!std::isfinite(nll.scalar())) {
            throw TrainingError("pretraining diverged at step " + std::to_string(step));
        }
        tape.backward(nll);
        opt.step(model.params, collect_grads(graph), settings.lr);
    }
}

LMModel pretrain_mle(const LMConfig& config, const std::vector<std::vector<std::string>>& text,
                     const PretrainSettings& settings) {
    if (text.empty()) throw TrainingError("empty pretraining corpus");
    LMModel model = init_lm(config, Vocabulary::from_sentences(text));
    pretrain_mle_inplace(model, text, settings);
    return model;
}

LMModel snapshot_reference(const LMModel& model) { return model; }

std::vector<std::string> sample(const LMModel& model, const std::vector<std::string>& prefix,
                                std::size_t max_len, double temperature, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::size_t> context = word_ids(model.vocab, prefix);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < max_len; ++i) {
        const std::vector<double> lp = next_log_probs(model, context);
        std::size_t choice = 0;
        if (temperature <= 0.0) {
            choice = static_cast<std::size_t>(
                std::max_element(lp.begin(), lp.end()) - lp.begin());
        } else {
            double mx = lp[0] / temperature;
            for (double x : lp) mx = std::max(mx, x / temperature);
            std::vector<double> weights(lp.size());
            for (std::size_t j = 0; j < lp.size(); ++j)
                weights[j] = std::exp(lp[j] / temperature - mx);
            choice = rng.categorical(weights);
        }
        if (choice == model.vocab.eos_id()) break;
        out.push_back(model.vocab.word_for(choice));
        context.push_back(choice);
    }
    return out;
}

double minimal_pair_accuracy(const LMModel& model, const std::vector<MinimalPair>& pairs) {
    if (pairs.empty()) throw DomainError("minimal_pair_accuracy on empty list");
    std::size_t correct = 0;
    for (const auto& pair : pairs) {
        if (sentence_logprob_nats(model, pair.good) > sentence_logprob_nats(model, pair.bad)) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

void save_checkpoint(const LMModel& model, const std::string& path) {
    nlohmann::json j;
    j["version"] = 1;
    j["config"] = {{"context_window", model.config.context_window},
                   {"embed_dim", model.config.embed_dim},
                   {"n_layers", model.config.n_layers},
                   {"n_heads", model.config.n_heads},
                   {"ffn_dim", model.config.ffn_dim},
                   {"seed", model.config.seed}};
    j["vocab"] = model.vocab.words;
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [name, p] : model.params) {
        params[name] = {{"rows", p.rows}, {"cols", p.cols}, {"values", p.values}};
    }
    j["params"] = std::move(params);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint '" + path + "'");
    out << j.dump(2) << "\n";
}

LMModel load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad checkpoint '" + path + "': " + e.what());
    }
    if (j.value("version", 0) != 1) throw DataError("unsupported checkpoint version");
    LMModel model;
    const auto& cfg = j.at("config");
    model.config.context_window = cfg.at("context_window").get<std::size_t>();
    model.config.embed_dim = cfg.at("embed_dim").get<std::size_t>();
    model.config.n_layers = cfg.at("n_layers").get<std::size_t>();
    model.config.n_heads = cfg.at("n_heads").get<std::size_t>();
    model.config.ffn_dim = cfg.at("ffn_dim").get<std::size_t>();
    model.config.seed = cfg.at("seed").get<std::uint64_t>();
    model.vocab = Vocabulary::from_words(j.at("vocab").get<std::vector<std::string>>());
    for (const auto& [name, pj] : j.at("params").items()) {
        ParamTensor p;
        p.rows = pj.at("rows").get<std::size_t>();
        p.cols = pj.at("cols").get<std::size_t>();
        p.values = pj.at("values").get<std::vector<double>>();
        if (p.values.size() != p.rows * p.cols) {
            throw DataError("checkpoint tensor '" + name + "' has inconsistent shape");
        }
        model.params[name] = std::move(p);
    }
    return model;
}

}  // namespace rtalign
