#include "rtalign/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "rtalign/lm.hpp"
#include "rtalign/rng.hpp"

namespace rtalign {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = line.find('\t', start);
        if (pos == std::string::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

// UTF-8 code point count.
std::size_t char_count(const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s)
        if ((c & 0xC0) != 0x80) ++n;
    return n;
}

double parse_duration(const std::string& field, std::size_t line_no, const char* what) {
    std::size_t consumed = 0;
    double value = 0.0;
    try {
        value = std::stod(field, &consumed);
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": non-numeric " + what + " '" +
                         field + "'");
    }
    if (consumed != field.size() || !std::isfinite(value)) {
        throw ParseError("line " + std::to_string(line_no) + ": non-numeric " + what + " '" +
                         field + "'");
    }
    if (value < 0.0) {
        throw ParseError("line " + std::to_string(line_no) + ": negative " + what);
    }
    return value;
}

std::size_t round_half_up(double x) {
    return static_cast<std::size_t>(std::floor(x + 0.5));
}

std::vector<std::string> sentence_key(const Sentence& s) { return s.words(); }

}  // namespace

MeasurementKind measurement_kind_from_string(const std::string& s) {
    if (s == "gaze") return MeasurementKind::gaze;
    if (s == "total") return MeasurementKind::total;
    if (s == "first" || s == "first_fixation") return MeasurementKind::first_fixation;
    throw DataError("unknown measurement kind '" + s + "'");
}

std::string to_string(MeasurementKind kind) {
    switch (kind) {
        case MeasurementKind::gaze: return "gaze";
        case MeasurementKind::total: return "total";
        case MeasurementKind::first_fixation: return "first_fixation";
    }
    return "?";
}

double UnitRecord::measurement(MeasurementKind kind) const {
    switch (kind) {
        case MeasurementKind::gaze: return gaze_ms;
        case MeasurementKind::total:
            if (!total_ms) throw DataError("unit '" + word + "' has no total_ms");
            return *total_ms;
        case MeasurementKind::first_fixation:
            if (!first_fix_ms) throw DataError("unit '" + word + "' has no first_fix_ms");
            return *first_fix_ms;
    }
    throw DataError("bad measurement kind");
}

std::vector<std::string> Sentence::words() const {
    std::vector<std::string> w;
    w.reserve(units.size());
    for (const auto& u : units) w.push_back(u.word);
    return w;
}

std::size_t Corpus::unit_count() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.units.size();
    return n;
}

Corpus parse_corpus(std::istream& in, MeasurementKind kind, const std::string& name) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty input: missing header row");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::vector<std::string> header = split_tabs(line);
    const std::vector<std::string> required = {"doc_id", "sent_id", "word_index", "word",
                                               "gaze_ms"};
    if (header.size() < required.size() || header.size() > 7) {
        throw ParseError("line 1: bad header column count");
    }
    for (std::size_t i = 0; i < required.size(); ++i) {
        if (trim(header[i]) != required[i]) {
            throw ParseError("line 1: expected header column '" + required[i] + "', got '" +
                             header[i] + "'");
        }
    }
    bool has_total = false, has_first = false;
    for (std::size_t i = required.size(); i < header.size(); ++i) {
        const std::string col = trim(header[i]);
        if (col == "total_ms" && !has_total && !has_first) has_total = true;
        else if (col == "first_fix_ms" && !has_first) has_first = true;
        else throw ParseError("line 1: unexpected header column '" + col + "'");
    }
    const std::size_t expected_cols = 5 + (has_total ? 1 : 0) + (has_first ? 1 : 0);

    std::vector<Sentence> raw;
    std::string cur_doc, cur_sent;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_tabs(line);
        if (fields.size() != expected_cols) {
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(expected_cols) + " columns, got " +
                             std::to_string(fields.size()));
        }
        UnitRecord u;
        u.doc_id = trim(fields[0]);
        u.sent_id = trim(fields[1]);
        u.word = trim(fields[3]);
        if (u.word.empty()) {
            throw ParseError("line " + std::to_string(line_no) + ": empty word");
        }
        try {
            u.word_index = static_cast<std::size_t>(std::stoul(fields[2]));
        } catch (const std::exception&) {
            throw ParseError("line " + std::to_string(line_no) + ": bad word_index '" +
                             fields[2] + "'");
        }
        u.gaze_ms = parse_duration(fields[4], line_no, "gaze_ms");
        std::size_t next = 5;
        if (has_total) u.total_ms = parse_duration(fields[next++], line_no, "total_ms");
        if (has_first) u.first_fix_ms = parse_duration(fields[next++], line_no, "first_fix_ms");
        u.length_chars = char_count(u.word);

        if (raw.empty() || u.doc_id != cur_doc || u.sent_id != cur_sent) {
            raw.emplace_back();
            cur_doc = u.doc_id;
            cur_sent = u.sent_id;
        }
        if (u.word_index != raw.back().units.size()) {
            throw ParseError("line " + std::to_string(line_no) + ": word_index " +
                             std::to_string(u.word_index) + " not contiguous (expected " +
                             std::to_string(raw.back().units.size()) + ")");
        }
        raw.back().units.push_back(std::move(u));
    }

    Corpus corpus;
    corpus.name = name;
    corpus.measurement_kind = kind;
    std::set<std::vector<std::string>> seen;
    for (auto& s : raw) {
        if (s.units.size() < 4) continue;
        if (!seen.insert(sentence_key(s)).second) continue;
        corpus.sentences.push_back(std::move(s));
    }
    if (corpus.sentences.empty()) {
        throw EmptyCorpusError("no sentences remain after filtering");
    }
    return corpus;
}

Corpus parse_corpus_file(const std::string& path, MeasurementKind kind) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open corpus file '" + path + "'");
    return parse_corpus(in, kind, path);
}

UnigramModel UnigramModel::from_corpus(const Corpus& corpus) {
    UnigramModel model;
    model.source = Source::corpus_mle;
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& s : corpus.sentences)
        for (const auto& u : s.units) {
            ++counts[u.word];
            ++model.total_tokens;
        }
    for (const auto& [word, count] : counts) {
        model.prob[word] = static_cast<double>(count) / static_cast<double>(model.total_tokens);
    }
    return model;
}

UnigramModel UnigramModel::from_tsv(std::istream& in) {
    UnigramModel model;
    model.source = Source::external_table;
    std::string line;
    std::size_t line_no = 0;
    double total = 0.0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_tabs(line);
        if (fields.size() != 2) {
            throw ParseError("line " + std::to_string(line_no) + ": expected `word\\tprobability`");
        }
        const double p = parse_duration(fields[1], line_no, "probability");
        if (!(p > 0.0)) {
            throw ParseError("line " + std::to_string(line_no) + ": probability must be > 0");
        }
        model.prob[trim(fields[0])] = p;
        total += p;
    }
    if (std::fabs(total - 1.0) > 1e-9) {
        throw ParseError("probabilities sum to " + std::to_string(total) + ", expected 1");
    }
    return model;
}

double unigram_surprisal(const UnigramModel& model, const std::string& word) {
    const auto it = model.prob.find(word);
    if (it == model.prob.end() || !(it->second > 0.0)) {
        throw MissingFrequencyError("no frequency for word '" + word + "'");
    }
    return -std::log2(it->second);
}

void attach_unigram_model(Corpus& corpus, const UnigramModel& model) {
    for (auto& s : corpus.sentences)
        for (auto& u : s.units) {
            const auto it = model.prob.find(u.word);
            if (it != model.prob.end() && it->second > 0.0) {
                u.unigram_surprisal_bits = -std::log2(it->second);
            } else {
                u.unigram_surprisal_bits.reset();
            }
        }
}

std::vector<EligibleUnit> filter_units(const Corpus& corpus, const UnigramModel& model) {
    std::vector<EligibleUnit> out;
    for (std::size_t si = 0; si < corpus.sentences.size(); ++si) {
        const Sentence& s = corpus.sentences[si];
        for (std::size_t wi = 0; wi < s.units.size(); ++wi) {
            const UnitRecord& u = s.units[wi];
            const double rt = u.measurement(corpus.measurement_kind);
            const auto it = model.prob.find(u.word);
            if (!(rt > 0.0) || it == model.prob.end() || !(it->second > 0.0)) continue;
            EligibleUnit e;
            e.sentence_index = si;
            e.word_index = wi;
            e.rt_ms = rt;
            e.unigram_bits = -std::log2(it->second);
            e.length_chars = static_cast<double>(u.length_chars);
            out.push_back(e);
        }
    }
    return out;
}

std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, const SplitSpec& spec) {
    const std::size_t n = corpus.sentences.size();
    if (n == 0) throw SplitError("empty corpus");
    const std::size_t n_test = round_half_up(spec.test_fraction * static_cast<double>(n));
    const std::size_t n_rest = n - n_test;
    const std::size_t n_train =
        round_half_up(spec.train_subsample_fraction * static_cast<double>(n_rest));
    if (n_test < 1 || n_train < 1) {
        throw SplitError("corpus of " + std::to_string(n) + " sentences is too small to split");
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng master(spec.master_seed);
    master.shuffle(order);
    std::vector<std::size_t> test_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> rest_idx(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    // Keep the remainder in a seed-independent canonical order before the
    // run-seed subsample so that only run_seed varies the train set.
    std::sort(rest_idx.begin(), rest_idx.end());
    Rng run(spec.run_seed);
    run.shuffle(rest_idx);
    std::vector<std::size_t> train_idx(rest_idx.begin(), rest_idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::sort(test_idx.begin(), test_idx.end());
    std::sort(train_idx.begin(), train_idx.end());

    auto build = [&](const std::vector<std::size_t>& idx, const std::string& suffix) {
        Corpus c;
        c.name = corpus.name.empty() ? suffix : corpus.name + "/" + suffix;
        c.measurement_kind = corpus.measurement_kind;
        for (std::size_t i : idx) c.sentences.push_back(corpus.sentences[i]);
        return c;
    };
    return {build(train_idx, "train"), build(test_idx, "test")};
}

Corpus synthesize_corpus(const LMModel& human_lm, const LinkCoefficients& link,
                         double noise_std_ms, std::size_t n_sentences, std::uint64_t seed,
                         std::size_t max_sentence_len) {
    if (noise_std_ms < 0.0) throw ModelError("noise_std_ms must be non-negative");
    for (const auto& [name, p] : human_lm.params) {
        for (double v : p.values) {
            if (!std::isfinite(v)) throw ModelError("human LM parameter '" + name + "' not finite");
        }
    }
    {
        // Normalization check on one predictive distribution.
        const std::vector<double> lp = next_log_probs(human_lm, {});
        double z = 0.0;
        for (double x : lp) z += std::exp(x);
        if (std::fabs(z - 1.0) > 1e-6) throw ModelError("human LM is not normalized");
    }

    Rng rng(seed);
    Corpus corpus;
    corpus.name = "synthetic";
    corpus.measurement_kind = MeasurementKind::gaze;
    std::set<std::vector<std::string>> seen;
    std::vector<std::vector<std::string>> sentences;
    const std::size_t max_attempts = 200 * (n_sentences + 1);
    std::size_t attempts = 0;
    while (sentences.size() < n_sentences) {
        if (++attempts > max_attempts) {
            throw ModelError("could not synthesize " + std::to_string(n_sentences) +
                             " distinct sentences of at least 4 words");
        }
        std::vector<std::string> words =
            sample(human_lm, {}, max_sentence_len, 1.0, rng.next_u64());
        if (words.size() < 4) continue;
        if (!seen.insert(words).second) continue;
        sentences.push_back(std::move(words));
    }

    // Unigram MLE over the sampled tokens for the unigram link term.
    std::unordered_map<std::string, std::size_t> counts;
    std::size_t total = 0;
    for (const auto& s : sentences)
        for (const auto& w : s) {
            ++counts[w];
            ++total;
        }

    for (std::size_t si = 0; si < sentences.size(); ++si) {
        const std::vector<std::string>& words = sentences[si];
        const std::vector<double> surprisal = sentence_surprisals(human_lm, words);
        Sentence sent;
        for (std::size_t wi = 0; wi < words.size(); ++wi) {
            UnitRecord u;
            u.doc_id = "synthetic";
            u.sent_id = "s" + std::to_string(si);
            u.word_index = wi;
            u.word = words[wi];
            u.length_chars = char_count(words[wi]);
            const double unigram_bits =
                -std::log2(static_cast<double>(counts[words[wi]]) / static_cast<double>(total));
            double rt = link.intercept + link.surprisal * surprisal[wi] +
                        link.unigram * unigram_bits +
                        link.length * static_cast<double>(u.length_chars);
            if (noise_std_ms > 0.0) rt += rng.normal(0.0, noise_std_ms);
            u.gaze_ms = std::max(rt, 1.0);
            u.unigram_surprisal_bits = unigram_bits;
            sent.units.push_back(std::move(u));
        }
        corpus.sentences.push_back(std::move(sent));
    }
    return corpus;
}

}  // namespace rtalign
