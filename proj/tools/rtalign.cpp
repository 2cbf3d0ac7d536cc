// Command-line surface for the reading-time alignment pipeline.
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rtalign/align.hpp"
#include "rtalign/corpus.hpp"
#include "rtalign/genmetrics.hpp"
#include "rtalign/lm.hpp"
#include "rtalign/regress.hpp"

namespace {

using nlohmann::json;
using namespace rtalign;

constexpr const char* kVersion = "1.0.0";

// FNV-1a 64-bit digest of a file, hex-encoded; enough to pin inputs in the
// run manifest.
std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open input file: " + path);
    std::uint64_t h = 1469598103934665603ULL;
    char c;
    while (in.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write output file: " + path);
    out << content;
}

void write_manifest(const std::string& output_dir, const std::string& command,
                    const json& resolved_config, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs, std::uint64_t seed) {
    json manifest;
    manifest["command"] = command;
    manifest["tool_version"] = kVersion;
    manifest["config"] = resolved_config;
    manifest["seed"] = seed;
    json digests = json::object();
    for (const auto& path : inputs) digests[path] = file_digest(path);
    manifest["input_digests"] = std::move(digests);
    manifest["outputs"] = outputs;
    write_file(output_dir + "/manifest.json", manifest.dump(2) + "\n");
}

MeasurementKind parse_measurement(const std::string& s) {
    if (s == "first") return MeasurementKind::first_fixation;
    return measurement_kind_from_string(s);
}

json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DomainError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DomainError("config is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw DomainError("config root must be a JSON object");
    return j;
}

template <typename T>
T config_get(const json& j, const std::string& field, T fallback) {
    if (!j.contains(field)) return fallback;
    try {
        return j.at(field).get<T>();
    } catch (const json::exception&) {
        throw DomainError("config field has the wrong type: " + field);
    }
}

template <typename T>
T config_require(const json& j, const std::string& field) {
    if (!j.contains(field)) throw DomainError("missing config field: " + field);
    try {
        return j.at(field).get<T>();
    } catch (const json::exception&) {
        throw DomainError("config field has the wrong type: " + field);
    }
}

std::vector<std::vector<std::string>> corpus_sentences(const Corpus& corpus) {
    std::vector<std::vector<std::string>> out;
    for (const auto& s : corpus.sentences) out.push_back(s.words());
    return out;
}

std::vector<std::vector<std::string>> read_sentence_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path);
    std::vector<std::vector<std::string>> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream words(line);
        std::vector<std::string> sentence;
        std::string w;
        while (words >> w) sentence.push_back(w);
        if (!sentence.empty()) out.push_back(std::move(sentence));
    }
    return out;
}

// ---- subcommand payloads ----

int run_ingest(const std::string& corpus_path, const std::string& measurement) {
    const MeasurementKind kind = parse_measurement(measurement);
    const Corpus corpus = parse_corpus_file(corpus_path, kind);

    std::size_t zeros = 0, units = 0;
    double mean = 0.0;
    for (const auto& s : corpus.sentences) {
        for (const auto& u : s.units) {
            const double rt = u.measurement(kind);
            ++units;
            if (rt == 0.0) ++zeros;
            mean += rt;
        }
    }
    mean /= static_cast<double>(units);
    double var = 0.0;
    for (const auto& s : corpus.sentences) {
        for (const auto& u : s.units) {
            const double d = u.measurement(kind) - mean;
            var += d * d;
        }
    }

    json summary;
    summary["corpus"] = corpus_path;
    summary["measurement"] = to_string(kind);
    summary["sentences"] = corpus.sentences.size();
    summary["units"] = units;
    summary["mean_ms"] = mean;
    summary["std_ms"] = std::sqrt(var / static_cast<double>(units));
    summary["zeros"] = zeros;
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int run_eval_surprisal(const std::string& corpus_path, const std::string& surprisal_path,
                       const std::string& measurement, std::size_t k, std::uint64_t seed) {
    const MeasurementKind kind = parse_measurement(measurement);
    const Corpus corpus = parse_corpus_file(corpus_path, kind);
    const UnigramModel unigrams = UnigramModel::from_corpus(corpus);

    // rows: doc_id \t sent_id \t word_index \t surprisal_bits
    std::ifstream in(surprisal_path);
    if (!in) throw DataError("cannot open surprisal file: " + surprisal_path);
    std::map<std::tuple<std::string, std::string, std::size_t>, double> surprisal;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string doc, sent, index, value;
        if (!std::getline(fields, doc, '\t') || !std::getline(fields, sent, '\t') ||
            !std::getline(fields, index, '\t') || !std::getline(fields, value, '\t')) {
            throw ParseError("surprisal file line " + std::to_string(line_no) +
                             ": expected 4 tab-separated fields");
        }
        try {
            surprisal[{doc, sent, std::stoul(index)}] = std::stod(value);
        } catch (const std::exception&) {
            throw ParseError("surprisal file line " + std::to_string(line_no) +
                             ": non-numeric field");
        }
    }

    std::vector<RegressionRow> rows;
    std::vector<std::string> missing;
    for (const auto& sentence : corpus.sentences) {
        for (const auto& u : sentence.units) {
            if (u.measurement(kind) <= 0.0 || !unigrams.contains(u.word)) continue;
            const auto it = surprisal.find({u.doc_id, u.sent_id, u.word_index});
            if (it == surprisal.end()) {
                if (missing.size() < 10) {
                    missing.push_back(u.doc_id + "/" + u.sent_id + "/" +
                                      std::to_string(u.word_index));
                }
                continue;
            }
            rows.push_back({it->second, unigram_surprisal(unigrams, u.word),
                            static_cast<double>(u.length_chars), u.measurement(kind)});
        }
    }
    if (!missing.empty()) {
        std::string joined;
        for (const auto& m : missing) joined += (joined.empty() ? "" : ", ") + m;
        throw DataError("surprisal file misses eligible units: " + joined);
    }

    const CVReport report = kfold_cv(rows, k, seed);
    std::cout << to_json(report) << "\n";
    return 0;
}

int run_pretrain(const json& config, const std::string& output_dir) {
    const std::string corpus_path = config_require<std::string>(config, "corpus");
    const MeasurementKind kind =
        parse_measurement(config_get<std::string>(config, "measurement", "gaze"));
    const Corpus corpus = parse_corpus_file(corpus_path, kind);

    LMConfig lm_config;
    lm_config.context_window = config_get<std::size_t>(config, "context_window", 16);
    lm_config.embed_dim = config_get<std::size_t>(config, "embed_dim", 32);
    lm_config.n_layers = config_get<std::size_t>(config, "n_layers", 2);
    lm_config.n_heads = config_get<std::size_t>(config, "n_heads", 1);
    lm_config.ffn_dim = config_get<std::size_t>(config, "ffn_dim", 64);
    lm_config.seed = config_get<std::uint64_t>(config, "seed", 0);

    PretrainSettings settings;
    settings.steps = config_get<std::size_t>(config, "steps", 2000);
    settings.lr = config_get<double>(config, "lr", 3e-3);
    settings.seed = lm_config.seed;

    const LMModel model = pretrain_mle(lm_config, corpus_sentences(corpus), settings);
    const std::string checkpoint = output_dir + "/checkpoint.json";
    save_checkpoint(model, checkpoint);

    json resolved = config;
    resolved["corpus"] = corpus_path;
    write_manifest(output_dir, "pretrain", resolved, {corpus_path}, {checkpoint},
                   lm_config.seed);
    std::cout << json{{"checkpoint", checkpoint},
                      {"perplexity", perplexity(model, corpus)}}
                     .dump(2)
              << "\n";
    return 0;
}

AlignConfig align_config_from(const json& config) {
    AlignConfig a;
    a.lambda = config_get<double>(config, "lambda", 0.0);
    a.rho = config_get<double>(config, "rho", 1e-5);
    a.total_steps = config_get<std::size_t>(config, "total_steps", 5000);
    a.grad_accum = config_get<std::size_t>(config, "grad_accum", 2);
    a.batch_sentences = config_get<std::size_t>(config, "batch_sentences", 1);
    a.eval_every = config_get<std::size_t>(config, "eval_every", 50);
    a.cv_folds = config_get<std::size_t>(config, "cv_folds", 5);
    a.schedule.max_lr = config_get<double>(config, "max_lr", 1.5e-5);
    a.schedule.min_lr = config_get<double>(config, "min_lr", 2e-7);
    a.schedule.max_lr_decay = config_get<double>(config, "max_lr_decay", 0.8);
    a.schedule.cycle_mult = config_get<double>(config, "cycle_mult", 1.8);
    a.schedule.warmup_steps = config_get<std::size_t>(config, "warmup_steps", 100);
    a.schedule.first_cycle_steps = config_get<std::size_t>(config, "first_cycle_steps", 200);
    a.weight_decay = config_get<double>(config, "weight_decay", 0.01);
    a.seed = config_get<std::uint64_t>(config, "seed", 0);
    if (a.lambda < 0.0 || a.rho <= 0.0) {
        throw DomainError("config fields lambda/rho out of range");
    }
    if (a.schedule.first_cycle_steps == 0) {
        throw DomainError("config field first_cycle_steps must be positive");
    }
    if (a.schedule.max_lr <= 0.0 || a.schedule.min_lr <= 0.0 ||
        a.schedule.min_lr > a.schedule.max_lr) {
        throw DomainError("config fields max_lr/min_lr out of range");
    }
    return a;
}

int run_train(const json& config, const std::string& output_dir, bool control) {
    const std::string corpus_path = config_require<std::string>(config, "corpus");
    const std::string checkpoint_path = config_require<std::string>(config, "checkpoint");
    const MeasurementKind kind =
        parse_measurement(config_get<std::string>(config, "measurement", "gaze"));
    const AlignConfig align = align_config_from(config);

    const Corpus corpus = parse_corpus_file(corpus_path, kind);
    SplitSpec spec;
    spec.master_seed = config_get<std::uint64_t>(config, "master_seed", 42);
    spec.run_seed = align.seed;
    const auto [train_split, test_split] = split_corpus(corpus, spec);
    const UnigramModel unigrams = UnigramModel::from_corpus(train_split);

    LMModel model = load_checkpoint(checkpoint_path);
    const LMModel ref = snapshot_reference(model);

    const TrainLog log =
        control ? random_rt_control(model, ref, train_split, test_split, unigrams, align)
                : train(model, ref, train_split, test_split, unigrams, align);

    const std::string csv_path = output_dir + "/trainlog.csv";
    const std::string json_path = output_dir + "/trainlog.json";
    const std::string final_path = output_dir + "/final_checkpoint.json";
    write_file(csv_path, to_csv(log));
    write_file(json_path, to_json(log) + "\n");
    save_checkpoint(model, final_path);

    write_manifest(output_dir, control ? "control-random-rt" : "train", config,
                   {corpus_path, checkpoint_path}, {csv_path, json_path, final_path},
                   align.seed);
    std::cout << json{{"records", log.records.size()},
                      {"final_dllh_nats", log.records.back().dllh_nats},
                      {"final_mse", log.records.back().mse},
                      {"final_kl", log.records.back().kl}}
                     .dump(2)
              << "\n";
    return 0;
}

int run_generate(const json& config, const std::string& output_dir) {
    const std::string checkpoint_path = config_require<std::string>(config, "checkpoint");
    const std::string prefix_path = config_require<std::string>(config, "prefixes");
    const LMModel model = load_checkpoint(checkpoint_path);
    const auto prefixes = read_sentence_lines(prefix_path);
    if (prefixes.empty()) throw DataError("prefix file has no prefixes");
    const std::size_t max_len = config_get<std::size_t>(config, "max_len", 50);
    const double temperature = config_get<double>(config, "temperature", 1.0);
    const std::uint64_t seed = config_get<std::uint64_t>(config, "seed", 0);

    json completions = json::array();
    for (std::size_t p = 0; p < prefixes.size(); ++p) {
        const auto words =
            sample(model, prefixes[p], max_len, temperature,
                   seed + 0x9e3779b97f4a7c15ULL * (p + 1));
        completions.push_back({{"prefix", prefixes[p]}, {"completion", words}});
    }
    const std::string out_path = output_dir + "/completions.json";
    write_file(out_path, completions.dump(2) + "\n");
    write_manifest(output_dir, "generate", config, {checkpoint_path, prefix_path},
                   {out_path}, seed);
    std::cout << json{{"completions", prefixes.size()}, {"output", out_path}}.dump(2) << "\n";
    return 0;
}

int run_uid_report(const json& config, const std::string& output_dir) {
    const std::string generator_path = config_require<std::string>(config, "checkpoint");
    const std::string scorer_path =
        config_get<std::string>(config, "scorer_checkpoint", generator_path);
    const std::string prefix_path = config_require<std::string>(config, "prefixes");
    const LMModel generator = load_checkpoint(generator_path);
    const LMModel scorer = load_checkpoint(scorer_path);
    const auto prefixes = read_sentence_lines(prefix_path);
    if (prefixes.empty()) throw DataError("prefix file has no prefixes");

    GenerationSettings settings;
    settings.max_len = config_get<std::size_t>(config, "max_len", 50);
    settings.completions_per_prefix =
        config_get<std::size_t>(config, "completions_per_prefix", 1);
    settings.temperature = config_get<double>(config, "temperature", 1.0);
    settings.seed = config_get<std::uint64_t>(config, "seed", 0);

    const GenerationReport report = generation_report(generator, scorer, prefixes, settings);
    const std::string out_path = output_dir + "/uid_report.json";
    write_file(out_path, to_json(report) + "\n");
    write_manifest(output_dir, "uid-report", config,
                   {generator_path, scorer_path, prefix_path}, {out_path}, settings.seed);
    std::cout << json{{"n_scored", report.n_scored},
                      {"uid_variance", report.uid_variance.mean},
                      {"output", out_path}}
                     .dump(2)
              << "\n";
    return 0;
}

int run_minimal_pairs(const std::string& checkpoint_path, const std::string& pairs_path) {
    const LMModel model = load_checkpoint(checkpoint_path);
    std::ifstream in(pairs_path);
    if (!in) throw DataError("cannot open pairs file: " + pairs_path);
    std::vector<MinimalPair> pairs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ParseError("pairs file line " + std::to_string(line_no) +
                             ": expected `good<TAB>bad`");
        }
        auto split_words = [](const std::string& s) {
            std::istringstream words(s);
            std::vector<std::string> out;
            std::string w;
            while (words >> w) out.push_back(w);
            return out;
        };
        pairs.push_back({split_words(line.substr(0, tab)), split_words(line.substr(tab + 1))});
    }
    if (pairs.empty()) throw DataError("pairs file has no pairs");
    std::cout << json{{"pairs", pairs.size()},
                      {"accuracy", minimal_pair_accuracy(model, pairs)}}
                     .dump(2)
              << "\n";
    return 0;
}

int fail(const std::string& kind, const std::string& message, int code) {
    std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reading-time alignment pipeline"};
    app.require_subcommand(1);

    // ingest
    std::string corpus_path, measurement = "gaze";
    CLI::App* ingest = app.add_subcommand("ingest", "Validate and summarize a corpus");
    ingest->add_option("corpus", corpus_path)->required();
    ingest->add_option("--measurement", measurement)
        ->check(CLI::IsMember({"gaze", "total", "first", "first_fixation"}));

    // eval-surprisal
    std::string surprisal_path;
    std::size_t k_folds = 5;
    std::uint64_t cv_seed = 0;
    CLI::App* eval = app.add_subcommand("eval-surprisal",
                                        "Cross-validated evaluation of external surprisals");
    eval->add_option("corpus", corpus_path)->required();
    eval->add_option("surprisal", surprisal_path)->required();
    eval->add_option("--measurement", measurement)
        ->check(CLI::IsMember({"gaze", "total", "first", "first_fixation"}));
    eval->add_option("--k", k_folds);
    eval->add_option("--seed", cv_seed);

    // config-driven subcommands
    std::string config_path, output_dir = ".";
    std::optional<double> lambda_override;
    std::optional<std::size_t> steps_override;
    std::optional<std::uint64_t> seed_override;
    auto add_config_flags = [&](CLI::App* cmd, bool with_train_flags) {
        cmd->add_option("--config", config_path)->required();
        cmd->add_option("--output-dir", output_dir);
        if (with_train_flags) {
            cmd->add_option("--lambda", lambda_override);
            cmd->add_option("--steps", steps_override);
            cmd->add_option("--seed", seed_override);
        }
    };
    CLI::App* pretrain = app.add_subcommand("pretrain", "Pretrain a toy LM by MLE");
    add_config_flags(pretrain, false);
    CLI::App* train_cmd = app.add_subcommand("train", "Align an LM to reading times");
    add_config_flags(train_cmd, true);
    CLI::App* control =
        app.add_subcommand("control-random-rt", "Train against moment-matched random RTs");
    add_config_flags(control, true);
    CLI::App* generate = app.add_subcommand("generate", "Sample completions from a checkpoint");
    add_config_flags(generate, false);
    CLI::App* uid = app.add_subcommand("uid-report", "Uniformity and diversity metrics");
    add_config_flags(uid, false);

    // minimal-pairs
    std::string checkpoint_path, pairs_path;
    CLI::App* pairs = app.add_subcommand("minimal-pairs", "Grammaticality preference probe");
    pairs->add_option("checkpoint", checkpoint_path)->required();
    pairs->add_option("pairs", pairs_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        return fail("usage", e.what(), 2);
    }

    try {
        if (*ingest) return run_ingest(corpus_path, measurement);
        if (*eval) return run_eval_surprisal(corpus_path, surprisal_path, measurement,
                                             k_folds, cv_seed);
        if (*pairs) return run_minimal_pairs(checkpoint_path, pairs_path);

        std::filesystem::create_directories(output_dir);
        json config = load_config(config_path);
        if (lambda_override) config["lambda"] = *lambda_override;
        if (steps_override) config["total_steps"] = *steps_override;
        if (seed_override) config["seed"] = *seed_override;

        if (*pretrain) return run_pretrain(config, output_dir);
        if (*train_cmd) return run_train(config, output_dir, false);
        if (*control) return run_train(config, output_dir, true);
        if (*generate) return run_generate(config, output_dir);
        if (*uid) return run_uid_report(config, output_dir);
        return fail("usage", "no subcommand selected", 2);
    } catch (const ParseError& e) {
        return fail("parse", e.what(), 2);
    } catch (const DomainError& e) {
        return fail("config", e.what(), 2);
    } catch (const ConstructionError& e) {
        return fail("config", e.what(), 2);
    } catch (const EmptyCorpusError& e) {
        return fail("data", e.what(), 3);
    } catch (const SplitError& e) {
        return fail("data", e.what(), 3);
    } catch (const MissingFrequencyError& e) {
        return fail("data", e.what(), 3);
    } catch (const DataError& e) {
        return fail("data", e.what(), 3);
    } catch (const NotSpdError& e) {
        return fail("numeric", e.what(), 4);
    } catch (const SingularDesignError& e) {
        return fail("numeric", e.what(), 4);
    } catch (const NumericError& e) {
        return fail("numeric", e.what(), 4);
    } catch (const TrainingError& e) {
        return fail("numeric", e.what(), 4);
    } catch (const ModelError& e) {
        return fail("numeric", e.what(), 4);
    } catch (const std::exception& e) {
        return fail("internal", e.what(), 4);
    }
}
