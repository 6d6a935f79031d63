#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "demspec/checkpoint.hpp"
#include "demspec/corpus.hpp"
#include "demspec/digest.hpp"
#include "demspec/error.hpp"
#include "demspec/experiments.hpp"
#include "demspec/finetune.hpp"
#include "demspec/metaanalysis.hpp"
#include "demspec/probe.hpp"
#include "demspec/specialize.hpp"
#include "demspec/synthetic.hpp"
#include "demspec/tokenizer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace demspec;

namespace {

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::resource_missing, "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorCode::parse_error, path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::vector<LabeledDocument> load_documents(const fs::path& path) {
    auto loaded = load_corpus(path);
    for (const auto& d : loaded.diagnostics)
        std::cerr << "warning: " << path.string() << ":" << d.line << ": " << d.message << '\n';
    return std::move(loaded.documents);
}

// A prepared data directory: corpus.jsonl plus split.json.
struct PreparedData {
    std::vector<LabeledDocument> corpus;
    CorpusSplit split;
};

PreparedData load_prepared(const fs::path& dir) {
    if (!fs::is_directory(dir)) fail(ErrorCode::resource_missing, "no prepared data directory " + dir.string());
    PreparedData data;
    data.corpus = load_documents(dir / "corpus.jsonl");
    data.split = split_from_json(read_json(dir / "split.json"));
    const std::string digest = corpus_digest(data.corpus);
    if (digest != data.split.corpus_digest)
        fail(ErrorCode::digest_mismatch, "split.json was made from corpus " + data.split.corpus_digest +
                                             " but " + (dir / "corpus.jsonl").string() + " has digest " + digest);
    return data;
}

Checkpoint load_checkpoint(const fs::path& dir) {
    if (!fs::is_directory(dir)) fail(ErrorCode::resource_missing, "no checkpoint directory " + dir.string());
    return Checkpoint::load(dir);
}

template <typename T>
void override_with(T& target, const std::optional<T>& flag) {
    if (flag) target = *flag;
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
    fs::path spec;
    fs::path out;
    std::optional<std::uint64_t> seed;
};

void run_synth(const SynthArgs& a) {
    SyntheticSpec spec = a.spec.empty() ? SyntheticSpec{} : synthetic_spec_from_json(read_json(a.spec));
    override_with(spec.seed, a.seed);
    spec.validate();
    const auto docs = generate_corpus(spec);
    fs::create_directories(a.out);
    write_corpus(a.out / "corpus.jsonl", docs);
    json echo = to_json(spec);
    echo["corpus_digest"] = corpus_digest(docs);
    echo["documents"] = docs.size();
    echo["bayes_optimal_ac"] = bayes_optimal_ac(spec);
    write_json(a.out / "spec.json", echo);
    std::cout << json{{"corpus", (a.out / "corpus.jsonl").string()},
                      {"documents", docs.size()},
                      {"corpus_digest", echo["corpus_digest"]}}
                     .dump()
              << '\n';
}

// ---- prepare ---------------------------------------------------------------

struct PrepareArgs {
    fs::path corpus;
    std::string dimension;
    std::string dataset;
    std::uint64_t seed = 0;
    fs::path out;
    std::optional<std::size_t> finetune_per_class;
    double specialization_fraction = 0.5;
    std::size_t topic_count = 5;
};

void run_prepare(const PrepareArgs& a) {
    const Dimension dim = parse_enum<Dimension>(a.dimension);
    const Dataset dataset = parse_enum<Dataset>(a.dataset);
    require(a.specialization_fraction >= 0 && a.specialization_fraction < 1, ErrorCode::invalid_argument,
            "--specialization-fraction must lie in [0, 1)");
    const auto docs = load_documents(a.corpus);

    SplitOptions options;
    options.topic_count = a.topic_count;
    if (a.finetune_per_class) {
        options.finetune_per_class = *a.finetune_per_class;
    } else if (a.specialization_fraction > 0) {
        std::array<std::size_t, 2> per_class{};
        for (const auto& d : docs)
            if (eligible_for(d, dim, dataset)) ++per_class[static_cast<std::size_t>(*d.demographic(dim))];
        const auto smaller = std::min(per_class[0], per_class[1]);
        options.finetune_per_class =
            std::max<std::size_t>(1, static_cast<std::size_t>(static_cast<double>(smaller) *
                                                               (1.0 - a.specialization_fraction)));
    }
    const CorpusSplit split = make_split(docs, dim, dataset, a.seed, options);

    fs::create_directories(a.out);
    write_corpus(a.out / "corpus.jsonl", docs);
    json manifest = to_json(split);
    manifest["source"] = a.corpus.string();
    manifest["options"] = {{"finetune_per_class", options.finetune_per_class}, {"topic_count", options.topic_count}};
    write_json(a.out / "split.json", manifest);
    std::cout << json{{"split", (a.out / "split.json").string()},
                      {"specialization", split.specialization.size()},
                      {"train", split.train.size()},
                      {"dev", split.dev.size()},
                      {"test", split.test.size()},
                      {"corpus_digest", split.corpus_digest}}
                     .dump()
              << '\n';
}

// ---- specialize ------------------------------------------------------------

struct SpecializeArgs {
    std::string base;
    std::string method;
    fs::path config;
    fs::path data;
    fs::path out;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    std::optional<int> batch_size;
    std::optional<std::vector<double>> lr_grid;
    std::optional<int> patience;
    std::optional<double> mask_rate;
    std::optional<std::size_t> per_group;
};

void run_specialize(const SpecializeArgs& a) {
    const json file = a.config.empty() ? json::object() : read_json(a.config);
    SpecializationConfig cfg = specialization_config_from_json(file);
    cfg.method = parse_enum<Method>(a.method);
    require(cfg.method != Method::vanilla, ErrorCode::invalid_argument, "vanilla is not a specialization method");
    override_with(cfg.seed, a.seed);
    override_with(cfg.epochs, a.epochs);
    override_with(cfg.batch_size, a.batch_size);
    override_with(cfg.lr_grid, a.lr_grid);
    override_with(cfg.patience, a.patience);
    override_with(cfg.mask_rate, a.mask_rate);

    std::vector<LabeledDocument> corpus;
    std::vector<LabeledDocument> tokenizer_docs;
    std::string corpus_source;
    if (fs::is_directory(a.data)) {
        auto data = load_prepared(a.data);
        cfg.dimension = data.split.dimension;
        corpus = select_documents(data.corpus, data.split.specialization);
        require(!corpus.empty(), ErrorCode::insufficient_data,
                "the specialization partition of " + a.data.string() +
                    " is empty; rerun prepare with a positive --specialization-fraction");
        tokenizer_docs = std::move(data.corpus);
        corpus_source = data.split.corpus_digest;
    } else {
        corpus = load_documents(a.data);
        tokenizer_docs = corpus;
        corpus_source = corpus_digest(corpus);
    }
    const std::size_t per_group = a.per_group.value_or(file.value("specialization_per_group", std::size_t{0}));
    if (per_group > 0) corpus = sample_specialization(corpus, cfg.dimension, per_group, cfg.seed);
    cfg.validate();

    Checkpoint base;
    if (a.base == "fresh") {
        const EncoderConfig enc =
            file.contains("encoder") ? encoder_config_from_json(file.at("encoder")) : EncoderConfig{};
        const auto vocab = file.value("tokenizer_vocab", std::size_t{8000});
        base = fresh_checkpoint(enc, Tokenizer::build(tokenizer_docs, vocab), file.value("fresh_seed", std::uint64_t{0}));
    } else {
        base = load_checkpoint(a.base);
    }

    const auto result = specialize(base, corpus, cfg);
    Checkpoint out = result.checkpoint;
    out.metadata["specialization"]["source_corpus_digest"] = corpus_source;
    out.save(a.out);
    write_training_log(a.out / "training_log.jsonl", result.log);
    std::cout << json{{"checkpoint", a.out.string()},
                      {"digest", out.digest()},
                      {"chosen_lr", result.chosen_lr},
                      {"epochs", result.log.size()},
                      {"initial_dev_mlm", result.initial_dev_mlm},
                      {"final_dev_mlm", result.final_dev_mlm}}
                     .dump()
              << '\n';
}

// ---- finetune --------------------------------------------------------------

struct FinetuneArgs {
    fs::path base;
    std::string task;
    fs::path config;
    fs::path data;
    fs::path out;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    std::optional<int> batch_size;
    std::optional<std::vector<double>> lr_grid;
    std::optional<int> patience;
};

void run_finetune(const FinetuneArgs& a) {
    const json file = a.config.empty() ? json::object() : read_json(a.config);
    FineTuneConfig cfg = finetune_config_from_json(file);
    cfg.task = parse_enum<Task>(a.task);
    override_with(cfg.seed, a.seed);
    override_with(cfg.epochs, a.epochs);
    override_with(cfg.batch_size, a.batch_size);
    override_with(cfg.lr_grid, a.lr_grid);
    override_with(cfg.patience, a.patience);
    const auto data = load_prepared(a.data);
    const Checkpoint base = load_checkpoint(a.base);
    const auto result = finetune(base, data.corpus, data.split, cfg);
    result.classifier.save(a.out);
    std::cout << json{{"checkpoint", a.out.string()},
                      {"digest", result.classifier.digest()},
                      {"chosen_lr", result.chosen_lr},
                      {"dev_f1", result.dev_f1}}
                     .dump()
              << '\n';
}

// ---- evaluate --------------------------------------------------------------

struct EvaluateArgs {
    fs::path model;
    fs::path data;
    std::string subset;
    fs::path out;
    std::optional<std::string> country;
    std::optional<std::string> base_model;
    std::optional<std::string> spec_domain;
    std::optional<std::uint64_t> seed;
};

Subset parse_subset(const std::string& text) {
    if (text == "a" || text == "A") return Subset::class_a;
    if (text == "b" || text == "B") return Subset::class_b;
    return parse_enum<Subset>(text);
}

void run_evaluate(const EvaluateArgs& a) {
    const Checkpoint classifier = load_checkpoint(a.model);
    const Subset subset = parse_subset(a.subset);
    std::vector<LabeledDocument> docs;
    std::string digest;
    if (fs::is_directory(a.data)) {
        const auto data = load_prepared(a.data);
        docs = select_documents(data.corpus, data.split.test);
        digest = data.split.corpus_digest;
    } else {
        docs = load_documents(a.data);
        digest = corpus_digest(docs);
    }
    const Evaluation ev = evaluate(classifier, docs, subset);

    const json& meta = classifier.metadata;
    const json& ft = meta.at("finetune");
    ResultRecord r;
    r.dataset = parse_enum<Dataset>(ft.at("dataset").get<std::string>());
    r.task = task_of(r.dataset);
    r.dimension = parse_enum<Dimension>(ft.at("dimension").get<std::string>());
    r.method = meta.contains("specialization")
                   ? parse_enum<Method>(meta["specialization"]["config"].at("method").get<std::string>())
                   : Method::vanilla;
    r.spec_domain = r.method == Method::vanilla ? SpecDomain::none : SpecDomain::in_domain;
    if (a.spec_domain) r.spec_domain = parse_enum<SpecDomain>(*a.spec_domain);
    r.base_model = a.base_model ? parse_enum<BaseModel>(*a.base_model) : BaseModel::multilingual;
    r.subset = subset;
    r.seed = a.seed.value_or(ft.at("config").value("seed", std::uint64_t{0}));
    r.f1 = ev.f1;
    r.corpus_digest = digest;
    r.country = a.country.value_or(docs.front().country);
    r.language = docs.front().language;
    r.cell_id = Digest()
                    .update(classifier.digest())
                    .update(digest)
                    .update(std::string_view(to_string(subset)))
                    .hex();
    r.validate();
    append_result(a.out, r);
    json line = to_json(r);
    line["accuracy"] = ev.accuracy;
    line["documents"] = ev.documents;
    std::cout << line.dump() << '\n';
}

// ---- grid ------------------------------------------------------------------

struct GridArgs {
    fs::path spec;
    fs::path registry;
    fs::path out;
    fs::path work_dir;
    int workers = 1;
    bool strict = false;
    bool quiet = false;
};

int run_grid_command(const GridArgs& a) {
    require(a.workers >= 1, ErrorCode::usage, "--workers must be at least 1");
    const ExperimentGrid grid = experiment_grid_from_json(read_json(a.spec));
    const Registry registry = load_registry(a.registry);
    GridOptions options;
    options.results = a.out;
    options.work_dir = a.work_dir.empty() ? fs::path(a.out.string() + ".work") : a.work_dir;
    options.workers = a.workers;
    if (!a.quiet) options.progress = [](const std::string& msg) { std::cerr << msg << '\n'; };
    const GridRun run = run_grid(grid, registry, options);
    json failures = json::array();
    for (const auto& f : run.stats.failures) failures.push_back(to_json(f));
    std::cout << json{{"cells", run.stats.cells},
                      {"skipped", run.stats.skipped},
                      {"executed", run.stats.executed},
                      {"failed", run.stats.failed},
                      {"trials", run.stats.trials},
                      {"records", run.records.size()},
                      {"failures", failures}}
                     .dump()
              << '\n';
    return a.strict && run.stats.failed > 0 ? static_cast<int>(ExitCode::contract) : 0;
}

// ---- meta, report, probe ---------------------------------------------------

void run_meta(const fs::path& results, const fs::path& out) {
    const auto records = read_results(results);
    require(!records.empty(), ErrorCode::insufficient_data, "no results in " + results.string());
    check_consistent_digests(records);
    write_meta_report(records, out);
    std::cout << json{{"report", out.string()}, {"records", records.size()}}.dump() << '\n';
}

void run_report(const fs::path& results, const fs::path& out) {
    const auto records = read_results(results);
    require(!records.empty(), ErrorCode::insufficient_data, "no results in " + results.string());
    const auto files = write_report(records, out);
    json written = json::array();
    for (const auto& f : files) written.push_back(f.string());
    std::cout << json{{"files", written}, {"records", records.size()}}.dump() << '\n';
}

struct ProbeArgs {
    fs::path model;
    fs::path data;
    std::string label;
    fs::path out;
    std::uint64_t seed = 0;
    int shuffles = 100;
    std::size_t max_points = 2000;
    bool no_projection = false;
};

void run_probe_command(const ProbeArgs& a) {
    const Checkpoint ckpt = load_checkpoint(a.model);
    std::vector<LabeledDocument> docs;
    if (fs::is_directory(a.data)) {
        const auto data = load_prepared(a.data);
        docs = data.corpus;
    } else {
        docs = load_documents(a.data);
    }
    ProbeOptions options;
    options.label = parse_enum<ProbeLabel>(a.label);
    options.seed = a.seed;
    options.shuffles = a.shuffles;
    options.max_points = a.max_points;
    options.project = !a.no_projection;
    const ProbeScore score = run_probe(ckpt, docs, options, a.out);
    std::cout << to_json(score).dump() << '\n';
}

void report_error(ErrorCode code, const std::string& message) {
    std::cerr << json{{"error", {{"code", error_code_name(code)}, {"message", message}}}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Demographic specialization experiments: synthetic corpora, specialization, "
                 "fine-tuning, grids, meta-regression and representation probes."};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Expand all subcommand help");

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "Generate a synthetic corpus");
    c_synth->add_option("--spec", synth.spec, "Synthetic corpus spec (JSON); defaults apply to missing keys");
    c_synth->add_option("--out", synth.out, "Output directory (corpus.jsonl, spec.json)")->required();
    c_synth->add_option("--seed", synth.seed, "Overrides the spec seed");

    PrepareArgs prep;
    auto* c_prep = app.add_subcommand("prepare", "Make a balanced train/dev/test split");
    c_prep->add_option("--corpus", prep.corpus, "Corpus JSONL")->required();
    c_prep->add_option("--dimension", prep.dimension, "gender or age")->required();
    c_prep->add_option("--task", prep.dataset, "Dataset: AC-SA, AC-TD, SA or TD")->required();
    c_prep->add_option("--seed", prep.seed, "Split seed")->capture_default_str();
    c_prep->add_option("--out", prep.out, "Output directory (corpus.jsonl, split.json)")->required();
    c_prep->add_option("--finetune-per-class", prep.finetune_per_class,
                       "Documents per class for train/dev/test; overrides --specialization-fraction");
    c_prep->add_option("--specialization-fraction", prep.specialization_fraction,
                       "Share of each class held out for specialization")
        ->capture_default_str();
    c_prep->add_option("--topic-count", prep.topic_count, "Topics kept for topic datasets")->capture_default_str();

    SpecializeArgs spec;
    auto* c_spec = app.add_subcommand("specialize", "Continue training with MLM or a demographic objective");
    c_spec->add_option("--base", spec.base, "Base checkpoint directory or 'fresh'")->required();
    c_spec->add_option("--method", spec.method, "mlm, ds-seq or ds-tok")->required();
    c_spec->add_option("--config", spec.config,
                       "Specialization config JSON; may also hold encoder, tokenizer_vocab, fresh_seed");
    c_spec->add_option("--data", spec.data, "Prepared data directory or corpus JSONL")->required();
    c_spec->add_option("--out", spec.out, "Output checkpoint directory")->required();
    c_spec->add_option("--seed", spec.seed, "Overrides config seed");
    c_spec->add_option("--epochs", spec.epochs, "Overrides config epochs");
    c_spec->add_option("--batch-size", spec.batch_size, "Overrides config batch_size");
    c_spec->add_option("--lr", spec.lr_grid, "Overrides config lr_grid")->delimiter(',');
    c_spec->add_option("--patience", spec.patience, "Overrides config patience");
    c_spec->add_option("--mask-rate", spec.mask_rate, "Overrides config mask_rate");
    c_spec->add_option("--per-group", spec.per_group, "Samples this many documents per demographic class");

    FinetuneArgs ft;
    auto* c_ft = app.add_subcommand("finetune", "Fine-tune a classifier on a prepared split");
    c_ft->add_option("--base", ft.base, "Base checkpoint directory")->required();
    c_ft->add_option("--task", ft.task, "ac, sa or td")->required();
    c_ft->add_option("--config", ft.config, "Fine-tuning config JSON");
    c_ft->add_option("--data", ft.data, "Prepared data directory")->required();
    c_ft->add_option("--out", ft.out, "Output checkpoint directory")->required();
    c_ft->add_option("--seed", ft.seed, "Overrides config seed");
    c_ft->add_option("--epochs", ft.epochs, "Overrides config epochs");
    c_ft->add_option("--batch-size", ft.batch_size, "Overrides config batch_size");
    c_ft->add_option("--lr", ft.lr_grid, "Overrides config lr_grid")->delimiter(',');
    c_ft->add_option("--patience", ft.patience, "Overrides config patience");

    EvaluateArgs ev;
    auto* c_ev = app.add_subcommand("evaluate", "Score a classifier and append a result record");
    c_ev->add_option("--model", ev.model, "Classifier checkpoint directory")->required();
    c_ev->add_option("--data", ev.data, "Prepared data directory (test partition) or corpus JSONL")->required();
    c_ev->add_option("--subset", ev.subset, "a, b or mixed")->required();
    c_ev->add_option("--out", ev.out, "Results JSONL (appended)")->required();
    c_ev->add_option("--country", ev.country, "Defaults to the documents' country");
    c_ev->add_option("--base-model", ev.base_model, "multilingual (default) or monolingual");
    c_ev->add_option("--spec-domain", ev.spec_domain, "in-domain, out-of-domain or none");
    c_ev->add_option("--seed", ev.seed, "Defaults to the fine-tuning seed");

    GridArgs grid;
    auto* c_grid = app.add_subcommand("grid", "Run an experiment grid into a resumable results store");
    c_grid->add_option("--spec", grid.spec, "Grid spec JSON")->required();
    c_grid->add_option("--registry", grid.registry, "Registry JSON (corpora, base models, configs)")->required();
    c_grid->add_option("--out", grid.out, "Results JSONL")->required();
    c_grid->add_option("--work-dir", grid.work_dir, "Specialization cache (default: <out>.work)");
    c_grid->add_option("--workers", grid.workers, "Worker processes")->capture_default_str();
    c_grid->add_flag("--strict", grid.strict, "Exit nonzero when any cell fails");
    c_grid->add_flag("--quiet", grid.quiet, "No progress lines on stderr");

    fs::path meta_results, meta_out;
    auto* c_meta = app.add_subcommand("meta", "Meta-regression ablation report");
    c_meta->add_option("--results", meta_results, "Results JSONL")->required();
    c_meta->add_option("--out", meta_out, "Output TSV")->required();

    ProbeArgs probe;
    auto* c_probe = app.add_subcommand("probe", "Embed documents and score class separation");
    c_probe->add_option("--model", probe.model, "Checkpoint directory")->required();
    c_probe->add_option("--data", probe.data, "Corpus JSONL or prepared data directory")->required();
    c_probe->add_option("--label", probe.label, "gender, age or language")->required();
    c_probe->add_option("--out", probe.out, "Output directory (points.csv, score.json)")->required();
    c_probe->add_option("--seed", probe.seed, "Sampling, shuffle and projection seed")->capture_default_str();
    c_probe->add_option("--shuffles", probe.shuffles, "Label permutations for the null")->capture_default_str();
    c_probe->add_option("--max-points", probe.max_points, "Documents embedded at most")->capture_default_str();
    c_probe->add_flag("--no-projection", probe.no_projection, "Skip the 2D projection");

    fs::path report_results, report_out;
    auto* c_report = app.add_subcommand("report", "Score and delta tables");
    c_report->add_option("--results", report_results, "Results JSONL")->required();
    c_report->add_option("--out", report_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        report_error(ErrorCode::usage, e.what());
        return static_cast<int>(ExitCode::usage);
    }

    try {
        if (*c_synth) run_synth(synth);
        else if (*c_prep) run_prepare(prep);
        else if (*c_spec) run_specialize(spec);
        else if (*c_ft) run_finetune(ft);
        else if (*c_ev) run_evaluate(ev);
        else if (*c_grid) return run_grid_command(grid);
        else if (*c_meta) run_meta(meta_results, meta_out);
        else if (*c_probe) run_probe_command(probe);
        else if (*c_report) run_report(report_results, report_out);
    } catch (const Error& e) {
        report_error(e.code(), e.what());
        return static_cast<int>(exit_code_for(e.code()));
    } catch (const fs::filesystem_error& e) {
        report_error(ErrorCode::io_error, e.what());
        return static_cast<int>(exit_code_for(ErrorCode::io_error));
    } catch (const json::exception& e) {
        report_error(ErrorCode::parse_error, e.what());
        return static_cast<int>(exit_code_for(ErrorCode::parse_error));
    }
    return 0;
}
