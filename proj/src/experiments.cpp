#include "demspec/experiments.hpp"

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <tuple>

#include "demspec/checkpoint.hpp"
#include "demspec/digest.hpp"
#include "demspec/error.hpp"
#include "demspec/rng.hpp"

namespace demspec {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

template <typename E>
std::vector<E> enum_list(const json& j, const char* key) {
    std::vector<E> out;
    if (!j.contains(key)) return out;
    for (const auto& v : j.at(key)) out.push_back(parse_enum<E>(v.get<std::string>()));
    return out;
}

template <typename E>
json name_list(const std::vector<E>& values) {
    json out = json::array();
    for (E v : values) out.push_back(to_string(v));
    return out;
}

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

}  // namespace

void ExperimentGrid::validate() const {
    require(!methods.empty() && !dimensions.empty() && !countries.empty() && !base_models.empty() &&
                !datasets.empty() && !subsets.empty() && !seeds.empty(),
            ErrorCode::invalid_argument, "every experiment grid axis must be non-empty");
    const bool specialized = std::any_of(methods.begin(), methods.end(), [](Method m) { return m != Method::vanilla; });
    require(!specialized || !spec_domains.empty(), ErrorCode::invalid_argument,
            "spec_domains must be non-empty when the grid has specialization methods");
    for (SpecDomain d : spec_domains)
        require(d != SpecDomain::none, ErrorCode::invalid_argument,
                "spec_domains lists in-domain and/or out-of-domain; 'none' is implied by vanilla");
}

json to_json(const ExperimentGrid& g) {
    return {{"methods", name_list(g.methods)},         {"dimensions", name_list(g.dimensions)},
            {"countries", g.countries},                {"base_models", name_list(g.base_models)},
            {"spec_domains", name_list(g.spec_domains)}, {"datasets", name_list(g.datasets)},
            {"subsets", name_list(g.subsets)},         {"seeds", g.seeds}};
}

ExperimentGrid experiment_grid_from_json(const json& j) {
    ExperimentGrid g;
    try {
        g.methods = enum_list<Method>(j, "methods");
        g.dimensions = enum_list<Dimension>(j, "dimensions");
        g.countries = j.value("countries", std::vector<std::string>{});
        g.base_models = enum_list<BaseModel>(j, "base_models");
        g.spec_domains = enum_list<SpecDomain>(j, "spec_domains");
        g.datasets = enum_list<Dataset>(j, j.contains("datasets") ? "datasets" : "tasks");
        if (j.contains("subsets")) {
            g.subsets.clear();
            for (const auto& s : j.at("subsets")) g.subsets.push_back(parse_subset(s.get<std::string>()));
        }
        g.seeds = j.value("seeds", g.seeds);
    } catch (const json::exception& e) {
        fail(ErrorCode::parse_error, std::string("bad experiment grid: ") + e.what());
    }
    g.validate();
    return g;
}

Registry registry_from_json(const json& j, const fs::path& base_dir) {
    Registry r;
    try {
        for (const auto& [name, entry] : j.at("countries").items()) {
            CountryData c;
            c.language = entry.value("language", "");
            c.corpus = resolve(base_dir, entry.at("corpus").get<std::string>());
            if (entry.contains("specialization"))
                for (const auto& [domain, path] : entry.at("specialization").items())
                    c.specialization[parse_enum<SpecDomain>(domain)] = resolve(base_dir, path.get<std::string>());
            if (entry.contains("base_models"))
                for (const auto& [model, path] : entry.at("base_models").items()) {
                    const auto p = path.get<std::string>();
                    c.base_models[parse_enum<BaseModel>(model)] = p == "fresh" ? p : resolve(base_dir, p).string();
                }
            r.countries.emplace(name, std::move(c));
        }
        if (j.contains("base_models"))
            for (const auto& [model, path] : j.at("base_models").items()) {
                const auto p = path.get<std::string>();
                r.base_models[parse_enum<BaseModel>(model)] = p == "fresh" ? p : resolve(base_dir, p).string();
            }
        if (j.contains("encoder")) r.fresh_encoder = encoder_config_from_json(j.at("encoder"));
        r.tokenizer_vocab = j.value("tokenizer_vocab", r.tokenizer_vocab);
        for (const auto& p : j.value("tokenizer_corpora", std::vector<std::string>{}))
            r.tokenizer_corpora.push_back(resolve(base_dir, p));
        r.fresh_seed = j.value("fresh_seed", r.fresh_seed);
        if (j.contains("specialization"))
            r.specialization = specialization_config_from_json(j.at("specialization"));
        if (j.contains("finetune")) r.finetune = finetune_config_from_json(j.at("finetune"));
        if (j.contains("split")) {
            r.split.finetune_per_class = j.at("split").value("finetune_per_class", r.split.finetune_per_class);
            r.split.topic_count = j.at("split").value("topic_count", r.split.topic_count);
        }
        r.specialization_per_group = j.value("specialization_per_group", r.specialization_per_group);
    } catch (const json::exception& e) {
        fail(ErrorCode::parse_error, std::string("bad registry: ") + e.what());
    }
    return r;
}

Registry load_registry(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::resource_missing, "cannot read registry " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorCode::parse_error, "registry " + path.string() + " is not JSON: " + e.what());
    }
    return registry_from_json(j, path.parent_path());
}

std::string GridCell::describe() const {
    std::string s = country + "/" + to_string(dataset) + "/" + to_string(dimension) + "/" + to_string(base_model) +
                    "/" + to_string(method);
    if (method != Method::vanilla) s += "/" + to_string(spec_domain);
    return s + "/seed" + std::to_string(seed);
}

std::vector<GridCell> expand_grid(const ExperimentGrid& grid) {
    grid.validate();
    std::vector<GridCell> cells;
    for (const auto& country : grid.countries)
        for (Dataset dataset : grid.datasets)
            for (Dimension dim : grid.dimensions)
                for (BaseModel bm : grid.base_models)
                    for (Method method : grid.methods) {
                        std::vector<SpecDomain> domains = {SpecDomain::none};
                        if (method != Method::vanilla) domains = grid.spec_domains;
                        for (SpecDomain domain : domains)
                            for (auto seed : grid.seeds) {
                                GridCell c{country, dataset, dim, bm, method, domain, seed, {}};
                                for (Subset s : grid.subsets)
                                    if (task_of(dataset) != Task::ac || s == Subset::mixed) c.subsets.push_back(s);
                                if (!c.subsets.empty()) cells.push_back(std::move(c));
                            }
                    }
    return cells;
}

json to_json(const CellFailure& f) {
    return {{"cell", f.cell}, {"error", error_code_name(f.code)}, {"message", f.message}};
}

std::vector<ResultRecord> read_results(const fs::path& path) {
    std::vector<ResultRecord> out;
    if (!fs::exists(path)) return out;
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io_error, "cannot read results store " + path.string());
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(result_record_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            fail(ErrorCode::parse_error, path.string() + ":" + std::to_string(number) + ": " + e.what());
        } catch (const Error& e) {
            fail(e.code(), path.string() + ":" + std::to_string(number) + ": " + e.what());
        }
    }
    return out;
}

namespace {

// Appends all lines with one write() on an O_APPEND descriptor, so concurrent
// workers never interleave partial records.
void append_lines(const fs::path& path, const std::string& text) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
    if (fd < 0) fail(ErrorCode::io_error, "cannot open " + path.string() + ": " + std::strerror(errno));
    std::size_t done = 0;
    while (done < text.size()) {
        const ssize_t n = ::write(fd, text.data() + done, text.size() - done);
        if (n < 0) {
            if (errno == EINTR) continue;
            ::close(fd);
            fail(ErrorCode::io_error, "short write to " + path.string());
        }
        done += static_cast<std::size_t>(n);
    }
    ::close(fd);
}

struct LoadedCorpus {
    std::vector<LabeledDocument> docs;
    std::string digest;
};

class CellRunner {
public:
    CellRunner(const Registry& registry, const GridOptions& options) : registry_(registry), options_(options) {}

    std::size_t trials() const { return trials_; }

    // Returns the cell's records; `cell_id` receives the content digest.
    std::vector<ResultRecord> run(const GridCell& cell, const std::set<std::string>& complete, bool& skipped) {
        const auto country_it = registry_.countries.find(cell.country);
        if (country_it == registry_.countries.end())
            fail(ErrorCode::resource_missing, "registry has no country " + cell.country);
        const CountryData& country = country_it->second;
        const LoadedCorpus& corpus = load(country.corpus);

        const CorpusSplit split = make_split(corpus.docs, cell.dimension, cell.dataset, cell.seed, registry_.split);
        const std::string base_id = base_identity(cell);

        std::vector<LabeledDocument> spec_docs;
        SpecializationConfig spec_cfg = registry_.specialization;
        if (cell.method != Method::vanilla) {
            const auto path_it = country.specialization.find(cell.spec_domain);
            if (path_it == country.specialization.end())
                fail(ErrorCode::resource_missing,
                     "registry has no " + to_string(cell.spec_domain) + " specialization corpus for " + cell.country);
            spec_docs = specialization_docs(path_it->second, country.corpus, corpus, split, cell);
            spec_cfg.method = cell.method;
            spec_cfg.dimension = cell.dimension;
            spec_cfg.seed = cell.seed;
        }
        FineTuneConfig ft_cfg = registry_.finetune;
        ft_cfg.task = task_of(cell.dataset);
        ft_cfg.seed = cell.seed;

        Digest id;
        id.update(cell.country).update(to_string(cell.dataset)).update(to_string(cell.dimension));
        id.update(to_string(cell.base_model)).update(to_string(cell.method)).update(to_string(cell.spec_domain));
        id.update(static_cast<std::int64_t>(cell.seed)).update(corpus.digest).update(base_id);
        id.update(to_json(split).dump()).update(to_json(ft_cfg).dump());
        if (cell.method != Method::vanilla) id.update(corpus_digest(spec_docs)).update(to_json(spec_cfg).dump());
        const std::string cell_id = id.hex();

        skipped = std::all_of(cell.subsets.begin(), cell.subsets.end(), [&](Subset s) {
            return complete.count(cell_id + "|" + std::string(to_string(s))) > 0;
        });
        if (skipped) return {};

        const Checkpoint base = base_checkpoint(cell, base_id);
        const Checkpoint* start = &base;
        Checkpoint specialized;
        if (cell.method != Method::vanilla) {
            specialized = specialize_cached(base, base_id, spec_docs, spec_cfg);
            start = &specialized;
        }
        const FineTuneResult ft = finetune(*start, corpus.docs, split, ft_cfg);
        trials_ += ft_cfg.lr_grid.size();

        const auto test_docs = select_documents(corpus.docs, split.test);
        std::vector<ResultRecord> records;
        for (Subset subset : cell.subsets) {
            ResultRecord r;
            r.country = cell.country;
            r.language = country.language;
            r.task = ft_cfg.task;
            r.dataset = cell.dataset;
            r.method = cell.method;
            r.dimension = cell.dimension;
            r.base_model = cell.base_model;
            r.spec_domain = cell.spec_domain;
            r.subset = subset;
            r.seed = cell.seed;
            r.f1 = evaluate(ft.classifier, test_docs, subset).f1;
            r.corpus_digest = corpus.digest;
            r.cell_id = cell_id;
            records.push_back(r);
        }
        return records;
    }

private:
    const LoadedCorpus& load(const fs::path& path) {
        const std::string key = fs::weakly_canonical(path).string();
        auto it = corpora_.find(key);
        if (it != corpora_.end()) return it->second;
        LoadResult loaded = load_corpus(path);
        if (!loaded.diagnostics.empty())
            fail(ErrorCode::parse_error, path.string() + ":" + std::to_string(loaded.diagnostics[0].line) + ": " +
                                             loaded.diagnostics[0].message);
        LoadedCorpus c{std::move(loaded.documents), {}};
        c.digest = corpus_digest(c.docs);
        return corpora_.emplace(key, std::move(c)).first->second;
    }

    std::string base_path(const GridCell& cell) const {
        const CountryData& country = registry_.countries.at(cell.country);
        if (auto it = country.base_models.find(cell.base_model); it != country.base_models.end()) return it->second;
        if (auto it = registry_.base_models.find(cell.base_model); it != registry_.base_models.end())
            return it->second;
        fail(ErrorCode::resource_missing, "registry has no " + to_string(cell.base_model) + " base model");
    }

    const Tokenizer& fresh_tokenizer(const GridCell& cell) {
        const bool multilingual = cell.base_model == BaseModel::multilingual;
        const bool listed = !registry_.tokenizer_corpora.empty();
        const std::string key = multilingual || listed ? std::string("*") : cell.country;
        if (auto it = tokenizers_.find(key); it != tokenizers_.end()) return it->second;
        std::vector<LabeledDocument> all;
        std::set<std::string> seen;
        auto add = [&](const fs::path& p) {
            if (!seen.insert(fs::weakly_canonical(p).string()).second) return;
            const auto& docs = load(p).docs;
            all.insert(all.end(), docs.begin(), docs.end());
        };
        if (listed) {
            for (const auto& p : registry_.tokenizer_corpora) add(p);
        } else {
            for (const auto& [name, c] : registry_.countries)
                if (multilingual || name == cell.country) add(c.corpus);
        }
        return tokenizers_.emplace(key, Tokenizer::build(all, registry_.tokenizer_vocab)).first->second;
    }

    std::string base_identity(const GridCell& cell) {
        const std::string path = base_path(cell);
        if (path == "fresh")
            return "fresh:" + fresh_tokenizer(cell).digest() + ":" + to_json(registry_.fresh_encoder).dump() + ":" +
                   std::to_string(derive_seed(registry_.fresh_seed, cell.seed));
        return checkpoint_at(path).digest();
    }

    const Checkpoint& checkpoint_at(const std::string& path) {
        if (auto it = checkpoints_.find(path); it != checkpoints_.end()) return it->second;
        return checkpoints_.emplace(path, Checkpoint::load(path)).first->second;
    }

    Checkpoint base_checkpoint(const GridCell& cell, const std::string&) {
        const std::string path = base_path(cell);
        if (path == "fresh")
            return fresh_checkpoint(registry_.fresh_encoder, fresh_tokenizer(cell),
                                    derive_seed(registry_.fresh_seed, cell.seed));
        return checkpoint_at(path);
    }

    std::vector<LabeledDocument> specialization_docs(const fs::path& spec_path, const fs::path& corpus_path,
                                                     const LoadedCorpus& corpus, const CorpusSplit& split,
                                                     const GridCell& cell) {
        std::vector<LabeledDocument> docs;
        if (fs::weakly_canonical(spec_path) == fs::weakly_canonical(corpus_path))
            docs = select_documents(corpus.docs, split.specialization);
        else
            docs = load(spec_path).docs;
        if (registry_.specialization_per_group > 0)
            docs = sample_specialization(docs, cell.dimension, registry_.specialization_per_group, cell.seed);
        return docs;
    }

    Checkpoint specialize_cached(const Checkpoint& base, const std::string& base_id,
                                 const std::vector<LabeledDocument>& docs, const SpecializationConfig& cfg) {
        const std::string key =
            Digest().update(base_id).update(corpus_digest(docs)).update(to_json(cfg).dump()).hex();
        if (auto it = specialized_.find(key); it != specialized_.end()) return it->second;
        const fs::path dir = options_.work_dir.empty() ? fs::path() : options_.work_dir / "specialized" / key;
        if (!dir.empty() && fs::exists(dir / "params.bin") && fs::exists(dir / "config.json"))
            return specialized_.emplace(key, Checkpoint::load(dir)).first->second;
        SpecializationResult r = specialize(base, docs, cfg);
        trials_ += cfg.lr_grid.size();
        if (!dir.empty()) {
            r.checkpoint.save(dir);
            write_training_log(dir / "training_log.jsonl", r.log);
        }
        // Only the latest specialization is kept in memory.
        specialized_.clear();
        return specialized_.emplace(key, std::move(r.checkpoint)).first->second;
    }

    const Registry& registry_;
    const GridOptions& options_;
    std::map<std::string, LoadedCorpus> corpora_;
    std::map<std::string, Tokenizer> tokenizers_;
    std::map<std::string, Checkpoint> checkpoints_;
    std::map<std::string, Checkpoint> specialized_;
    std::size_t trials_ = 0;
};

std::string record_lines(const std::vector<ResultRecord>& records) {
    std::string text;
    for (const auto& r : records) text += to_json(r).dump() + "\n";
    return text;
}

GridStats run_share(const std::vector<GridCell>& cells, std::size_t worker, std::size_t workers,
                    const Registry& registry, const GridOptions& options, const std::set<std::string>& complete) {
    GridStats stats;
    CellRunner runner(registry, options);
    for (std::size_t i = worker; i < cells.size(); i += workers) {
        const GridCell& cell = cells[i];
        try {
            bool skipped = false;
            const auto records = runner.run(cell, complete, skipped);
            if (skipped) {
                ++stats.skipped;
                continue;
            }
            append_lines(options.results, record_lines(records));
            ++stats.executed;
            if (options.progress) options.progress("done " + cell.describe());
        } catch (const Error& e) {
            ++stats.failed;
            stats.failures.push_back({cell.describe(), e.code(), e.what()});
            if (options.progress) options.progress("failed " + cell.describe() + ": " + e.what());
        } catch (const std::exception& e) {
            ++stats.failed;
            stats.failures.push_back({cell.describe(), ErrorCode::io_error, e.what()});
            if (options.progress) options.progress("failed " + cell.describe() + ": " + e.what());
        }
    }
    stats.trials = runner.trials();
    return stats;
}

json stats_json(const GridStats& s) {
    json failures = json::array();
    for (const auto& f : s.failures) failures.push_back(to_json(f));
    return {{"skipped", s.skipped}, {"executed", s.executed}, {"failed", s.failed}, {"trials", s.trials},
            {"failures", failures}};
}

void merge_stats(GridStats& into, const json& j) {
    into.skipped += j.at("skipped").get<std::size_t>();
    into.executed += j.at("executed").get<std::size_t>();
    into.failed += j.at("failed").get<std::size_t>();
    into.trials += j.at("trials").get<std::size_t>();
    for (const auto& f : j.at("failures")) {
        CellFailure cf{f.at("cell"), ErrorCode::io_error, f.at("message")};
        for (int c = 0; c <= static_cast<int>(ErrorCode::io_error); ++c)
            if (error_code_name(static_cast<ErrorCode>(c)) == f.at("error").get<std::string>())
                cf.code = static_cast<ErrorCode>(c);
        into.failures.push_back(cf);
    }
}

}  // namespace

void append_result(const fs::path& path, const ResultRecord& record) {
    append_lines(path, to_json(record).dump() + "\n");
}

GridRun run_grid(const ExperimentGrid& grid, const Registry& registry, const GridOptions& options) {
    require(!options.results.empty(), ErrorCode::invalid_argument, "run_grid needs a results path");
    require(options.workers >= 1, ErrorCode::invalid_argument, "workers must be >= 1");
    const auto cells = expand_grid(grid);
    std::set<std::string> complete;
    for (const auto& r : read_results(options.results))
        complete.insert(r.cell_id + "|" + std::string(to_string(r.subset)));

    GridStats stats;
    stats.cells = cells.size();
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(options.workers), std::max<std::size_t>(cells.size(), 1));
    if (workers == 1) {
        const GridStats s = run_share(cells, 0, 1, registry, options, complete);
        merge_stats(stats, stats_json(s));
    } else {
        std::fflush(nullptr);
        std::vector<pid_t> pids;
        std::vector<fs::path> summaries;
        for (std::size_t w = 0; w < workers; ++w) {
            summaries.push_back(fs::path(options.results.string() + ".worker" + std::to_string(w) + ".json"));
            fs::remove(summaries.back());
            const pid_t pid = ::fork();
            if (pid < 0) fail(ErrorCode::io_error, "fork failed");
            if (pid == 0) {
                int code = 0;
                try {
                    const GridStats s = run_share(cells, w, workers, registry, options, complete);
                    std::ofstream(summaries.back()) << stats_json(s).dump();
                } catch (...) {
                    code = 1;
                }
                std::fflush(nullptr);
                ::_exit(code);
            }
            pids.push_back(pid);
        }
        for (std::size_t w = 0; w < workers; ++w) {
            int status = 0;
            ::waitpid(pids[w], &status, 0);
            std::ifstream in(summaries[w]);
            if (in && WIFEXITED(status) && WEXITSTATUS(status) == 0) {
                merge_stats(stats, json::parse(in));
            } else {
                stats.failures.push_back({"worker " + std::to_string(w), ErrorCode::io_error,
                                          "worker process terminated abnormally"});
                ++stats.failed;
            }
            fs::remove(summaries[w]);
        }
    }
    return {read_results(options.results), stats};
}

BaselineSelector versus_vanilla() {
    return {"vs-vanilla", [](const ResultRecord& r) { return r.method == Method::vanilla; },
            [](const ResultRecord& r) { return r.method != Method::vanilla; }, false};
}

BaselineSelector versus_in_domain() {
    return {"vs-in-domain", [](const ResultRecord& r) { return r.spec_domain == SpecDomain::in_domain; },
            [](const ResultRecord& r) { return r.spec_domain == SpecDomain::out_of_domain; }, true};
}

namespace {

using CellKey = std::tuple<std::string, Dataset, Dimension, Subset, BaseModel, Method, SpecDomain>;

CellKey key_of(const ResultRecord& r) {
    return {r.country, r.dataset, r.dimension, r.subset, r.base_model, r.method, r.spec_domain};
}

std::string key_name(const CellKey& k) {
    return std::get<0>(k) + "/" + to_string(std::get<1>(k)) + "/" + to_string(std::get<2>(k)) + "/" +
           to_string(std::get<3>(k)) + "/" + to_string(std::get<4>(k)) + "/" + to_string(std::get<5>(k)) + "/" +
           to_string(std::get<6>(k));
}

bool pairs_with(const CellKey& cell, const CellKey& base, bool match_method) {
    return std::get<0>(cell) == std::get<0>(base) && std::get<1>(cell) == std::get<1>(base) &&
           std::get<2>(cell) == std::get<2>(base) && std::get<3>(cell) == std::get<3>(base) &&
           std::get<4>(cell) == std::get<4>(base) && (!match_method || std::get<5>(cell) == std::get<5>(base));
}

}  // namespace

DeltaTable delta_table(std::span<const ResultRecord> records, const BaselineSelector& selector) {
    std::map<CellKey, std::map<std::uint64_t, double>> cells, baselines;
    for (const auto& r : records) {
        if (selector.is_baseline(r)) baselines[key_of(r)][r.seed] = r.f1;
        else if (selector.is_cell(r)) cells[key_of(r)][r.seed] = r.f1;
    }
    DeltaTable table;
    for (const auto& [key, seeds] : cells) {
        std::vector<const std::map<std::uint64_t, double>*> matches;
        for (const auto& [bkey, bseeds] : baselines)
            if (pairs_with(key, bkey, selector.match_method)) matches.push_back(&bseeds);
        if (matches.size() != 1) {
            table.unpaired.push_back(key_name(key) + (matches.empty() ? " (no baseline)" : " (ambiguous baseline)"));
            continue;
        }
        double cell_sum = 0.0, base_sum = 0.0;
        std::size_t n = 0;
        for (const auto& [seed, f1] : seeds) {
            auto it = matches[0]->find(seed);
            if (it == matches[0]->end()) continue;
            cell_sum += f1;
            base_sum += it->second;
            ++n;
        }
        if (n == 0) {
            table.unpaired.push_back(key_name(key) + " (no common seeds)");
            continue;
        }
        DeltaRow row;
        std::tie(row.country, row.dataset, row.dimension, row.subset, row.base_model, row.method, row.spec_domain) =
            key;
        row.f1 = 100.0 * cell_sum / static_cast<double>(n);
        row.baseline_f1 = 100.0 * base_sum / static_cast<double>(n);
        row.delta = row.f1 - row.baseline_f1;
        row.seeds = n;
        table.rows.push_back(row);
    }
    return table;
}

void check_consistent_digests(std::span<const ResultRecord> records) {
    std::map<std::string, std::string> seen;
    for (const auto& r : records) {
        if (r.corpus_digest.empty()) continue;
        auto [it, inserted] = seen.emplace(r.country, r.corpus_digest);
        if (!inserted && it->second != r.corpus_digest)
            fail(ErrorCode::digest_mismatch, "results for " + r.country + " come from different corpora (" +
                                                 it->second + " vs " + r.corpus_digest + ")");
    }
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

std::string subset_column(Dimension dim, Subset s) {
    if (s == Subset::mixed) return "X";
    return std::string(class_label(dim, s == Subset::class_a ? DemClass::a : DemClass::b));
}

void write_deltas(const fs::path& path, const DeltaTable& table) {
    std::ofstream out(path);
    if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
    out << "country\tdataset\tdimension\tsubset\tbase_model\tmethod\tspec_domain\tf1\tbaseline_f1\tdelta\tseeds\n";
    for (const auto& r : table.rows)
        out << r.country << '\t' << to_string(r.dataset) << '\t' << to_string(r.dimension) << '\t'
            << to_string(r.subset) << '\t' << to_string(r.base_model) << '\t' << to_string(r.method) << '\t'
            << to_string(r.spec_domain) << '\t' << fmt(r.f1) << '\t' << fmt(r.baseline_f1) << '\t' << fmt(r.delta)
            << '\t' << r.seeds << '\n';
}

}  // namespace

std::vector<fs::path> write_report(std::span<const ResultRecord> records, const fs::path& out_dir) {
    check_consistent_digests(records);
    fs::create_directories(out_dir);
    std::vector<fs::path> written;

    // Seed-mean F1 per (dimension, base model) -> row (country, method, domain) -> column.
    using RowKey = std::tuple<std::string, Method, SpecDomain>;
    using ColKey = std::pair<Dataset, Subset>;
    std::map<std::pair<Dimension, BaseModel>, std::map<RowKey, std::map<ColKey, std::pair<double, int>>>> tables;
    for (const auto& r : records) {
        auto& cell = tables[{r.dimension, r.base_model}][{r.country, r.method, r.spec_domain}][{r.dataset, r.subset}];
        cell.first += r.f1;
        cell.second += 1;
    }
    for (const auto& [tkey, rows] : tables) {
        const auto [dim, bm] = tkey;
        std::vector<ColKey> columns;
        for (Dataset d : all_values<Dataset>()) {
            if (task_of(d) == Task::ac) columns.push_back({d, Subset::mixed});
            else
                for (Subset s : {Subset::class_a, Subset::class_b, Subset::mixed}) columns.push_back({d, s});
        }
        const fs::path path = out_dir / ("scores_" + std::string(to_string(dim)) + "_" + std::string(to_string(bm)) + ".tsv");
        std::ofstream out(path);
        if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
        out << "country\tmethod\tspec_domain";
        for (const auto& [d, s] : columns)
            out << '\t' << to_string(d) << (task_of(d) == Task::ac ? "" : "-" + subset_column(dim, s));
        out << '\n';
        for (const auto& [rkey, cols] : rows) {
            out << std::get<0>(rkey) << '\t' << to_string(std::get<1>(rkey)) << '\t' << to_string(std::get<2>(rkey));
            for (const auto& c : columns) {
                auto it = cols.find(c);
                out << '\t' << (it == cols.end() ? std::string("-") : fmt(100.0 * it->second.first / it->second.second));
            }
            out << '\n';
        }
        written.push_back(path);
    }

    std::ofstream unpaired(out_dir / "unpaired.tsv");
    unpaired << "comparison\tcell\n";
    for (const auto& selector : {versus_vanilla(), versus_in_domain()}) {
        const DeltaTable table = delta_table(records, selector);
        const fs::path path = out_dir / ("deltas_" + selector.name + ".tsv");
        write_deltas(path, table);
        written.push_back(path);
        for (const auto& u : table.unpaired) unpaired << selector.name << '\t' << u << '\n';
    }
    written.push_back(out_dir / "unpaired.tsv");
    return written;
}

}  // namespace demspec
