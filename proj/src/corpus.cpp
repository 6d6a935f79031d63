#include "demspec/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "demspec/digest.hpp"
#include "demspec/rng.hpp"
#include "demspec/tokenizer.hpp"

namespace demspec {

using nlohmann::json;

std::optional<DemClass> LabeledDocument::demographic(Dimension dim) const {
    if (dim == Dimension::gender) {
        if (!gender) return std::nullopt;
        return *gender == Gender::f ? DemClass::a : DemClass::b;
    }
    if (!age_group) return std::nullopt;
    return *age_group == AgeGroup::u35 ? DemClass::a : DemClass::b;
}

std::string FieldMapping::key(const std::string& field) const {
    auto it = keys.find(field);
    return it == keys.end() ? field : it->second;
}

json to_json(const LabeledDocument& doc) {
    json j;
    j["id"] = doc.id;
    j["text"] = doc.text;
    j["country"] = doc.country;
    j["language"] = doc.language;
    j["gender"] = doc.gender ? json(doc.gender == Gender::f ? "F" : "M") : json(nullptr);
    j["age_group"] =
        doc.age_group ? json(doc.age_group == AgeGroup::u35 ? "U35" : "O45") : json(nullptr);
    j["rating"] = doc.rating ? json(*doc.rating) : json(nullptr);
    j["topic"] = doc.topic ? json(*doc.topic) : json(nullptr);
    j["domain_tag"] = doc.domain_tag;
    return j;
}

namespace {

const json* field(const json& j, const FieldMapping& mapping, const std::string& name) {
    auto it = j.find(mapping.key(name));
    if (it == j.end() || it->is_null()) return nullptr;
    return &*it;
}

std::string string_field(const json& j, const FieldMapping& mapping, const std::string& name) {
    const json* v = field(j, mapping, name);
    if (!v) return {};
    if (!v->is_string()) fail(ErrorCode::parse_error, "field '" + name + "' must be a string");
    return v->get<std::string>();
}

}  // namespace

LabeledDocument document_from_json(const json& j, const FieldMapping& mapping) {
    if (!j.is_object()) fail(ErrorCode::parse_error, "record is not a JSON object");
    LabeledDocument doc;
    if (!field(j, mapping, "id")) fail(ErrorCode::parse_error, "record missing 'id'");
    if (!field(j, mapping, "text")) fail(ErrorCode::parse_error, "record missing 'text'");
    const json& id = *field(j, mapping, "id");
    doc.id = id.is_string() ? id.get<std::string>() : id.dump();
    doc.text = string_field(j, mapping, "text");
    if (split_words(doc.text).empty())
        fail(ErrorCode::parse_error, "record '" + doc.id + "' has no tokens");
    doc.country = string_field(j, mapping, "country");
    doc.language = string_field(j, mapping, "language");
    doc.domain_tag = string_field(j, mapping, "domain_tag");

    if (auto g = string_field(j, mapping, "gender"); !g.empty()) {
        if (g == "F") doc.gender = Gender::f;
        else if (g == "M") doc.gender = Gender::m;
        else fail(ErrorCode::parse_error, "gender must be F or M, got '" + g + "'");
    }
    if (auto a = string_field(j, mapping, "age_group"); !a.empty()) {
        if (a == "U35") doc.age_group = AgeGroup::u35;
        else if (a == "O45") doc.age_group = AgeGroup::o45;
        else fail(ErrorCode::parse_error, "age_group must be U35 or O45, got '" + a + "'");
    }
    if (const json* r = field(j, mapping, "rating")) {
        if (!r->is_number_integer()) fail(ErrorCode::parse_error, "rating must be an integer");
        const int rating = r->get<int>();
        if (rating < 1 || rating > 5)
            fail(ErrorCode::parse_error, "rating out of range: " + std::to_string(rating));
        doc.rating = rating;
    }
    if (const json* t = field(j, mapping, "topic")) {
        if (!t->is_string()) fail(ErrorCode::parse_error, "topic must be a string");
        doc.topic = t->get<std::string>();
    }
    return doc;
}

LoadResult load_corpus(const std::filesystem::path& path, const FieldMapping& mapping) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::resource_missing, "cannot read corpus " + path.string());
    LoadResult result;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto doc = document_from_json(json::parse(line), mapping);
            if (!seen.insert(doc.id).second)
                fail(ErrorCode::parse_error, "duplicate id '" + doc.id + "'");
            result.documents.push_back(std::move(doc));
        } catch (const json::exception& e) {
            result.diagnostics.push_back({line_no, e.what()});
        } catch (const Error& e) {
            result.diagnostics.push_back({line_no, e.what()});
        }
    }
    return result;
}

void write_corpus(const std::filesystem::path& path, std::span<const LabeledDocument> docs) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
    for (const auto& doc : docs) out << to_json(doc).dump() << '\n';
}

std::string corpus_digest(std::span<const LabeledDocument> docs) {
    Digest d;
    for (const auto& doc : docs) d.update(to_json(doc).dump()).update("\n");
    return d.hex();
}

json to_json(const CorpusSplit& split) {
    return json{{"specialization", split.specialization},
                {"train", split.train},
                {"dev", split.dev},
                {"test", split.test},
                {"dimension", to_string(split.dimension)},
                {"task", to_string(split.dataset)},
                {"seed", split.seed},
                {"corpus_digest", split.corpus_digest}};
}

CorpusSplit split_from_json(const json& j) {
    CorpusSplit s;
    try {
        s.specialization = j.at("specialization").get<std::vector<std::string>>();
        s.train = j.at("train").get<std::vector<std::string>>();
        s.dev = j.at("dev").get<std::vector<std::string>>();
        s.test = j.at("test").get<std::vector<std::string>>();
        s.dimension = parse_enum<Dimension>(j.at("dimension").get<std::string>());
        s.dataset = parse_enum<Dataset>(j.at("task").get<std::string>());
        s.seed = j.value("seed", std::uint64_t{0});
        s.corpus_digest = j.value("corpus_digest", std::string{});
    } catch (const json::exception& e) {
        fail(ErrorCode::parse_error, std::string("malformed split manifest: ") + e.what());
    }
    return s;
}

bool eligible_for(const LabeledDocument& doc, Dimension dim, Dataset dataset) {
    if (!doc.demographic(dim)) return false;
    switch (dataset) {
        case Dataset::ac_sa:
        case Dataset::sa:
            return doc.rating && (*doc.rating == 1 || *doc.rating == 3 || *doc.rating == 5);
        case Dataset::ac_td:
        case Dataset::td: return doc.topic.has_value();
    }
    return false;
}

PartitionSizes partition_sizes(std::size_t per_class) {
    for (std::size_t n = per_class; n > 0; --n) {
        const double exact = static_cast<double>(n);
        PartitionSizes p;
        p.train = static_cast<std::size_t>(std::llround(0.6 * exact));
        p.dev = static_cast<std::size_t>(std::llround(0.2 * exact));
        if (p.train + p.dev > n) continue;
        p.test = n - p.train - p.dev;
        // Totals are twice the per-class counts; each must sit within one
        // document of its exact share of 2n.
        auto ok = [&](std::size_t c, double share) {
            return std::abs(2.0 * static_cast<double>(c) - share * 2.0 * exact) <= 1.0 + 1e-9;
        };
        if (ok(p.train, 0.6) && ok(p.dev, 0.2) && ok(p.test, 0.2)) return p;
    }
    return {};
}

namespace {

// Round-robin interleave of documents by a stratum key so any prefix is
// approximately stratified. Strata visited in key order; within a stratum,
// the incoming (shuffled) order is kept.
std::vector<const LabeledDocument*> stratify(std::vector<const LabeledDocument*> docs,
                                             Dataset dataset) {
    std::map<std::string, std::vector<const LabeledDocument*>> strata;
    for (const auto* d : docs) {
        std::string key;
        if (dataset == Dataset::td || dataset == Dataset::ac_td) key = d->topic.value_or("");
        else key = d->rating ? std::to_string(*d->rating) : "";
        strata[key].push_back(d);
    }
    std::vector<const LabeledDocument*> out;
    out.reserve(docs.size());
    for (std::size_t round = 0; out.size() < docs.size(); ++round)
        for (auto& [key, bucket] : strata)
            if (round < bucket.size()) out.push_back(bucket[round]);
    return out;
}

}  // namespace

CorpusSplit make_split(std::span<const LabeledDocument> docs, Dimension dim, Dataset dataset,
                       std::uint64_t seed, const SplitOptions& options) {
    std::vector<LabeledDocument> eligible;
    for (const auto& d : docs)
        if (eligible_for(d, dim, dataset)) eligible.push_back(d);
    if (dataset == Dataset::td || dataset == Dataset::ac_td) {
        std::size_t distinct = 0;
        {
            std::unordered_set<std::string> topics;
            for (const auto& d : eligible) topics.insert(*d.topic);
            distinct = topics.size();
        }
        if (distinct < options.topic_count)
            fail(ErrorCode::insufficient_data,
                 "dataset " + to_string(dataset) + " needs " + std::to_string(options.topic_count) +
                     " topics, corpus has " + std::to_string(distinct));
        eligible = balance_topics(eligible, options.topic_count, dim, seed);
    }

    std::vector<const LabeledDocument*> by_class[2];
    for (const auto& d : eligible) by_class[static_cast<int>(*d.demographic(dim))].push_back(&d);

    Rng rng(derive_seed(seed, 0x5b117));
    for (auto& bucket : by_class) {
        // Sort by id first so the split depends on content, not input order.
        std::sort(bucket.begin(), bucket.end(),
                  [](const auto* x, const auto* y) { return x->id < y->id; });
        rng.shuffle(std::span(bucket));
    }

    std::size_t per_class = std::min(by_class[0].size(), by_class[1].size());
    if (options.finetune_per_class > 0) per_class = std::min(per_class, options.finetune_per_class);
    const PartitionSizes sizes = partition_sizes(per_class);
    if (per_class < 5 || sizes.dev == 0 || sizes.test == 0) {
        std::string msg = "cannot build a balanced " + to_string(dataset) + " split on " +
                          to_string(dim) + ": ";
        for (int c = 0; c < 2; ++c) {
            msg += std::string(class_label(dim, static_cast<DemClass>(c))) + "=" +
                   std::to_string(by_class[c].size()) + (c == 0 ? ", " : "");
        }
        const int short_class = by_class[0].size() <= by_class[1].size() ? 0 : 1;
        msg += " (class " + std::string(class_label(dim, static_cast<DemClass>(short_class))) +
               " has too few documents; need at least 5 per class)";
        fail(ErrorCode::insufficient_data, msg);
    }

    CorpusSplit split;
    split.dimension = dim;
    split.dataset = dataset;
    split.seed = seed;
    split.corpus_digest = corpus_digest(docs);

    std::unordered_set<std::string> used;
    std::vector<const LabeledDocument*> parts[2][3];
    for (int c = 0; c < 2; ++c) {
        std::vector<const LabeledDocument*> chosen(by_class[c].begin(),
                                                   by_class[c].begin() + static_cast<std::ptrdiff_t>(sizes.used()));
        chosen = stratify(std::move(chosen), dataset);
        std::size_t pos = 0;
        const std::size_t counts[3] = {sizes.train, sizes.dev, sizes.test};
        for (int p = 0; p < 3; ++p)
            for (std::size_t i = 0; i < counts[p]; ++i) parts[c][p].push_back(chosen[pos++]);
    }
    std::vector<std::string>* outs[3] = {&split.train, &split.dev, &split.test};
    for (int p = 0; p < 3; ++p) {
        // Alternate classes so prefixes of each partition stay balanced.
        for (std::size_t i = 0; i < parts[0][p].size(); ++i)
            for (int c = 0; c < 2; ++c) {
                outs[p]->push_back(parts[c][p][i]->id);
                used.insert(parts[c][p][i]->id);
            }
    }
    for (const auto& d : docs)
        if (d.demographic(dim) && !used.count(d.id)) split.specialization.push_back(d.id);
    return split;
}

std::vector<LabeledDocument> balance_topics(std::span<const LabeledDocument> docs, std::size_t k,
                                            Dimension dim, std::uint64_t seed) {
    if (k < 1) fail(ErrorCode::invalid_argument, "balance_topics needs k >= 1");
    std::map<std::string, std::array<std::vector<const LabeledDocument*>, 2>> cells;
    std::map<std::string, std::size_t> totals;
    for (const auto& d : docs) {
        if (!d.topic) fail(ErrorCode::missing_label, "document '" + d.id + "' has no topic");
        auto cls = d.demographic(dim);
        if (!cls)
            fail(ErrorCode::missing_label,
                 "document '" + d.id + "' has no " + to_string(dim) + " label");
        cells[*d.topic][static_cast<int>(*cls)].push_back(&d);
        ++totals[*d.topic];
    }
    if (totals.size() < k)
        fail(ErrorCode::insufficient_data, "requested " + std::to_string(k) + " topics, only " +
                                               std::to_string(totals.size()) + " present");

    std::vector<std::pair<std::string, std::size_t>> ranked(totals.begin(), totals.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& x, const auto& y) { return x.second > y.second; });
    ranked.resize(k);
    std::sort(ranked.begin(), ranked.end());

    Rng rng(derive_seed(seed, 0x70b1c));
    std::vector<LabeledDocument> out;
    for (const auto& [topic, total] : ranked) {
        auto& cell = cells[topic];
        const std::size_t keep = std::min(cell[0].size(), cell[1].size());
        for (auto& bucket : cell) {
            rng.shuffle(std::span(bucket));
            for (std::size_t i = 0; i < keep; ++i) out.push_back(*bucket[i]);
        }
    }
    return out;
}

std::vector<LabeledDocument> sample_specialization(std::span<const LabeledDocument> docs,
                                                   Dimension dim, std::size_t n_per_group,
                                                   std::uint64_t seed) {
    std::vector<const LabeledDocument*> by_class[2];
    for (const auto& d : docs)
        if (auto cls = d.demographic(dim)) by_class[static_cast<int>(*cls)].push_back(&d);
    for (int c = 0; c < 2; ++c) {
        if (by_class[c].size() < n_per_group) {
            fail(ErrorCode::insufficient_data,
                 "class " + std::string(class_label(dim, static_cast<DemClass>(c))) + " short by " +
                     std::to_string(n_per_group - by_class[c].size()) + " documents");
        }
    }
    Rng rng(derive_seed(seed, 0x5ec1a));
    std::vector<LabeledDocument> out;
    out.reserve(2 * n_per_group);
    for (auto& bucket : by_class) {
        rng.shuffle(std::span(bucket));
        for (std::size_t i = 0; i < n_per_group; ++i) out.push_back(*bucket[i]);
    }
    return out;
}

std::vector<LabeledDocument> select_documents(std::span<const LabeledDocument> docs,
                                              std::span<const std::string> ids) {
    std::unordered_map<std::string_view, const LabeledDocument*> index;
    for (const auto& d : docs) index.emplace(d.id, &d);
    std::vector<LabeledDocument> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = index.find(id);
        if (it == index.end()) fail(ErrorCode::resource_missing, "document '" + id + "' not in corpus");
        out.push_back(*it->second);
    }
    return out;
}

}  // namespace demspec
