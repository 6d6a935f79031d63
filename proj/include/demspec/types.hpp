#pragma once

#include <array>
#include <string>
#include <string_view>
#include <utility>

#include "demspec/error.hpp"

namespace demspec {

enum class Dimension { gender, age };

// Demographic class inside a dimension. Class A is F (gender) or U35 (age);
// class B is M or O45 and is the positive class of the binary heads.
enum class DemClass { a = 0, b = 1 };

enum class Dataset { ac_sa, ac_td, sa, td };
enum class Task { ac, sa, td };
enum class Method { vanilla, mlm, ds_seq, ds_tok };
enum class BaseModel { multilingual, monolingual };
enum class SpecDomain { in_domain, out_of_domain, none };
enum class Subset { class_a, class_b, mixed };
enum class Sentiment { negative = 0, neutral = 1, positive = 2 };

template <typename E>
struct EnumNames;

#define DEMSPEC_ENUM_NAMES(Type, ...)                                          \
    template <>                                                                \
    struct EnumNames<Type> {                                                   \
        static constexpr std::pair<Type, std::string_view> table[] = {__VA_ARGS__}; \
        static constexpr std::string_view label = #Type;                       \
    }

DEMSPEC_ENUM_NAMES(Dimension, {Dimension::gender, "gender"}, {Dimension::age, "age"});
DEMSPEC_ENUM_NAMES(Dataset, {Dataset::ac_sa, "AC-SA"}, {Dataset::ac_td, "AC-TD"},
                   {Dataset::sa, "SA"}, {Dataset::td, "TD"});
DEMSPEC_ENUM_NAMES(Task, {Task::ac, "AC"}, {Task::sa, "SA"}, {Task::td, "TD"});
DEMSPEC_ENUM_NAMES(Method, {Method::vanilla, "vanilla"}, {Method::mlm, "MLM"},
                   {Method::ds_seq, "DS-Seq"}, {Method::ds_tok, "DS-Tok"});
DEMSPEC_ENUM_NAMES(BaseModel, {BaseModel::multilingual, "multilingual"},
                   {BaseModel::monolingual, "monolingual"});
DEMSPEC_ENUM_NAMES(SpecDomain, {SpecDomain::in_domain, "in-domain"},
                   {SpecDomain::out_of_domain, "out-of-domain"}, {SpecDomain::none, "none"});
DEMSPEC_ENUM_NAMES(Subset, {Subset::class_a, "class-A-only"}, {Subset::class_b, "class-B-only"},
                   {Subset::mixed, "mixed"});
DEMSPEC_ENUM_NAMES(Sentiment, {Sentiment::negative, "negative"},
                   {Sentiment::neutral, "neutral"}, {Sentiment::positive, "positive"});

#undef DEMSPEC_ENUM_NAMES

template <typename E>
std::string to_string(E value) {
    for (const auto& [v, name] : EnumNames<E>::table)
        if (v == value) return std::string(name);
    return "?";
}

// Case-insensitive; also accepts '_' for '-' so CLI spellings like ds_tok work.
bool enum_name_matches(std::string_view canonical, std::string_view text);

template <typename E>
E parse_enum(std::string_view text) {
    for (const auto& [v, name] : EnumNames<E>::table)
        if (enum_name_matches(name, text)) return v;
    fail(ErrorCode::unknown_category,
         "unknown " + std::string(EnumNames<E>::label) + " '" + std::string(text) + "'");
}

template <typename E>
constexpr auto all_values() {
    std::array<E, std::size(EnumNames<E>::table)> out{};
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = EnumNames<E>::table[i].first;
    return out;
}

Task task_of(Dataset dataset);
int num_classes(Task task);

// Class label strings as they appear in corpus files ("F"/"M", "U35"/"O45").
std::string_view class_label(Dimension dim, DemClass cls);
DemClass parse_class_label(Dimension dim, std::string_view label);

// Subset CLI spellings: a | b | mixed (plus the canonical names).
Subset parse_subset(std::string_view text);

}  // namespace demspec
