#include "demspec/types.hpp"

#include <cctype>

namespace demspec {

bool enum_name_matches(std::string_view canonical, std::string_view text) {
    if (canonical.size() != text.size()) return false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        char a = static_cast<char>(std::tolower(static_cast<unsigned char>(canonical[i])));
        char b = static_cast<char>(std::tolower(static_cast<unsigned char>(text[i])));
        if (a == '_') a = '-';
        if (b == '_') b = '-';
        if (a != b) return false;
    }
    return true;
}

Task task_of(Dataset dataset) {
    switch (dataset) {
        case Dataset::ac_sa:
        case Dataset::ac_td: return Task::ac;
        case Dataset::sa: return Task::sa;
        case Dataset::td: return Task::td;
    }
    return Task::ac;
}

int num_classes(Task task) {
    switch (task) {
        case Task::ac: return 2;
        case Task::sa: return 3;
        case Task::td: return 5;
    }
    return 0;
}

std::string_view class_label(Dimension dim, DemClass cls) {
    if (dim == Dimension::gender) return cls == DemClass::a ? "F" : "M";
    return cls == DemClass::a ? "U35" : "O45";
}

DemClass parse_class_label(Dimension dim, std::string_view label) {
    if (label == class_label(dim, DemClass::a)) return DemClass::a;
    if (label == class_label(dim, DemClass::b)) return DemClass::b;
    fail(ErrorCode::unknown_category,
         "unknown " + to_string(dim) + " class '" + std::string(label) + "'");
}

Subset parse_subset(std::string_view text) {
    if (enum_name_matches("a", text)) return Subset::class_a;
    if (enum_name_matches("b", text)) return Subset::class_b;
    return parse_enum<Subset>(text);
}

}  // namespace demspec
