#include "chbr/core.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "chbr/error.hpp"
#include "chbr/util.hpp"

namespace chbr {

using nlohmann::json;

std::optional<std::size_t> ConceptBank::find_class(std::string_view class_id) const {
    for (std::size_t i = 0; i < classes.size(); ++i)
        if (classes[i].id == class_id) return i;
    return std::nullopt;
}

std::size_t ConceptBank::class_index(std::string_view class_id) const {
    auto idx = find_class(class_id);
    if (!idx) throw Error(ErrorKind::lookup, "unknown class id '" + std::string(class_id) + "'");
    return *idx;
}

void validate(const ClassLabel& label) {
    require(!label.id.empty(), "class id must be non-empty");
    require(!trim(label.display_name).empty(),
            "class '" + label.id + "' has an empty display_name");
}

void validate(const Concept& cpt) {
    require(cpt.text == trim(cpt.text),
            "concept text has leading or trailing whitespace: '" + cpt.text + "'");
    require(cpt.text.find('\n') == std::string::npos &&
                cpt.text.find('\r') == std::string::npos,
            "concept text contains a newline");
}

void validate(const WeightedConcept& wc) {
    validate(wc.item);
    require(wc.success_rate >= 0.0 && wc.success_rate <= 1.0,
            "success_rate outside [0, 1] for concept '" + wc.item.text + "'");
    require(wc.importance_weight >= 0.0, "negative importance weight");
}

void validate_class_set(const std::vector<ClassLabel>& classes) {
    std::set<std::string> seen;
    for (const auto& c : classes) {
        validate(c);
        require(seen.insert(c.id).second, "duplicate class id '" + c.id + "'");
    }
}

void validate(const ConceptBank& bank) {
    validate_class_set(bank.classes);
    require(bank.concepts.size() == bank.classes.size(),
            "concept bank has " + std::to_string(bank.concepts.size()) + " concept lists for " +
                std::to_string(bank.classes.size()) + " classes",
            ErrorKind::shape);
    for (std::size_t i = 0; i < bank.classes.size(); ++i) {
        require(!bank.concepts[i].empty(),
                "class '" + bank.classes[i].id + "' has no concepts");
        for (const auto& wc : bank.concepts[i]) {
            validate(wc);
            require(wc.item.class_id == bank.classes[i].id,
                    "concept '" + wc.item.text + "' is filed under class '" +
                        bank.classes[i].id + "' but owned by '" + wc.item.class_id + "'");
        }
    }
}

void validate(const PromptTemplate& tmpl) {
    auto count = [](std::string_view hay, std::string_view needle) {
        std::size_t n = 0;
        for (auto pos = hay.find(needle); pos != std::string_view::npos;
             pos = hay.find(needle, pos + needle.size()))
            ++n;
        return n;
    };
    auto check = [&](std::string_view pattern, std::string_view name, std::size_t want_class,
                     std::size_t want_concept) {
        if (count(pattern, PromptTemplate::class_placeholder) != want_class)
            throw Error(ErrorKind::template_error,
                        std::string(name) + " must contain exactly one {class} placeholder: '" +
                            std::string(pattern) + "'");
        if (count(pattern, PromptTemplate::concept_placeholder) != want_concept)
            throw Error(ErrorKind::template_error,
                        std::string(name) +
                            (want_concept ? " must contain exactly one {concept} placeholder: '"
                                          : " must not contain a {concept} placeholder: '") +
                            std::string(pattern) + "'");
    };
    check(tmpl.base_pattern, "base_pattern", 1, 0);
    check(tmpl.concept_pattern, "concept_pattern", 1, 1);
}

namespace {

void check_pattern(std::string_view pattern, bool with_concept) {
    PromptTemplate probe;
    if (with_concept) {
        probe.concept_pattern = std::string(pattern);
    } else {
        probe.base_pattern = std::string(pattern);
    }
    validate(probe);
}

}  // namespace

std::string render_prompt(const PromptTemplate& tmpl, const ClassLabel& label,
                          const Concept* cpt) {
    const bool with_concept = cpt != nullptr && !cpt->text.empty();
    const std::string& pattern = with_concept ? tmpl.concept_pattern : tmpl.base_pattern;
    check_pattern(pattern, with_concept);

    // Splice by position so substituted text is never scanned for placeholders.
    struct Slot {
        std::size_t pos;
        std::size_t len;
        const std::string* value;
    };
    std::vector<Slot> slots;
    slots.push_back({pattern.find(PromptTemplate::class_placeholder),
                     PromptTemplate::class_placeholder.size(), &label.display_name});
    if (with_concept)
        slots.push_back({pattern.find(PromptTemplate::concept_placeholder),
                         PromptTemplate::concept_placeholder.size(), &cpt->text});
    std::sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) { return a.pos < b.pos; });

    std::string out;
    std::size_t cursor = 0;
    for (const auto& s : slots) {
        out.append(pattern, cursor, s.pos - cursor);
        out += *s.value;
        cursor = s.pos + s.len;
    }
    out.append(pattern, cursor, std::string::npos);
    return out;
}

json to_json(const std::vector<ClassLabel>& classes) {
    json arr = json::array();
    for (const auto& c : classes) arr.push_back({{"id", c.id}, {"display_name", c.display_name}});
    return arr;
}

std::vector<ClassLabel> class_labels_from_json(const json& j) {
    const json& arr = j.is_object() && j.contains("classes") ? j.at("classes") : j;
    if (!arr.is_array()) throw Error(ErrorKind::parse, "class list must be a JSON array");
    std::vector<ClassLabel> out;
    for (const auto& e : arr) {
        if (e.is_string()) {
            out.push_back({e.get<std::string>(), e.get<std::string>()});
        } else {
            ClassLabel c{e.at("id").get<std::string>(), {}};
            c.display_name = e.contains("display_name") ? e.at("display_name").get<std::string>() : c.id;
            out.push_back(std::move(c));
        }
    }
    validate_class_set(out);
    return out;
}

json to_json(const ConceptBank& bank) {
    json concepts = json::object();
    for (std::size_t i = 0; i < bank.classes.size(); ++i) {
        std::vector<const WeightedConcept*> ordered;
        for (const auto& wc : bank.concepts[i]) ordered.push_back(&wc);
        std::stable_sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) {
            return a->item.sample_index < b->item.sample_index;
        });
        json arr = json::array();
        for (const auto* wc : ordered) {
            arr.push_back({{"text", wc->item.text},
                           {"sample_index", wc->item.sample_index},
                           {"success_rate", wc->success_rate},
                           {"importance_weight", wc->importance_weight},
                           {"passes", wc->passes},
                           {"trials", wc->trials}});
        }
        concepts[bank.classes[i].id] = std::move(arr);
    }
    return {{"task_name", bank.task_name},
            {"classes", to_json(bank.classes)},
            {"concepts", std::move(concepts)},
            {"sampler_meta", bank.sampler_meta}};
}

ConceptBank concept_bank_from_json(const json& j) {
    try {
        ConceptBank bank;
        bank.task_name = j.value("task_name", std::string{});
        bank.classes = class_labels_from_json(j.at("classes"));
        bank.sampler_meta = j.value("sampler_meta", json::object());
        const json& concepts = j.at("concepts");
        for (const auto& cls : bank.classes) {
            if (!concepts.contains(cls.id))
                throw Error(ErrorKind::parse, "concept bank lacks concepts for class '" + cls.id + "'");
            std::vector<WeightedConcept> list;
            for (const auto& e : concepts.at(cls.id)) {
                WeightedConcept wc;
                wc.item.text = e.at("text").get<std::string>();
                wc.item.class_id = cls.id;
                wc.item.sample_index = e.at("sample_index").get<std::size_t>();
                wc.success_rate = e.at("success_rate").get<double>();
                wc.importance_weight = e.value("importance_weight", wc.success_rate);
                wc.passes = e.value("passes", std::size_t{0});
                wc.trials = e.value("trials", std::size_t{0});
                list.push_back(std::move(wc));
            }
            std::stable_sort(list.begin(), list.end(), [](const auto& a, const auto& b) {
                return a.item.sample_index < b.item.sample_index;
            });
            bank.concepts.push_back(std::move(list));
        }
        for (const auto& [key, _] : concepts.items())
            if (!bank.find_class(key))
                throw Error(ErrorKind::parse, "concepts reference unknown class '" + key + "'");
        validate(bank);
        return bank;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::parse, std::string("malformed concept bank: ") + e.what());
    }
}

std::string dump_concept_bank(const ConceptBank& bank) { return to_json(bank).dump(2) + "\n"; }

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::precondition, "cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::parse, "invalid JSON in '" + path + "': " + e.what());
    }
}

void write_text_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::precondition, "cannot write '" + path + "'");
    out << contents;
    if (!out) throw Error(ErrorKind::precondition, "short write to '" + path + "'");
}

void save_concept_bank(const ConceptBank& bank, const std::string& path) {
    validate(bank);
    write_text_file(path, dump_concept_bank(bank));
}

ConceptBank load_concept_bank(const std::string& path) {
    return concept_bank_from_json(read_json_file(path));
}

std::vector<ClassLabel> load_class_labels(const std::string& path) {
    try {
        return class_labels_from_json(read_json_file(path));
    } catch (const json::exception& e) {
        throw Error(ErrorKind::parse, "malformed class list '" + path + "': " + e.what());
    }
}

}  // namespace chbr
