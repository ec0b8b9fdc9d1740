#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace chbr {

struct ClassLabel {
    std::string id;
    std::string display_name;

    bool operator==(const ClassLabel&) const = default;
};

/// A natural-language concept sampled for one class. An empty text is the
/// null concept: it renders as the plain class prompt.
struct Concept {
    std::string text;
    std::string class_id;
    std::size_t sample_index = 0;

    bool operator==(const Concept&) const = default;
};

struct WeightedConcept {
    Concept item;
    double success_rate = 0.0;
    double importance_weight = 0.0;
    // Raw discriminative-test counts behind success_rate (passes / trials).
    std::size_t passes = 0;
    std::size_t trials = 0;

    bool operator==(const WeightedConcept&) const = default;
};

struct ConceptBank {
    std::string task_name;
    std::vector<ClassLabel> classes;
    // concepts[i] belongs to classes[i], ordered by sample_index.
    std::vector<std::vector<WeightedConcept>> concepts;
    nlohmann::json sampler_meta = nlohmann::json::object();

    std::size_t num_classes() const { return classes.size(); }
    std::size_t class_index(std::string_view class_id) const;  // throws lookup error
    std::optional<std::size_t> find_class(std::string_view class_id) const;

    bool operator==(const ConceptBank&) const = default;
};

void validate(const ClassLabel& label);
void validate(const Concept& cpt);
void validate(const WeightedConcept& wc);
/// Checks unique class ids, non-empty per-class lists and class ownership.
void validate(const ConceptBank& bank);
void validate_class_set(const std::vector<ClassLabel>& classes);

nlohmann::json to_json(const ConceptBank& bank);
ConceptBank concept_bank_from_json(const nlohmann::json& j);

/// Deterministic serialization: sorted keys, concepts ordered by sample_index,
/// two-space indentation, trailing newline.
std::string dump_concept_bank(const ConceptBank& bank);
void save_concept_bank(const ConceptBank& bank, const std::string& path);
ConceptBank load_concept_bank(const std::string& path);

std::vector<ClassLabel> class_labels_from_json(const nlohmann::json& j);
nlohmann::json to_json(const std::vector<ClassLabel>& classes);
/// Accepts either a bare array of {id, display_name} or {"classes": [...]}.
std::vector<ClassLabel> load_class_labels(const std::string& path);

struct PromptTemplate {
    static constexpr std::string_view class_placeholder = "{class}";
    static constexpr std::string_view concept_placeholder = "{concept}";

    std::string base_pattern = "A photo of a {class}.";
    std::string concept_pattern = "A photo of a {class} with {concept}.";
};

/// Throws a template error naming the offending placeholder.
void validate(const PromptTemplate& tmpl);

/// Renders the concept pattern when `concept` is given and non-empty, the base
/// pattern otherwise. Substituted text is inserted verbatim and never rescanned.
std::string render_prompt(const PromptTemplate& tmpl, const ClassLabel& label,
                          const Concept* cpt = nullptr);
inline std::string render_prompt(const PromptTemplate& tmpl, const ClassLabel& label,
                                 const Concept& cpt) {
    return render_prompt(tmpl, label, &cpt);
}

nlohmann::json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& contents);

}  // namespace chbr
