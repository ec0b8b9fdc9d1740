#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "chbr/core.hpp"
#include "chbr/embedding.hpp"
#include "chbr/llm.hpp"

namespace chbr {

enum class SamplerMode { standard, efficient };

struct SamplerConfig {
    std::size_t window_size = 4;           // H
    std::size_t samples_per_class = 100;   // M
    std::size_t verifications = 5;         // Z
    std::uint64_t seed = 0;
    SamplerMode mode = SamplerMode::standard;
    std::size_t efficient_batch = 10;      // concepts per generation call in efficient mode
    LlmEndpointConfig llm;
};

/// Checks H <= K - 1 (standard mode), M >= 1, Z >= 1 and the endpoint config.
void validate(const SamplerConfig& config, std::size_t num_classes);
nlohmann::json to_json(const SamplerConfig& config);
SamplerConfig sampler_config_from_json(const nlohmann::json& j);

enum class Verdict { pass, fail };

struct DiscriminativeTrial {
    std::string concept_text;
    std::string target_class_id;
    std::vector<std::string> distractor_class_ids;
    std::vector<std::string> option_class_ids;  // shuffled target + distractors as presented
    Verdict verdict = Verdict::fail;
    std::string raw_answer;
};

struct TestOutcome {
    std::size_t passes = 0;
    std::size_t trials = 0;
    double success_rate = 0.0;
    std::vector<DiscriminativeTrial> details;
};

class ConceptParseError : public Error {
   public:
    ConceptParseError(const std::string& what, std::string raw_reply)
        : Error(ErrorKind::parse, what), raw_reply_(std::move(raw_reply)) {}
    const std::string& raw_reply() const noexcept { return raw_reply_; }

   private:
    std::string raw_reply_;
};

// Prompt construction. The wording is the wire contract with the LLM.
ChatRequest concept_generation_request(const ClassLabel& target, const std::vector<ClassLabel>& others,
                                       double temperature, std::size_t n = 1);
ChatRequest discriminative_request(std::string_view concept_text, const std::vector<ClassLabel>& options,
                                   double temperature);
ChatRequest batch_verdict_request(const std::vector<std::string>& concept_texts,
                                  const std::vector<ClassLabel>& options, double temperature);

/// H distinct classes other than classes[target], drawn by a partial
/// Fisher-Yates shuffle over the remaining classes in class order.
std::vector<ClassLabel> draw_candidate_set(const std::vector<ClassLabel>& classes, std::size_t target,
                                           std::size_t window_size, std::mt19937_64& rng);

/// Remainder of the last line containing "the final concept is:"
/// (case-insensitive), with whitespace, surrounding quotes and a trailing
/// period removed. Throws ConceptParseError when no line carries the prefix.
std::string parse_final_concept(std::string_view reply);

/// Normalizes both sides (lowercase, punctuation to spaces, collapsed
/// whitespace). An exact match wins; otherwise the unique option contained
/// in the answer on word boundaries. None when zero or several options match.
std::optional<ClassLabel> match_answer(std::string_view raw_answer, const std::vector<ClassLabel>& options);
std::string normalize_answer(std::string_view text);

/// Importance weight under the unit proposal density: w = s / 1.
double importance_weight(double success_rate);

/// First ```-fenced block, read as a flat string-to-string dict. Accepts an
/// optional language tag, an optional `predicted_dict =` prefix, single or
/// double quotes and a trailing comma.
std::map<std::string, std::string> parse_batch_verdicts(std::string_view reply);

struct SamplerDiagnostics {
    std::size_t generation_queries = 0;
    std::size_t verification_queries = 0;
    std::size_t retries = 0;
    std::size_t reasks = 0;
    std::size_t resumed_cells = 0;

    std::size_t total_queries() const { return generation_queries + verification_queries; }
};

/// Shared state for one sampling run: client, retry policy and counters.
class SamplerSession {
   public:
    SamplerSession(ChatClient& client, const SamplerConfig& config);

    /// Sends with retries on transient failures; counts the query.
    std::vector<std::string> ask(const ChatRequest& request, bool verification);

    const SamplerConfig& config() const { return config_; }
    void note_reask() { ++reasks_; }
    SamplerDiagnostics diagnostics() const;

   private:
    ChatClient& client_;
    SamplerConfig config_;
    std::atomic<std::size_t> generation_{0};
    std::atomic<std::size_t> verification_{0};
    std::atomic<std::size_t> retries_{0};
    std::atomic<std::size_t> reasks_{0};
};

/// One concept for `target` given the candidate set; re-asks once when the
/// reply lacks the final-concept line.
Concept generate_concept(SamplerSession& session, const ClassLabel& target, const std::vector<ClassLabel>& candidates,
                         std::size_t sample_index, std::string_view tag);

/// Z trials, each with a fresh H-distractor draw and shuffled options from a
/// generator seeded by derive_seed(cell_seed, "trial", {z}).
TestOutcome discriminative_test(SamplerSession& session, const Concept& cpt, const std::vector<ClassLabel>& classes,
                                std::size_t target, std::size_t window_size, std::size_t verifications,
                                std::uint64_t cell_seed, std::string_view tag);

struct SampleOptions {
    std::optional<std::string> checkpoint_path;
    std::string task_name;
};

/// Monte Carlo importance sampling of a concept bank. Cells (class,
/// sample_index) run concurrently up to llm.max_in_flight; each completed cell
/// is appended to the checkpoint, and cells already present there are reused.
ConceptBank sample_concept_bank(const std::vector<ClassLabel>& classes, const SamplerConfig& config,
                                ChatClient& client, const SampleOptions& options = {},
                                SamplerDiagnostics* diagnostics = nullptr);

/// Query-efficient variant: the distractor is the nearest class by text
/// embedding, concepts are generated efficient_batch at a time and each batch
/// is verified with one batched query per trial.
ConceptBank efficient_sample_concept_bank(const std::vector<ClassLabel>& classes, const EmbeddingStore& text_store,
                                          const SamplerConfig& config, ChatClient& client,
                                          const SampleOptions& options = {},
                                          SamplerDiagnostics* diagnostics = nullptr);

/// Index of the class whose text embedding is most similar to classes[target];
/// ties go to the earlier class. Embeddings are looked up by display_name,
/// falling back to content_id(display_name).
std::size_t nearest_class(const std::vector<ClassLabel>& classes, const EmbeddingStore& text_store, std::size_t target);

/// Creation timestamp for sampler metadata: SOURCE_DATE_EPOCH when set,
/// otherwise the current UTC time, formatted as ISO 8601.
std::string sampler_timestamp();

}  // namespace chbr
