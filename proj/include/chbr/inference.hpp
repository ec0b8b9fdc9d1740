#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "chbr/core.hpp"
#include "chbr/embedding.hpp"
#include "chbr/image.hpp"
#include "chbr/likelihood.hpp"

namespace chbr {

/// Source of text embeddings for rendered prompts.
class TextEmbeddingProvider {
   public:
    virtual ~TextEmbeddingProvider() = default;
    virtual std::vector<EmbeddingVector> embed_prompts(const std::vector<std::string>& prompts) = 0;
};

/// Looks prompts up in a precomputed store under content_id(prompt).
class StoreTextProvider : public TextEmbeddingProvider {
   public:
    explicit StoreTextProvider(const EmbeddingStore& store) : store_(store) {}
    std::vector<EmbeddingVector> embed_prompts(const std::vector<std::string>& prompts) override;

   private:
    const EmbeddingStore& store_;
};

class RemoteTextProvider : public TextEmbeddingProvider {
   public:
    explicit RemoteTextProvider(RemoteEmbedder& client) : client_(client) {}
    std::vector<EmbeddingVector> embed_prompts(const std::vector<std::string>& prompts) override;

   private:
    RemoteEmbedder& client_;
};

/// Memoizes prompt embeddings keyed by the 64-bit content hash, keeping the
/// prompt alongside to detect collisions. Inserts are idempotent and safe
/// under concurrent readers.
class PromptEmbeddingCache {
   public:
    explicit PromptEmbeddingCache(TextEmbeddingProvider& backend) : backend_(backend) {}

    std::vector<EmbeddingVector> get(const std::vector<std::string>& prompts);
    std::size_t size() const;
    std::size_t backend_requests() const { return backend_requests_; }

   private:
    struct Entry {
        std::string prompt;
        EmbeddingVector vector;
    };
    TextEmbeddingProvider& backend_;
    mutable std::shared_mutex mutex_;
    std::unordered_map<std::uint64_t, Entry> entries_;
    std::size_t backend_requests_ = 0;
};

/// Source of image view embeddings; view 0 is the unaugmented image.
class ImageEmbeddingProvider {
   public:
    virtual ~ImageEmbeddingProvider() = default;
    virtual std::vector<EmbeddingVector> views(const std::string& image_id, std::size_t num_views,
                                               std::uint64_t seed) = 0;
};

/// Reads views from a store: `{id}#view{n}`, where a single view may also be
/// stored under the bare image id.
class StoreImageProvider : public ImageEmbeddingProvider {
   public:
    explicit StoreImageProvider(const EmbeddingStore& store) : store_(store) {}
    std::vector<EmbeddingVector> views(const std::string& image_id, std::size_t num_views, std::uint64_t seed) override;

   private:
    const EmbeddingStore& store_;
};

/// Decodes `{image_dir}/{image_id}.ppm`, augments it and embeds the views
/// remotely (payloads are base64-encoded binary PPM).
class RemoteImageProvider : public ImageEmbeddingProvider {
   public:
    RemoteImageProvider(RemoteEmbedder& client, std::string image_dir, std::shared_ptr<const Augmenter> augmenter);
    std::vector<EmbeddingVector> views(const std::string& image_id, std::size_t num_views, std::uint64_t seed) override;

   private:
    RemoteEmbedder& client_;
    std::string image_dir_;
    std::shared_ptr<const Augmenter> augmenter_;
};

/// Entry (i, j, n) is the cosine between the rendered prompt of concept j of
/// class i and view n.
SimilarityTensor build_similarity_tensor(const std::vector<EmbeddingVector>& views, const ConceptBank& bank,
                                         PromptEmbeddingCache& prompts, const PromptTemplate& tmpl);

/// sum_j sims[j] * likelihood[j] * weights[j], accumulated left to right.
double marginal_score(const Eigen::Ref<const Eigen::VectorXd>& sims, const Eigen::Ref<const Eigen::VectorXd>& likelihood,
                      const Eigen::Ref<const Eigen::VectorXd>& weights);

/// Index of the largest entry; the first one on ties.
std::size_t argmax_first(const Eigen::Ref<const Eigen::VectorXd>& scores);

struct ConceptContribution {
    std::string text;
    std::size_t sample_index = 0;
    double similarity = 0.0;
    double likelihood = 0.0;
    double weight = 0.0;
    double contribution = 0.0;
};

struct PredictionResult {
    std::vector<ClassLabel> classes;
    Eigen::VectorXd scores;  // unnormalized marginal scores, class order
    std::size_t predicted_index = 0;
    ClassLabel predicted;
    LikelihoodMatrix likelihood;
    std::vector<std::vector<ConceptContribution>> top_contributions;  // per class, descending
    std::optional<TtaResult> tta;
};

struct PredictOptions {
    std::uint64_t seed = 0;
    std::size_t top_k = 3;
    // Multiplies every similarity before scoring (1 = raw cosine).
    double similarity_scale = 1.0;
    PromptTemplate prompt_template;
};

/// Scoring from a ready similarity tensor. For tta the tensor carries every
/// view and scores are averaged over the retained views; other kinds use view 0.
PredictionResult predict_from_similarities(const SimilarityTensor& sims, const ConceptBank& bank,
                                           const LikelihoodSpec& spec, std::size_t top_k = 3);

struct Providers {
    ImageEmbeddingProvider& images;
    PromptEmbeddingCache& prompts;
};

PredictionResult predict(const std::string& image_id, const ConceptBank& bank, const LikelihoodSpec& spec,
                         Providers& providers, const PredictOptions& options = {});

/// Softmax of the scores for display only.
Eigen::VectorXd display_probabilities(const PredictionResult& result, double scale = 100.0);

/// {image_id, predicted, scores, diagnostics?} with scores keyed by class id.
nlohmann::json prediction_to_json(const std::string& image_id, const PredictionResult& result, bool with_diagnostics,
                                  LikelihoodKind kind);
/// Per-image trace record for --trace.
nlohmann::json trace_record(const std::string& image_id, const PredictionResult& result, LikelihoodKind kind);

}  // namespace chbr
