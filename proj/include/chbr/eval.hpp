#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "chbr/core.hpp"
#include "chbr/inference.hpp"
#include "chbr/likelihood.hpp"

namespace chbr {

struct ManifestItem {
    std::string image_id;
    std::string true_class_id;
};

struct DatasetManifest {
    std::string name;
    std::vector<ClassLabel> classes;
    std::vector<ManifestItem> items;
    // Store paths, resolved against the manifest's directory when loaded from disk.
    std::string image_store;
    std::string text_store;
    std::string image_dir;  // raw images for remote mode
};

/// Every true_class_id names a class; image ids are unique.
void validate(const DatasetManifest& manifest);

nlohmann::json to_json(const DatasetManifest& manifest);
/// Relative store paths are resolved against `base_dir` when it is non-empty.
DatasetManifest manifest_from_json(const nlohmann::json& j, const std::string& base_dir = {});
DatasetManifest load_manifest(const std::string& path);
/// `image_id,true_class_id` rows; a header row with those names is skipped.
std::vector<ManifestItem> manifest_items_from_csv(const std::string& text);

double top1_accuracy(const std::vector<ClassLabel>& predictions, const std::vector<ClassLabel>& truths);
double top1_accuracy(const std::vector<std::string>& predicted_ids, const std::vector<std::string>& true_ids);

struct EvalOptions {
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::size_t workers = 1;
    PredictOptions predict;
};

struct EvalReport {
    std::string manifest_name;
    std::vector<std::uint64_t> seeds;
    std::vector<double> per_seed_accuracy;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;  // population
    // Pooled over seeds, keyed by class id in class order.
    std::vector<std::pair<std::string, double>> per_class_accuracy;
    std::size_t num_items = 0;
    nlohmann::json config;
    // predicted class ids per seed, in manifest order
    std::vector<std::vector<std::string>> predictions;
};

/// Population mean and standard deviation, accumulated left to right.
std::pair<double, double> mean_and_std(const std::vector<double>& values);

/// Fills accuracies, mean, std and per-class values from per-seed predictions.
EvalReport summarize(const DatasetManifest& manifest, const std::vector<std::uint64_t>& seeds,
                     std::vector<std::vector<std::string>> predictions, nlohmann::json config);

EvalReport run_eval(const DatasetManifest& manifest, const ConceptBank& bank, const LikelihoodSpec& spec,
                    Providers& providers, const EvalOptions& options = {});

nlohmann::json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& j);

struct RepresentativeConcept {
    std::string text;
    std::size_t sample_index = 0;
    std::size_t cluster_size = 0;
    double probability = 0.0;
};

struct ClusteringOptions {
    std::uint64_t seed = 0;
    std::size_t max_iterations = 100;
};

/// Spherical k-means with k-means++ seeding and hard assignment. Returns the
/// cluster index of each row; empty clusters never appear in the output.
std::vector<std::size_t> spherical_kmeans(const std::vector<EmbeddingVector>& points, std::size_t k,
                                          const ClusteringOptions& options);

/// Clusters the concept embeddings of one class (looked up as the concept
/// texts) and returns the member nearest each centroid with probability
/// cluster size / M, sorted by probability descending.
std::vector<RepresentativeConcept> representative_concepts(const ConceptBank& bank, const std::string& class_id,
                                                           TextEmbeddingProvider& embeddings, std::size_t k,
                                                           const ClusteringOptions& options = {});

nlohmann::json to_json(const std::vector<RepresentativeConcept>& rows);
std::vector<RepresentativeConcept> representative_concepts_from_json(const nlohmann::json& j);

}  // namespace chbr
